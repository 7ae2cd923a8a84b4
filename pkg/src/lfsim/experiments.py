"""Canned experiment suite: dispersion checks, phase diagrams, decay
certificates, instability demonstrations, contractivity, free runs.

Every experiment writes a diagnostics CSV (and its own result tables) into
the output directory and returns an ExperimentReport whose checks each cite
a number present in the emitted files.  Runs are deterministic for a fixed
config (including the seed).
"""

from __future__ import annotations

import csv
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, ExperimentKind
from .diagnostics import (budget_series, check_decay_bound, fit_growth,
                          integrated_identity_residual)
from .integrate import (SolverConfig, Trajectory, amp_label, run,
                        random_solenoidal_field, single_mode_field)
from .model import StateKind, TransformedSystem
from .spectral import SpectralGrid, write_snapshot
from .stability import (growth_rate, phase_diagram, unstable_band,
                        write_dispersion_csv, write_phase_diagram_csv)

__all__ = ["Check", "ExperimentReport", "run_experiment",
           "write_diagnostics_csv", "FIXED_DIAG_COLUMNS"]

FIXED_DIAG_COLUMNS = ["t", "l2_norm_sq", "l4_norm_4", "grad_norm_sq",
                      "lap_norm_sq", "energy_residual", "div_residual"]
EXTRA_DIAG_COLUMNS = ["m_form", "ordered_proj_sq", "n_inner", "f_inner"]

LINEARIZED_RATE_TOL = 1e-3
NONLINEAR_RATE_TOL = 5e-2
ENERGY_RESIDUAL_TOL = 1e-6
IDENTITY_TOL = 1e-6
MONOTONE_SLACK = 1e-10
LINEAR_WINDOW = (2.0, 10.0)   # fit window in units of the initial amplitude


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    comparator: str   # "<=" or ">="
    passed: bool


def _check(name: str, value: float, threshold: float, comparator: str = "<=") -> Check:
    ok = value <= threshold if comparator == "<=" else value >= threshold
    return Check(name, float(value), float(threshold), comparator, bool(ok))


@dataclass
class ExperimentReport:
    experiment: str
    passed: bool
    checks: list[Check]
    files: dict[str, str] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = []
        for c in self.checks:
            out.append(f"CHECK {c.name}: value={c.value:.6g} "
                       f"{c.comparator} {c.threshold:.6g} -> "
                       f"{'PASS' if c.passed else 'FAIL'}")
        for note in self.notes:
            out.append(f"NOTE {note}")
        out.append(f"RESULT {self.experiment}: "
                   f"{'PASS' if self.passed else 'FAIL'}")
        return out


# --------------------------------------------------------------------------
# Output writers
# --------------------------------------------------------------------------

def write_diagnostics_csv(path, traj: Trajectory) -> None:
    """Diagnostic series with the energy-budget residual filled per sample."""
    if len(traj.times) >= 5:
        residual = np.array([b.residual for b in budget_series(traj)])
    else:
        residual = np.full(len(traj.times), math.nan)
    amp_cols = [amp_label(k) for k in traj.tracked]
    header = FIXED_DIAG_COLUMNS + amp_cols + EXTRA_DIAG_COLUMNS
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, t in enumerate(traj.times):
            row = [t, traj.series["l2_norm_sq"][i], traj.series["l4_norm_4"][i],
                   traj.series["grad_norm_sq"][i], traj.series["lap_norm_sq"][i],
                   residual[i], traj.series["div_residual"][i]]
            row += [traj.series[c][i] for c in amp_cols]
            row += [traj.series[c][i] for c in EXTRA_DIAG_COLUMNS]
            writer.writerow(["%.17g" % v for v in row])


def write_report_csv(path, checks: list[Check]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check", "value", "comparator", "threshold", "passed"])
        for c in checks:
            writer.writerow([c.name, "%.17g" % c.value, c.comparator,
                             "%.17g" % c.threshold, str(c.passed).lower()])


def _outdir(cfg: ExperimentConfig, override: str | None) -> str:
    base = override if override else cfg.output_dir
    path = os.path.join(base, cfg.experiment.value)
    os.makedirs(path, exist_ok=True)
    return path


# --------------------------------------------------------------------------
# Mode selection helpers
# --------------------------------------------------------------------------

def _lattice_rates(system: TransformedSystem, grid: SpectralGrid) -> np.ndarray:
    p = system.params
    scalar = p.gamma2 * grid.ksq**2 + p.gamma0 * grid.ksq
    if system.scalar_m is not None:
        return -(scalar + system.scalar_m)
    if grid.dim == 2:
        knorm = np.sqrt(np.where(grid.ksq > 0, grid.ksq, 1.0))
        vdot = (system.V[0] * (-grid.k[1]) + system.V[1] * grid.k[0]) / knorm
        mu = np.where(grid.ksq > 0, 2.0 * p.beta * vdot**2, 0.0)
    else:
        mu = np.zeros_like(grid.ksq)
    return -(scalar + mu)


def _default_instability_modes(system: TransformedSystem, grid: SpectralGrid,
                               count: int = 3) -> list[tuple[float, ...]]:
    """The `count` fastest-growing lattice modes (one per +-k pair)."""
    rates = _lattice_rates(system, grid)
    m = grid.mode_numbers
    # one representative per conjugate pair, skip k=0 and Nyquist rows
    first_nonzero = np.zeros(grid.shape, dtype=np.int64)
    seen = np.zeros(grid.shape, dtype=bool)
    for a in range(grid.dim):
        pick = (~seen) & (m[a] != 0)
        first_nonzero[pick] = np.sign(m[a][pick])
        seen |= m[a] != 0
    canonical = seen & (first_nonzero > 0) & np.all(np.abs(m) < grid.n // 2, axis=0)
    flat_rates = np.where(canonical, rates, -np.inf).ravel()
    order = np.argsort(flat_rates)[::-1]
    modes = []
    for idx in order[: count]:
        if not np.isfinite(flat_rates[idx]):
            break
        pos = np.unravel_index(idx, grid.shape)
        modes.append(tuple(float(grid.k[(a,) + pos]) for a in range(grid.dim)))
    return modes


def _polarization(system: TransformedSystem, k: np.ndarray) -> np.ndarray:
    """Unit polarization orthogonal to k; for the polar state the direction
    with zero M eigenvalue (perpendicular to V as well, when possible)."""
    d = len(k)
    if d == 2:
        pol = np.array([-k[1], k[0]])
        return pol / np.linalg.norm(pol)
    V = system.V
    if np.any(V):
        cand = np.cross(V, k)
        if np.linalg.norm(cand) > 1e-12 * np.linalg.norm(k) * np.linalg.norm(V):
            return cand / np.linalg.norm(cand)
    trial = np.zeros(3)
    trial[int(np.argmin(np.abs(k)))] = 1.0
    cand = np.cross(k, trial)
    return cand / np.linalg.norm(cand)


def _seed_modes(grid: SpectralGrid, system: TransformedSystem,
                modes: list[tuple[float, ...]], amplitude: float):
    field_ = None
    for k in modes:
        pol = _polarization(system, np.asarray(k, dtype=float))
        f = single_mode_field(grid, k, pol, amplitude)
        field_ = f if field_ is None else type(f)(grid, field_.coeffs + f.coeffs)
    return field_


def _linear_window(times, amps, a0: float) -> tuple[float, float]:
    """Time window where the mode amplitude sits in [2, 10] * a0, taken on
    the first growth transit (before any saturation recurrence)."""
    lo, hi = LINEAR_WINDOW[0] * a0, LINEAR_WINDOW[1] * a0
    above_hi = np.nonzero(amps > hi)[0]
    end = above_hi[0] if len(above_hi) else len(amps)
    sel = np.nonzero(amps[:end] >= lo)[0]
    if len(sel) < 10:
        raise ValueError(
            "no usable linear-regime window: the tracked mode never grew "
            f"through [{lo:.3g}, {hi:.3g}] with >= 10 samples")
    return float(times[sel[0]]), float(times[min(end - 1, sel[-1])])


# --------------------------------------------------------------------------
# Experiments
# --------------------------------------------------------------------------

def _run_dispersion(cfg: ExperimentConfig, out: str) -> ExperimentReport:
    grid = cfg.make_grid()
    system = cfg.make_system()
    tracked = cfg.tracked_wavevectors
    if not tracked:
        dk = grid.dk
        tracked = [tuple((m * dk if a == 0 else 0.0) for a in range(grid.dim))
                   for m in (1, 2, 3, 4, 5, 6)]
    initial = _seed_modes(grid, system, tracked, cfg.amplitude)
    traj = run(initial, system, grid, cfg.solver, linearized=True,
               tracked_wavevectors=tracked)
    rows = []
    worst = 0.0
    for k in tracked:
        predicted = growth_rate(system, np.asarray(k))
        fit = fit_growth(traj.times, traj.series[amp_label(k)], wavevector=k)
        rel = abs(fit.rate - predicted) / max(abs(predicted), 1e-12)
        worst = max(worst, rel)
        rows.append({"k": k, "ksq": float(np.dot(k, k)),
                     "predicted_rate": "%.17g" % predicted,
                     "measured_rate": "%.17g" % fit.rate,
                     "rel_error": "%.6g" % rel,
                     "r_squared": "%.12g" % fit.r_squared})
    files = {"rates": os.path.join(out, "rates.csv"),
             "diagnostics": os.path.join(out, "diagnostics.csv")}
    write_dispersion_csv(files["rates"], rows)
    write_diagnostics_csv(files["diagnostics"], traj)
    checks = [_check("max_rate_rel_error", worst, LINEARIZED_RATE_TOL)]
    return _finish(cfg, out, checks, files)


def _run_phase_diagram(cfg: ExperimentConfig, out: str, threads: int
                       ) -> ExperimentReport:
    pr = cfg.phase_ranges
    res = int(pr["resolution"])
    g0s = np.linspace(pr["gamma0_min"], pr["gamma0_max"], res)

    def one_row(g0):
        diag = phase_diagram(cfg.params, (g0, g0), (pr["alpha_min"],
                                                    pr["alpha_max"]), (2, res))
        return diag.disordered[0], diag.ordered[0]

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(one_row, g0s))

    diag = phase_diagram(cfg.params, (pr["gamma0_min"], pr["gamma0_max"]),
                         (pr["alpha_min"], pr["alpha_max"]), (res, res))
    # the threaded rows must agree with the direct evaluation (pure functions)
    mismatches = sum(
        1 for i in range(res) for j in range(res)
        if rows[i][0][j].classification
        is not diag.disordered[i][j].classification)

    # classification flips only across the analytic boundary curves
    violations = 0
    for i, g0 in enumerate(diag.gamma0):
        boundary = (g0 * g0 / (4.0 * cfg.params.gamma2)) if g0 < 0 else 0.0
        for j in range(res - 1):
            a_lo, a_hi = diag.alpha[j], diag.alpha[j + 1]
            c_lo = diag.disordered[i][j].classification
            c_hi = diag.disordered[i][j + 1].classification
            if c_lo is not c_hi and not (a_lo <= boundary <= a_hi):
                violations += 1

    files = {"phase_disordered": os.path.join(out, "phase_disordered.csv"),
             "phase_ordered": os.path.join(out, "phase_ordered.csv")}
    write_phase_diagram_csv(files["phase_disordered"], diag, "disordered")
    write_phase_diagram_csv(files["phase_ordered"], diag, "ordered")
    checks = [_check("threaded_vs_direct_mismatches", mismatches, 0),
              _check("boundary_crossing_violations", violations, 0)]
    return _finish(cfg, out, checks, files)


def _run_nonlinear_decay(cfg: ExperimentConfig, out: str) -> ExperimentReport:
    grid = cfg.make_grid()
    system = cfg.make_system()
    initial = random_solenoidal_field(grid, cfg.amplitude, cfg.spectrum_scale,
                                      cfg.solver.seed)
    traj = run(initial, system, grid, cfg.solver,
               tracked_wavevectors=cfg.tracked_wavevectors)
    report = check_decay_bound(traj.times, traj.series["l2_norm_sq"],
                               cfg.params, system.kind)
    res = _max_energy_residual(traj)
    files = {"diagnostics": os.path.join(out, "diagnostics.csv")}
    write_diagnostics_csv(files["diagnostics"], traj)
    checks = [_check("decay_margin", report.margin, 0.0, ">="),
              _check("max_energy_residual", res, ENERGY_RESIDUAL_TOL)]
    note = [f"envelope rate on ||u||^2: {report.rate:.6g}"]
    return _finish(cfg, out, checks, files, note)


def _max_energy_residual(traj: Trajectory) -> float:
    budgets = budget_series(traj)
    return max(b.residual / max(1.0, b.kinetic) for b in budgets)


def _run_instability(cfg: ExperimentConfig, out: str) -> ExperimentReport:
    grid = cfg.make_grid()
    system = cfg.make_system()
    tracked = cfg.tracked_wavevectors or _default_instability_modes(system, grid)
    initial = _seed_modes(grid, system, tracked, cfg.amplitude)
    traj = run(initial, system, grid, cfg.solver, tracked_wavevectors=tracked)

    predictions = {k: growth_rate(system, np.asarray(k)) for k in tracked}
    best = max(tracked, key=lambda k: predictions[k])
    predicted = predictions[best]
    amps = traj.series[amp_label(best)]
    a0 = amps[0]
    window = _linear_window(traj.times, amps, a0)
    fit = fit_growth(traj.times, amps, window=window, wavevector=best)
    rel = abs(fit.rate - predicted) / max(abs(predicted), 1e-12)

    kinetic = 0.5 * traj.series["l2_norm_sq"]
    tail = kinetic[traj.times >= 0.75 * traj.times[-1]]
    saturation = float(np.mean(tail))

    files = {"diagnostics": os.path.join(out, "diagnostics.csv"),
             "rates": os.path.join(out, "rates.csv"),
             "final_snapshot": os.path.join(out, "final.lfsnap")}
    write_diagnostics_csv(files["diagnostics"], traj)
    rows = [{"k": k, "ksq": float(np.dot(k, k)),
             "predicted_rate": "%.17g" % predictions[k],
             "measured_rate": "%.17g" % (fit.rate if k == best else math.nan),
             "rel_error": "%.6g" % (rel if k == best else math.nan),
             "r_squared": "%.12g" % (fit.r_squared if k == best else math.nan)}
            for k in tracked]
    write_dispersion_csv(files["rates"], rows)
    write_snapshot(files["final_snapshot"], grid,
                   traj.final.u_hat.to_physical(), traj.final.t)

    checks = [_check("growth_rate_rel_error", rel, NONLINEAR_RATE_TOL),
              _check("final_kinetic_finite", float(kinetic[-1]),
                     float(np.inf), "<=")]
    if system.kind is StateKind.DISORDERED:
        checks.append(_check("max_energy_residual", _max_energy_residual(traj),
                             ENERGY_RESIDUAL_TOL))
    notes = [f"fitted over t in [{window[0]:.4g}, {window[1]:.4g}] "
             f"(amplitudes within {LINEAR_WINDOW[0]:g}..{LINEAR_WINDOW[1]:g} "
             f"of the initial {a0:.3g})",
             f"saturation-phase mean kinetic energy: {saturation:.6g}"]
    return _finish(cfg, out, checks, files, notes)


def _run_contractivity(cfg: ExperimentConfig, out: str) -> ExperimentReport:
    if cfg.params.gamma0 < 0:
        raise ValueError("contractivity requires gamma0 >= 0 (the ordered "
                         "state is exponentially unstable for gamma0 < 0)")
    grid = cfg.make_grid()
    system = cfg.make_system()
    solver = cfg.solver
    if solver.diagnostics_interval is None:
        # trapezoidal identity quadrature wants the finest cadence
        solver = SolverConfig(solver.dt, solver.t_end, solver.scheme,
                              solver.snapshot_interval, solver.dt, solver.seed)
    initial = random_solenoidal_field(grid, cfg.amplitude, cfg.spectrum_scale,
                                      solver.seed)
    traj = run(initial, system, grid, solver, linearized=True,
               tracked_wavevectors=cfg.tracked_wavevectors)
    l2 = traj.series["l2_norm_sq"]
    growth = float(np.max(np.diff(l2)) / l2[0]) if len(l2) > 1 else 0.0
    identity = integrated_identity_residual(traj)
    files = {"diagnostics": os.path.join(out, "diagnostics.csv")}
    write_diagnostics_csv(files["diagnostics"], traj)
    checks = [_check("max_l2_increase_rel", growth, MONOTONE_SLACK),
              _check("integrated_identity_residual", identity, IDENTITY_TOL)]
    return _finish(cfg, out, checks, files)


def _run_free(cfg: ExperimentConfig, out: str) -> ExperimentReport:
    grid = cfg.make_grid()
    system = cfg.make_system()
    solver = cfg.solver
    if solver.snapshot_interval is None:
        solver = SolverConfig(solver.dt, solver.t_end, solver.scheme,
                              solver.t_end / 5.0, solver.diagnostics_interval,
                              solver.seed)
    initial = random_solenoidal_field(grid, cfg.amplitude, cfg.spectrum_scale,
                                      solver.seed)
    traj = run(initial, system, grid, solver, collect_snapshots=True,
               tracked_wavevectors=cfg.tracked_wavevectors)
    files = {"diagnostics": os.path.join(out, "diagnostics.csv")}
    write_diagnostics_csv(files["diagnostics"], traj)
    for t, snap in zip(traj.snapshot_times, traj.snapshots):
        name = f"snap_{t:012.6f}.lfsnap"
        files[name] = os.path.join(out, name)
        write_snapshot(files[name], grid, snap, t)
    kinetic_final = 0.5 * traj.series["l2_norm_sq"][-1]
    checks = [_check("final_kinetic_finite", kinetic_final, float(np.inf))]
    return _finish(cfg, out, checks, files)


def _finish(cfg: ExperimentConfig, out: str, checks: list[Check],
            files: dict[str, str], notes: list[str] | None = None
            ) -> ExperimentReport:
    files = dict(files)
    files["report"] = os.path.join(out, "report.csv")
    write_report_csv(files["report"], checks)
    return ExperimentReport(
        experiment=cfg.experiment.value,
        passed=all(c.passed for c in checks),
        checks=checks, files=files, notes=list(notes or []))


def _band_coverage_warning(cfg: ExperimentConfig) -> str | None:
    """Warn when the box is too small for the unstable band to hold at
    least 3 lattice wavenumbers."""
    band = unstable_band(cfg.params)
    if not band.has_band:
        return None
    grid = cfg.make_grid()
    ksq = grid.ksq.ravel()
    count = int(np.count_nonzero((ksq > band.s_minus_sq)
                                 & (ksq < band.s_plus_sq)))
    if count >= 3:
        return None
    return (f"unstable band ({band.s_minus_sq:.4g}, {band.s_plus_sq:.4g}) in "
            f"|k|^2 contains only {count} lattice wavenumbers; increase the "
            "box length")


def run_experiment(cfg: ExperimentConfig, *, out_dir: str | None = None,
                   threads: int = 1) -> ExperimentReport:
    out = _outdir(cfg, out_dir)
    warning = _band_coverage_warning(cfg)
    if warning is not None:
        print(f"WARNING {warning}", file=sys.stderr)
    kind = cfg.experiment
    if kind is ExperimentKind.DISPERSION:
        return _run_dispersion(cfg, out)
    if kind is ExperimentKind.PHASE_DIAGRAM:
        return _run_phase_diagram(cfg, out, threads)
    if kind is ExperimentKind.NONLINEAR_DECAY:
        return _run_nonlinear_decay(cfg, out)
    if kind in (ExperimentKind.DISORDERED_INSTABILITY,
                ExperimentKind.ORDERED_INSTABILITY):
        return _run_instability(cfg, out)
    if kind is ExperimentKind.ORDERED_CONTRACTIVITY:
        return _run_contractivity(cfg, out)
    return _run_free(cfg, out)
