"""Command-line front end.

    lf run <config-file> [--out DIR] [--threads N] [--override key=value ...]
    lf classify --gamma0 X --alpha Y [--gamma2 Z --beta W --ordered ...]
    lf dispersion --gamma0 X --alpha Y [--measure ...]
    lf bench [--n N --steps K]

Exit codes: 0 all checks pass, 1 check failure, 2 numerical failure
(blow-up), 3 config error.  LF_THREADS sets the default worker count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lf",
        description="Pseudospectral solver and stability toolkit for the "
                    "generalized Navier-Stokes (living fluid) model")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured experiment")
    p_run.add_argument("config", help="experiment config file")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: LF_THREADS or 1)")
    p_run.add_argument("--override", action="append", default=[],
                       metavar="key=value", help="override a config key")

    p_cls = sub.add_parser("classify", help="print the stability report "
                                            "for one parameter point")
    for name, default, required in (
            ("gamma0", None, True), ("alpha", None, True),
            ("gamma2", 1.0, False), ("beta", 1.0, False),
            ("lambda0", 1.0, False), ("lambda1", 0.0, False)):
        p_cls.add_argument(f"--{name}", type=float, default=default,
                           required=required)
    p_cls.add_argument("--dim", type=int, default=2)
    p_cls.add_argument("--ordered", action="store_true",
                       help="classify the ordered polar state instead")

    p_disp = sub.add_parser("dispersion", help="print a growth-rate table")
    for name, default, required in (
            ("gamma0", None, True), ("alpha", None, True),
            ("gamma2", 1.0, False), ("beta", 1.0, False),
            ("lambda0", 1.0, False), ("lambda1", 0.0, False)):
        p_disp.add_argument(f"--{name}", type=float, default=default,
                            required=required)
    p_disp.add_argument("--dim", type=int, default=2)
    p_disp.add_argument("--ordered", action="store_true")
    p_disp.add_argument("--n", type=int, default=64)
    p_disp.add_argument("--box-length", type=float, default=20.0 * np.pi)
    p_disp.add_argument("--modes", type=int, default=8,
                        help="number of axis modes to tabulate")
    p_disp.add_argument("--measure", action="store_true",
                        help="also measure rates with linearized runs")
    p_disp.add_argument("--dt", type=float, default=1e-3)
    p_disp.add_argument("--t-end", type=float, default=5.0)

    p_bench = sub.add_parser("bench", help="compare the numba and numpy "
                                           "kernel paths")
    p_bench.add_argument("--n", type=int, default=64)
    p_bench.add_argument("--steps", type=int, default=200)
    return parser


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("LF_THREADS", "").strip()
    if env.isdigit() and int(env) > 0:
        return int(env)
    return 1


def _params_from_args(args):
    from .model import ModelParams
    return ModelParams(lambda0=args.lambda0, lambda1=args.lambda1,
                       alpha=args.alpha, beta=args.beta, gamma0=args.gamma0,
                       gamma2=args.gamma2, dim=args.dim)


def _cmd_run(args) -> int:
    from .config import ParseError, ValidationError, load_config
    from .experiments import run_experiment
    from .integrate import BlowUpError

    overrides = {}
    for item in args.override:
        key, sep, value = item.partition("=")
        if not sep:
            print(f"error: override {item!r} is not key=value", file=sys.stderr)
            return 3
        overrides[key.strip()] = value.strip()
    try:
        cfg = load_config(args.config, overrides)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 3
    except (ParseError, ValidationError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    try:
        report = run_experiment(cfg, out_dir=args.out, threads=_threads(args))
    except BlowUpError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    for line in report.lines():
        print(line)
    for name, path in sorted(report.files.items()):
        print(f"WROTE {name}: {path}")
    return 0 if report.passed else 1


def _cmd_classify(args) -> int:
    from .stability import classify_disordered, classify_ordered
    try:
        params = _params_from_args(args)
        report = (classify_ordered(params) if args.ordered
                  else classify_disordered(params))
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(report.to_dict()))
    return 0


def _cmd_dispersion(args) -> int:
    from .model import make_disordered_system, make_ordered_system
    from .spectral import SpectralGrid
    from .stability import growth_rate

    try:
        params = _params_from_args(args)
        grid = SpectralGrid(params.dim, args.n, args.box_length)
        system = (make_ordered_system(params) if args.ordered
                  else make_disordered_system(params))
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    modes = [tuple((m * grid.dk if a == 0 else 0.0) for a in range(params.dim))
             for m in range(1, min(args.modes, grid.n // 2 - 1) + 1)]
    measured = {}
    if args.measure:
        from .diagnostics import fit_growth
        from .experiments import _seed_modes
        from .integrate import SolverConfig, amp_label, run
        cfg = SolverConfig(dt=args.dt, t_end=args.t_end)
        initial = _seed_modes(grid, system, modes, 1e-4)
        traj = run(initial, system, grid, cfg, linearized=True,
                   tracked_wavevectors=modes)
        for k in modes:
            measured[k] = fit_growth(traj.times, traj.series[amp_label(k)]).rate
    header = f"{'|k|^2':>12}  {'predicted':>14}"
    if measured:
        header += f"  {'measured':>14}  {'rel_err':>10}"
    print(header)
    for k in modes:
        ksq = float(np.dot(k, k))
        pred = growth_rate(system, np.asarray(k))
        line = f"{ksq:12.6g}  {pred:14.8g}"
        if measured:
            rel = abs(measured[k] - pred) / max(abs(pred), 1e-12)
            line += f"  {measured[k]:14.8g}  {rel:10.3g}"
        print(line)
    return 0


def _cmd_bench(args) -> int:
    import time
    from . import _kernels
    from .model import ModelParams, make_disordered_system
    from .spectral import SpectralGrid
    from .integrate import Stepper, random_solenoidal_field, tune_allocator

    tune_allocator()
    if _kernels.NUMBA_IMPLS is None:
        print("numba unavailable; only the numpy path can run")
    params = ModelParams(1.0, 0.0, 0.1, 1.0, -1.0, 1.0, 2)
    system = make_disordered_system(params)
    grid = SpectralGrid(2, args.n, 20.0 * np.pi)
    u0 = random_solenoidal_field(grid, 1e-2, 0.5, 1)

    results = {}
    saved = {name: getattr(_kernels, name) for name in _kernels.NUMPY_IMPLS}
    for label, impls in (("numba", _kernels.NUMBA_IMPLS),
                         ("numpy", _kernels.NUMPY_IMPLS)):
        if impls is None:
            continue
        for name, fn in impls.items():
            setattr(_kernels, name, fn)
        stepper = Stepper(system, grid, dt=5e-3)
        uh = stepper.from_state(u0)
        for i in range(10):
            uh = stepper.step(uh, 0.0)
        t0 = time.perf_counter()
        for i in range(args.steps):
            uh = stepper.step(uh, i * 5e-3)
        results[label] = (time.perf_counter() - t0) / args.steps
    for name, fn in saved.items():
        setattr(_kernels, name, fn)

    print(f"grid {args.n}^2, {args.steps} ETDRK4 steps per path")
    for label, per in results.items():
        print(f"  {label:>6}: {per * 1e3:8.3f} ms/step "
              f"({1.0 / per:8.1f} steps/s)")
    if len(results) == 2:
        print(f"  speedup (numpy/numba): "
              f"{results['numpy'] / results['numba']:.2f}x")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cmd = {"run": _cmd_run, "classify": _cmd_classify,
           "dispersion": _cmd_dispersion, "bench": _cmd_bench}[args.command]
    return cmd(args)


if __name__ == "__main__":
    sys.exit(main())
