"""Time integration of the transformed system in Fourier space.

The stiff diagonal part Gamma2|k|^4 + Gamma0|k|^2 is treated exactly through
the ETDRK4 integrating factor (Cox & Matthews 2002, with the coefficient
evaluation of Kassam & Trefethen 2005: Taylor series near z = 0, direct
formulas elsewhere).  Everything else is explicit: the zeroth-order matrix M,
the constant drift i*lambda0*(V.k), the dealiased quadratic/cubic products,
and the optional forcing.  Every tendency is Leray-projected, and the state
is re-projected after each step, so solenoidality holds to roundoff.

Products are evaluated on a factor-2 zero-padded lattice (exact for both
quadratic and cubic terms).  Quadratic advection is computed in rotational
form -u x (curl u); its Leray projection equals that of the convective form
exactly under these padded products.  States evolve in the Nyquist-free band
(the unpaired m = N/2 slot stays zero), which removes the sign ambiguity of
odd derivatives on that mode.

A first-order IMEX Euler scheme is included for cross-checks.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .model import TransformedSystem
from .spectral import (
    SpectralField,
    SpectralGrid,
    dealiased_product,
    from_half,
    gradient_coeffs,
    pad_spectrum,
    project_coeffs,
    to_half,
    truncate_spectrum,
    zero_nyquist,
)

__all__ = [
    "SolverConfig",
    "SolverState",
    "Trajectory",
    "BlowUpError",
    "Stepper",
    "nonlinear_rhs",
    "step",
    "run",
    "random_solenoidal_field",
    "single_mode_field",
    "recover_pressure",
    "PressureFields",
]

SCHEMES = ("etdrk4", "imex_euler")

_ALLOCATOR_TUNED = False


def tune_allocator() -> bool:
    """Raise glibc's mmap/trim thresholds so FFT work buffers are recycled.

    numpy.fft allocates its outputs afresh each call; with default glibc
    settings those ~MB blocks are returned to the kernel on free and
    re-faulted on the next step, which costs more than the transforms
    themselves in the solver loop (measured ~3.5x).  Harmless elsewhere: the
    process simply keeps its small high-water mark.  Set LF_NO_MALLOC_TUNING=1
    to skip; silently a no-op off glibc.
    """
    global _ALLOCATOR_TUNED
    if _ALLOCATOR_TUNED:
        return True
    if os.environ.get("LF_NO_MALLOC_TUNING", "").strip().lower() in (
            "1", "true", "yes", "on"):
        return False
    try:
        import ctypes
        libc = ctypes.CDLL("libc.so.6")
        m_mmap_threshold, m_trim_threshold = -3, -1
        libc.mallopt(m_mmap_threshold, 32 * 1024 * 1024)
        libc.mallopt(m_trim_threshold, 32 * 1024 * 1024)
        _ALLOCATOR_TUNED = True
    except Exception:
        return False
    return True


def _irfft_spatial(arr: np.ndarray, n_out: int, dim: int) -> np.ndarray:
    """Half-spectrum -> real samples, one axis at a time.

    numpy's irfftn routes these batched shapes through a slow path; applying
    ifft per row axis and irfft on the last axis is ~4x faster and identical.
    """
    for ax in range(arr.ndim - dim, arr.ndim - 1):
        arr = np.fft.ifft(arr, axis=ax, norm="forward")
    return np.fft.irfft(arr, n=n_out, axis=-1, norm="forward")


def _rfft_spatial(arr: np.ndarray, dim: int) -> np.ndarray:
    """Real samples -> half-spectrum, one axis at a time (see _irfft_spatial)."""
    out = np.fft.rfft(arr, axis=-1, norm="forward")
    for ax in range(out.ndim - dim, out.ndim - 1):
        out = np.fft.fft(out, axis=ax, norm="forward")
    return out


class BlowUpError(RuntimeError):
    """Non-finite coefficients encountered.

    The continuous model has global-in-time solutions for any parameters with
    gamma2, beta > 0, so a blow-up always indicates a numerical-resolution
    failure (dt or N too coarse), never a model failure.
    """

    def __init__(self, t: float, last_state: "SolverState | None" = None):
        super().__init__(
            f"solution lost finiteness at t={t:.6g}; the model is globally "
            "wellposed, so this is a numerical-resolution failure - reduce dt "
            "or increase the grid resolution")
        self.t = t
        self.last_state = last_state


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_end: float
    scheme: str = "etdrk4"
    snapshot_interval: float | None = None
    diagnostics_interval: float | None = None  # defaults to 10*dt
    seed: int = 12345

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not (self.t_end > 0 and np.isfinite(self.t_end)):
            raise ValueError(f"t_end must be > 0, got {self.t_end}")
        if self.dt > self.t_end:
            raise ValueError(f"dt={self.dt} exceeds t_end={self.t_end}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        for name in ("snapshot_interval", "diagnostics_interval"):
            value = getattr(self, name)
            if value is not None and value < self.dt:
                raise ValueError(f"{name}={value} must be >= dt={self.dt}")

    @property
    def effective_diag_interval(self) -> float:
        return self.diagnostics_interval if self.diagnostics_interval is not None \
            else 10.0 * self.dt


@dataclass
class SolverState:
    t: float
    u_hat: SpectralField
    system: TransformedSystem
    grid: SpectralGrid


@dataclass
class Trajectory:
    """Sampled output of `run`: diagnostic series plus optional snapshots."""

    grid: SpectralGrid
    system: TransformedSystem
    config: SolverConfig
    linearized: bool
    tracked: list[tuple[float, ...]]
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    series: dict[str, np.ndarray] = field(default_factory=dict)
    snapshot_times: list[float] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)
    final: SolverState | None = None

    def amp_label(self, k: Sequence[float]) -> str:
        return amp_label(k)


def amp_label(k: Sequence[float]) -> str:
    return "amp_" + "_".join("%g" % float(c) for c in k)


# --------------------------------------------------------------------------
# phi functions for the exponential integrator
# --------------------------------------------------------------------------

_PHI_TERMS = 14


def _phi(z: np.ndarray, j: int) -> np.ndarray:
    """phi_j(z) = sum_m z^m / (m+j)!, evaluated stably for real z.

    Taylor series below |z| = 0.5 (the Kassam-Trefethen cancellation region),
    expm1-based direct formulas elsewhere.
    """
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 0.5
    zs = z[small]
    acc = np.full_like(zs, 1.0 / math.factorial(_PHI_TERMS - 1 + j))
    for m in range(_PHI_TERMS - 2, -1, -1):
        acc = acc * zs + 1.0 / math.factorial(m + j)
    out[small] = acc
    zl = z[~small]
    e = np.expm1(zl)
    if j == 1:
        out[~small] = e / zl
    elif j == 2:
        out[~small] = (e - zl) / zl**2
    else:
        out[~small] = (e - zl - 0.5 * zl**2) / zl**3
    return out


# --------------------------------------------------------------------------
# Stepper
# --------------------------------------------------------------------------

class Stepper:
    """ETDRK4 / IMEX-Euler stepper operating on half-spectrum flat arrays.

    The internal state layout is the rfft half-spectrum flattened to
    (dim, n_modes); `to_state`/`from_state` convert to the public
    full-lattice SpectralField.
    """

    def __init__(self, system: TransformedSystem, grid: SpectralGrid, dt: float,
                 scheme: str = "etdrk4", linearized: bool = False,
                 forcing: Callable[[float], SpectralField] | None = None):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        if system.params.dim != grid.dim:
            raise ValueError("system and grid dimensions disagree")
        tune_allocator()
        self.system = system
        self.grid = grid
        self.dt = float(dt)
        self.scheme = scheme
        self.linearized = bool(linearized)
        self.forcing = forcing

        p = system.params
        d = grid.dim
        n = grid.n
        self.half_shape = grid.half_shape
        self.n_modes = int(np.prod(self.half_shape))
        M = self.n_modes

        self.k_flat = np.ascontiguousarray(grid.k_half.reshape(d, M))
        self.ksq_flat = np.ascontiguousarray(grid.ksq_half.reshape(M))
        kd_flat = grid.k_deriv_half.reshape(d, M)
        self.kv = np.ascontiguousarray(
            p.lambda0 * np.einsum("a,am->m", system.V, kd_flat))
        self.Mmat = np.ascontiguousarray(system.M)

        lin = p.gamma2 * self.ksq_flat**2 + p.gamma0 * self.ksq_flat
        max_band_growth = float(max(0.0, np.max(-lin)))
        if self.dt * max_band_growth > 0.1:
            warnings.warn(
                f"dt * max linear growth = {self.dt * max_band_growth:.3g} "
                "> 0.1; the integrating factor amplifies band modes strongly "
                "per step - consider a smaller dt", RuntimeWarning,
                stacklevel=2)
        z = -self.dt * lin
        self.E = np.exp(z)
        self.E2 = np.exp(0.5 * z)
        self.Q = self.dt * 0.5 * _phi(0.5 * z, 1)
        self.f1 = self.dt * (_phi(z, 1) - 3.0 * _phi(z, 2) + 4.0 * _phi(z, 3))
        self.f2 = self.dt * (_phi(z, 2) - 2.0 * _phi(z, 3))
        self.f3 = self.dt * (4.0 * _phi(z, 3) - _phi(z, 2))
        self.imex_div = 1.0 / (1.0 + self.dt * lin)

        # fine (factor-2) lattice for dealiased products
        self.nf = 2 * n
        self.fine_half_shape = (self.nf,) * (d - 1) + (self.nf // 2 + 1,)
        self.n_fine = self.nf**d
        ncurl = 1 if d == 2 else 3
        self._pad_buf = np.zeros((d + ncurl,) + self.fine_half_shape, np.complex128)
        self._G_half = np.zeros((d,) + self.half_shape, np.complex128)
        self._G_flat = self._G_half.reshape(d, M)
        self._Gp = np.empty((d, self.n_fine))
        self._zero_G = np.zeros((d, M), np.complex128)
        self._quad = np.ascontiguousarray(system.quad_coeffs)
        self._has_quad = system.has_quadratic and not self.linearized
        self._spatial_axes = tuple(range(1, d + 1))

        self._rhs_bufs = [np.empty((d, M), np.complex128) for _ in range(4)]
        self._stage_bufs = [np.empty((d, M), np.complex128) for _ in range(3)]
        self._out_bufs = [np.empty((d, M), np.complex128) for _ in range(2)]
        self._out_ix = 0

    # -- state conversion ---------------------------------------------------

    def from_state(self, u_hat: SpectralField) -> np.ndarray:
        coeffs = zero_nyquist(self.grid, u_hat.coeffs.copy())
        return np.ascontiguousarray(
            to_half(self.grid, coeffs).reshape(self.grid.dim, self.n_modes))

    def to_state(self, uh_flat: np.ndarray) -> SpectralField:
        half = uh_flat.reshape((self.grid.dim,) + self.half_shape)
        return SpectralField(self.grid, from_half(self.grid, half))

    def physical(self, uh_flat: np.ndarray) -> np.ndarray:
        half = uh_flat.reshape((self.grid.dim,) + self.half_shape)
        return _irfft_spatial(half, self.grid.n, self.grid.dim)

    # -- dealiased products on the fine lattice ------------------------------

    def _curl_half(self, uh: np.ndarray) -> np.ndarray:
        kd = self.grid.k_deriv_half
        if self.grid.dim == 2:
            return (1j * (kd[0] * uh[1] - kd[1] * uh[0]))[None]
        return np.stack([
            1j * (kd[1] * uh[2] - kd[2] * uh[1]),
            1j * (kd[2] * uh[0] - kd[0] * uh[2]),
            1j * (kd[0] * uh[1] - kd[1] * uh[0]),
        ])

    def _pad_blocks(self, src: np.ndarray) -> None:
        """Copy the coarse band of src into the zeroed fine-lattice buffer."""
        n, nf, h = self.grid.n, self.nf, self.grid.n // 2
        dst = self._pad_buf
        lo = slice(0, h)
        hi_src = slice(h + 1, n)
        hi_dst = slice(nf - h + 1, nf)
        cols = slice(0, h)  # Nyquist column stays zero
        if self.grid.dim == 2:
            dst[:, lo, cols] = src[:, lo, cols]
            dst[:, hi_dst, cols] = src[:, hi_src, cols]
        else:
            for d0, s0 in ((lo, lo), (hi_dst, hi_src)):
                for d1, s1 in ((lo, lo), (hi_dst, hi_src)):
                    dst[:, d0, d1, cols] = src[:, s0, s1, cols]

    def _truncate_blocks(self, fine: np.ndarray) -> None:
        """Copy the coarse band of the fine-lattice result into _G_half."""
        n, nf, h = self.grid.n, self.nf, self.grid.n // 2
        dst = self._G_half
        lo = slice(0, h)
        hi_dst = slice(h + 1, n)
        hi_src = slice(nf - h + 1, nf)
        cols = slice(0, h)
        if self.grid.dim == 2:
            dst[:, lo, cols] = fine[:, lo, cols]
            dst[:, hi_dst, cols] = fine[:, hi_src, cols]
        else:
            for d0, s0 in ((lo, lo), (hi_dst, hi_src)):
                for d1, s1 in ((lo, lo), (hi_dst, hi_src)):
                    dst[:, d0, d1, cols] = fine[:, s0, s1, cols]

    def fine_physical(self, uh_flat: np.ndarray) -> np.ndarray:
        """Physical samples of u on the factor-2 lattice, shape (dim, nf^dim)."""
        d = self.grid.dim
        uh = uh_flat.reshape((d,) + self.half_shape)
        # pad only the velocity block; the curl slots are unused here
        n, nf, h = self.grid.n, self.nf, self.grid.n // 2
        buf = self._pad_buf[:d]
        lo, hi_src, hi_dst = slice(0, h), slice(h + 1, n), slice(nf - h + 1, nf)
        cols = slice(0, h)
        if d == 2:
            buf[:, lo, cols] = uh[:, lo, cols]
            buf[:, hi_dst, cols] = uh[:, hi_src, cols]
        else:
            for d0, s0 in ((lo, lo), (hi_dst, hi_src)):
                for d1, s1 in ((lo, lo), (hi_dst, hi_src)):
                    buf[:, d0, d1, cols] = uh[:, s0, s1, cols]
        phys = _irfft_spatial(buf, nf, d)
        return phys.reshape(d, self.n_fine)

    def _nonlinear_G(self, uh_flat: np.ndarray) -> np.ndarray:
        """Transforms of lam0*(u.grad)u + beta|u|^2 u - N(u), coarse band."""
        d = self.grid.dim
        p = self.system.params
        uh = uh_flat.reshape((d,) + self.half_shape)
        om = self._curl_half(uh)
        self._pad_blocks(np.concatenate([uh, om]))
        phys = _irfft_spatial(self._pad_buf, self.nf, d)
        flat = phys.reshape(phys.shape[0], self.n_fine)
        products = _kernels.products_2d if d == 2 else _kernels.products_3d
        products(flat[:d], flat[d:], p.lambda0, p.beta, self._quad,
                 self._has_quad, self._Gp)
        G_fine = _rfft_spatial(self._Gp.reshape((d,) + (self.nf,) * d), d)
        self._truncate_blocks(G_fine)
        return self._G_flat

    # -- tendency and steps ---------------------------------------------------

    def rhs(self, uh_flat: np.ndarray, t: float, out: np.ndarray) -> np.ndarray:
        """Explicit tendency -P[lam0 (u.grad)u + M u + beta|u|^2 u - N(u)]
        - i lam0 (V.k) u + P f."""
        G = self._zero_G if self.linearized else self._nonlinear_G(uh_flat)
        _kernels.assemble_rhs(G, uh_flat, self.Mmat, self.k_flat,
                              self.ksq_flat, self.kv, out)
        if self.forcing is not None:
            out += self._forcing_half(t)
        return out

    def _forcing_half(self, t: float) -> np.ndarray:
        f = self.forcing(t)
        coeffs = f.coeffs if isinstance(f, SpectralField) else np.asarray(f)
        coeffs = project_coeffs(self.grid, coeffs)
        return to_half(self.grid, coeffs).reshape(self.grid.dim, self.n_modes)

    def step(self, uh_flat: np.ndarray, t: float) -> np.ndarray:
        if self.scheme == "etdrk4":
            out = self._step_etdrk4(uh_flat, t)
        else:
            out = self._step_imex(uh_flat, t)
        _kernels.leray(out, self.k_flat, self.ksq_flat)
        return out

    def _step_etdrk4(self, u: np.ndarray, t: float) -> np.ndarray:
        h = self.dt
        N0, Na, Nb, Nc = self._rhs_bufs
        A, B, C = self._stage_bufs
        self.rhs(u, t, N0)
        _kernels.stage_combine(self.E2, u, self.Q, N0, A)
        self.rhs(A, t + 0.5 * h, Na)
        _kernels.stage_combine(self.E2, u, self.Q, Na, B)
        self.rhs(B, t + 0.5 * h, Nb)
        np.subtract(2.0 * Nb, N0, out=Nc)  # Nc reused as scratch for 2*Nb - N0
        _kernels.stage_combine(self.E2, A, self.Q, Nc, C)
        self.rhs(C, t + h, Nc)
        out = self._out_bufs[self._out_ix]
        self._out_ix ^= 1
        _kernels.etdrk4_final(self.E, u, self.f1, N0, self.f2, Na, Nb,
                              self.f3, Nc, out)
        return out

    def _step_imex(self, u: np.ndarray, t: float) -> np.ndarray:
        N0 = self._rhs_bufs[0]
        self.rhs(u, t, N0)
        out = self._out_bufs[self._out_ix]
        self._out_ix ^= 1
        np.multiply(self.imex_div, u + self.dt * N0, out=out)
        return out


def nonlinear_rhs(state: SolverState, *, linearized: bool = False,
                  forcing: Callable[[float], SpectralField] | None = None
                  ) -> SpectralField:
    """Explicit tendency of the transformed system at the given state:

        -P[lam0 ((u+V).grad)u + M u + beta|u|^2 u - N(u)] + P f

    The stiff diagonal Gamma2|k|^4 + Gamma0|k|^2 is not included (the
    integrating factor handles it); the constant drift enters spectrally as
    -i lam0 (V.k) u.  Raises BlowUpError on non-finite input.
    """
    if not np.all(np.isfinite(state.u_hat.coeffs.view(np.float64))):
        raise BlowUpError(state.t, state)
    # dt is irrelevant for the tendency itself; keep it tiny so the
    # coefficient precomputation never trips the step-size warning
    stepper = Stepper(state.system, state.grid, dt=1e-9, linearized=linearized,
                      forcing=forcing)
    uh = stepper.from_state(state.u_hat)
    out = np.empty_like(uh)
    stepper.rhs(uh, state.t, out)
    return stepper.to_state(out)


def step(state: SolverState, config: SolverConfig, *, linearized: bool = False,
         forcing=None) -> SolverState:
    """Advance one step of the configured scheme (one-off convenience;
    use `run` for loops, which reuses the precomputed coefficients)."""
    stepper = Stepper(state.system, state.grid, config.dt, config.scheme,
                      linearized=linearized, forcing=forcing)
    uh = stepper.from_state(state.u_hat)
    out = stepper.step(uh, state.t)
    if not np.all(np.isfinite(out.view(np.float64))):
        raise BlowUpError(state.t + config.dt, state)
    return SolverState(state.t + config.dt, stepper.to_state(out),
                       state.system, state.grid)


# --------------------------------------------------------------------------
# run loop with diagnostics sampling
# --------------------------------------------------------------------------

class _SeriesRecorder:
    """Accumulates the diagnostic series from half-spectrum states."""

    def __init__(self, stepper: Stepper, tracked: Sequence[Sequence[float]],
                 linearized: bool):
        grid = stepper.grid
        self.stepper = stepper
        self.grid = grid
        self.linearized = linearized
        self.vol = grid.volume
        self.w = grid.parseval_weight_half.reshape(-1)
        self.wksq = self.w * stepper.ksq_flat
        self.wk4 = self.wksq * stepper.ksq_flat
        self.V = stepper.system.V
        self.has_V = bool(np.any(self.V))
        self.quad = stepper.system.quad_coeffs
        self.has_quad = stepper.system.has_quadratic and not linearized
        self.tracked = [tuple(float(c) for c in k) for k in tracked]
        self.amp_idx = [self._half_index(k) for k in self.tracked]
        self.rows: dict[str, list[float]] = {key: [] for key in (
            ["t", "l2_norm_sq", "l4_norm_4", "grad_norm_sq", "lap_norm_sq",
             "div_residual", "m_form", "ordered_proj_sq", "n_inner", "f_inner"]
            + [amp_label(k) for k in self.tracked])}

    def _half_index(self, k) -> tuple[int, ...]:
        m = [int(round(c / self.grid.dk)) for c in k]
        self.grid.mode_index(k)  # validates lattice membership
        if m[-1] < 0:
            m = [-c for c in m]  # conjugate partner, same amplitude
        return tuple(mi % self.grid.n for mi in m[:-1]) + (m[-1],)

    def sample(self, t: float, uh_flat: np.ndarray, forcing_half=None) -> None:
        st = self.stepper
        a2 = np.sum(np.abs(uh_flat) ** 2, axis=0)
        l2 = self.vol * float(np.dot(self.w, a2))
        grad = self.vol * float(np.dot(self.wksq, a2))
        lap = self.vol * float(np.dot(self.wk4, a2))
        Mu = st.Mmat @ uh_flat
        m_form = self.vol * float(np.dot(self.w, np.real(
            np.sum(np.conj(uh_flat) * Mu, axis=0))))
        if self.has_V:
            vdot = np.einsum("a,am->m", self.V, uh_flat)
            proj = self.vol * float(np.dot(self.w, np.abs(vdot) ** 2))
        else:
            proj = 0.0
        div = np.abs(np.einsum("am,am->m", st.k_flat, uh_flat))
        denom = float(np.max(np.sqrt(a2)))
        div_res = float(np.max(div) / denom) if denom > 0 else 0.0

        fine = st.fine_physical(uh_flat)
        s = np.sum(fine * fine, axis=0)
        l4 = self.vol * float(np.mean(s * s))
        if self.has_quad:
            Narr = np.einsum("jki,jm,km->im", self.quad, fine, fine)
            n_inner = self.vol * float(np.mean(np.sum(fine * Narr, axis=0)))
        else:
            n_inner = 0.0
        if forcing_half is not None:
            f_inner = self.vol * float(np.dot(self.w, np.real(
                np.sum(np.conj(uh_flat) * forcing_half, axis=0))))
        else:
            f_inner = 0.0

        r = self.rows
        r["t"].append(t)
        r["l2_norm_sq"].append(l2)
        r["l4_norm_4"].append(l4)
        r["grad_norm_sq"].append(grad)
        r["lap_norm_sq"].append(lap)
        r["div_residual"].append(div_res)
        r["m_form"].append(m_form)
        r["ordered_proj_sq"].append(proj)
        r["n_inner"].append(n_inner)
        r["f_inner"].append(f_inner)
        uh = uh_flat.reshape((self.grid.dim,) + self.grid.half_shape)
        for k, idx in zip(self.tracked, self.amp_idx):
            amp = float(np.sqrt(np.sum(np.abs(uh[(slice(None),) + idx]) ** 2)))
            r[amp_label(k)].append(amp)


def run(initial: SpectralField, system: TransformedSystem, grid: SpectralGrid,
        config: SolverConfig, *, forcing: Callable[[float], SpectralField] | None = None,
        linearized: bool = False, tracked_wavevectors: Sequence[Sequence[float]] = (),
        collect_snapshots: bool = False) -> Trajectory:
    """Integrate to t_end, sampling diagnostics at the configured cadence.

    The initial field must be solenoidal (it is re-projected to clean off
    roundoff); forcing, when given, is projected as well.  Deterministic for
    fixed inputs.  Raises BlowUpError carrying the last finite state.
    """
    if initial.divergence_residual() > 1e-8:
        raise ValueError("initial data is not solenoidal")
    stepper = Stepper(system, grid, config.dt, config.scheme,
                      linearized=linearized, forcing=forcing)
    uh = stepper.from_state(leray_initial(initial))
    recorder = _SeriesRecorder(stepper, tracked_wavevectors, linearized)

    nsteps = int(round(config.t_end / config.dt))
    diag_every = max(1, int(round(config.effective_diag_interval / config.dt)))
    snap_every = None
    if config.snapshot_interval is not None:
        snap_every = max(1, int(round(config.snapshot_interval / config.dt)))

    traj = Trajectory(grid=grid, system=system, config=config,
                      linearized=linearized,
                      tracked=[tuple(float(c) for c in k) for k in tracked_wavevectors])

    def maybe_forcing(t):
        return stepper._forcing_half(t) if forcing is not None else None

    def snapshot(t, uh_flat):
        traj.snapshot_times.append(t)
        traj.snapshots.append(stepper.physical(uh_flat))

    recorder.sample(0.0, uh, maybe_forcing(0.0))
    if collect_snapshots and snap_every is not None:
        snapshot(0.0, uh)

    t = 0.0
    for i in range(nsteps):
        t = i * config.dt
        new = stepper.step(uh, t)
        if not np.all(np.isfinite(new.view(np.float64))):
            last = SolverState(t, stepper.to_state(uh), system, grid)
            _finalize(traj, recorder, last)
            raise BlowUpError(t + config.dt, last)
        # two alternating output buffers: `new` stays valid through the next step
        uh = new
        t = (i + 1) * config.dt
        if (i + 1) % diag_every == 0 or (i + 1) == nsteps:
            recorder.sample(t, uh, maybe_forcing(t))
        if collect_snapshots and snap_every is not None and (
                (i + 1) % snap_every == 0 or (i + 1) == nsteps):
            snapshot(t, uh)

    final = SolverState(nsteps * config.dt, stepper.to_state(uh), system, grid)
    _finalize(traj, recorder, final)
    return traj


def _finalize(traj: Trajectory, recorder: _SeriesRecorder, final: SolverState):
    rows = recorder.rows
    traj.times = np.asarray(rows.pop("t"))
    traj.series = {key: np.asarray(vals) for key, vals in rows.items()}
    traj.final = final


def leray_initial(field: SpectralField) -> SpectralField:
    out = field.copy()
    out.coeffs = project_coeffs(out.grid, out.coeffs)
    zero_nyquist(out.grid, out.coeffs)
    return out


# --------------------------------------------------------------------------
# Initial data
# --------------------------------------------------------------------------

def random_solenoidal_field(grid: SpectralGrid, amplitude: float, k0: float,
                            seed: int, zero_mean: bool = True) -> SpectralField:
    """Solenoidal Gaussian field with spectrum exp(-|k|^2/k0^2).

    Normalized so the root-mean-square velocity sqrt(<|u|^2>) equals
    `amplitude`.  Seeded and reproducible.
    """
    rng = np.random.default_rng(seed)
    shape = (grid.dim,) + grid.shape
    raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    coeffs = raw * np.exp(-grid.ksq / k0**2)
    # enforce Hermitian symmetry: average with the mirrored conjugate
    mirrored = coeffs
    for ax in range(1, grid.dim + 1):
        mirrored = np.take(mirrored, (-np.arange(grid.n)) % grid.n, axis=ax)
    coeffs = 0.5 * (coeffs + np.conj(mirrored))
    zero_nyquist(grid, coeffs)
    if zero_mean:
        coeffs[(slice(None),) + (0,) * grid.dim] = 0.0
    coeffs = project_coeffs(grid, coeffs)
    rms = math.sqrt(float(np.sum(np.abs(coeffs) ** 2)))
    if rms == 0.0:
        raise ValueError("degenerate random field (all modes suppressed)")
    return SpectralField(grid, coeffs * (amplitude / rms))


def single_mode_field(grid: SpectralGrid, k: Sequence[float],
                      polarization: Sequence[float], amplitude: float) -> SpectralField:
    """u(x) = amplitude * cos(k.x) * polarization; polarization must be
    orthogonal to k (solenoidality)."""
    k = np.asarray(k, dtype=float)
    pol = np.asarray(polarization, dtype=float)
    norm = np.linalg.norm(pol)
    if norm == 0:
        raise ValueError("polarization must be nonzero")
    pol = pol / norm
    if abs(float(np.dot(k, pol))) > 1e-12 * max(1.0, float(np.linalg.norm(k))):
        raise ValueError("polarization must be orthogonal to k")
    idx = grid.mode_index(k)
    idx_neg = grid.mode_index(-k)
    coeffs = np.zeros((grid.dim,) + grid.shape, np.complex128)
    coeffs[(slice(None),) + idx] = 0.5 * amplitude * pol
    coeffs[(slice(None),) + idx_neg] += 0.5 * amplitude * pol
    return SpectralField(grid, coeffs)


# --------------------------------------------------------------------------
# Pressure recovery
# --------------------------------------------------------------------------

@dataclass
class PressureFields:
    grad_q: np.ndarray          # physical (dim, n, ..., n)
    q: np.ndarray               # physical scalar, mean-zero gauge
    p: np.ndarray | None        # physical pressure q + lambda1 |v|^2


def recover_pressure(state: SolverState, with_physical_pressure: bool = True
                     ) -> PressureFields:
    """grad q = -(I-P)[lam0 (u.grad)u + (M + beta|u|^2)u - N(u)].

    Products are dealiased on the factor-2 lattice; q is gauge-fixed to mean
    zero, and p = q + lambda1 |v|^2 with v = u + V when requested.
    """
    grid, system = state.grid, state.system
    p = system.params
    d = grid.dim
    axes = tuple(range(1, d + 1))
    uhat = zero_nyquist(grid, state.u_hat.coeffs.copy())
    nf = 2 * grid.n

    grads = gradient_coeffs(grid, uhat).reshape((d * d,) + grid.shape)
    stacked = np.concatenate([uhat, grads])
    fine = np.real(np.fft.ifftn(pad_spectrum(grid, stacked, nf),
                                axes=tuple(range(1, d + 1)), norm="forward"))
    uf = fine[:d]
    gf = fine[d:].reshape((d, d) + (nf,) * d)  # gf[a, i] = d_a u_i
    adv = np.einsum("a...,ai...->i...", uf, gf)
    s = np.sum(uf * uf, axis=0)
    bracket = p.lambda0 * adv + np.einsum("ij,j...->i...", system.M, uf) \
        + p.beta * s * uf - np.einsum("jki,j...,k...->i...", system.quad_coeffs, uf, uf)
    Bhat = truncate_spectrum(grid, np.fft.fftn(bracket, axes=axes, norm="forward"))
    zero_nyquist(grid, Bhat)
    gradq_hat = -(Bhat - project_coeffs(grid, Bhat))

    ksq = grid.ksq.copy()
    zero = ksq == 0.0
    ksq[zero] = 1.0
    q_hat = -1j * np.einsum("a...,a...->...", grid.k, gradq_hat) / ksq
    q_hat = np.where(zero, 0.0, q_hat)

    grad_q = np.real(np.fft.ifftn(gradq_hat, axes=axes, norm="forward"))
    q = np.real(np.fft.ifftn(q_hat, norm="forward"))

    p_phys = None
    if with_physical_pressure:
        u_phys = np.real(np.fft.ifftn(uhat, axes=axes, norm="forward"))
        v = u_phys + system.V.reshape((d,) + (1,) * d)
        vsq_hat = np.zeros(grid.shape, np.complex128)
        for c in range(d):
            vsq_hat += dealiased_product(grid, [v[c], v[c]])
        vsq = np.real(np.fft.ifftn(vsq_hat, norm="forward"))
        p_phys = q + p.lambda1 * vsq
    return PressureFields(grad_q=grad_q, q=q, p=p_phys)
