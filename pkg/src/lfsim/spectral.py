"""Periodic spectral discretization: grids, transforms, projection, dealiasing.

The whole-space problem is truncated to a periodic box [0, L)^dim sampled on
an even N^dim grid.  Fields live either as real samples (component on the
leading axis) or as Fourier coefficients in the amplitude convention: the
forward transform carries the 1/N^dim factor, so the coefficient at mode 0
is the spatial mean and a unit cosine has coefficients 1/2 at +-k.

Wavevectors are k = (2*pi/L) * m with integer m in {-N/2+1, ..., N/2}; the
unpaired mode m = N/2 has no conjugate partner, so odd spectral derivatives
drop it (see the derivative table `k_deriv`) and product truncation excludes
it from the result band.

Quadratic and cubic products are dealiased by zero padding (factors 3/2 and
2 per axis) and exact truncation back; the Helmholtz/Leray projector is the
modewise multiplier I - k k^T/|k|^2, extended by the identity at k = 0 so
that mean modes are preserved.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

__all__ = [
    "SpectralGrid",
    "SpectralField",
    "forward",
    "inverse",
    "leray_project",
    "project_coeffs",
    "gradient_coeffs",
    "laplacian_coeffs",
    "bilaplacian_coeffs",
    "divergence_coeffs",
    "curl_coeffs",
    "GradientOps",
    "gradient_ops",
    "dealiased_product",
    "pad_spectrum",
    "truncate_spectrum",
    "zero_nyquist",
    "to_half",
    "from_half",
    "l2_norm_sq",
    "grad_norm_sq",
    "lap_norm_sq",
    "l4_norm_4",
    "inner_l2",
    "divergence_residual",
    "write_snapshot",
    "read_snapshot",
    "SNAPSHOT_MAGIC",
]

SNAPSHOT_MAGIC = "LFSNAP v1"


def _mode_numbers(n: int) -> np.ndarray:
    """Integer mode numbers in FFT storage order, Nyquist mapped to +n/2."""
    m = np.fft.fftfreq(n, d=1.0 / n).astype(np.int64)
    m[n // 2] = n // 2
    return m


class SpectralGrid:
    """Periodic grid bookkeeping: wavevector tables and dealias masks.

    Immutable and shareable; all arrays are read-only views.
    """

    def __init__(self, dim: int, points_per_axis: int, box_length: float):
        if dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {dim}")
        if points_per_axis < 8 or points_per_axis % 2 != 0:
            raise ValueError(
                f"points_per_axis must be even and >= 8, got {points_per_axis}")
        if not (np.isfinite(box_length) and box_length > 0):
            raise ValueError(f"box_length must be > 0, got {box_length}")
        self.dim = dim
        self.n = int(points_per_axis)
        self.length = float(box_length)
        self.shape = (self.n,) * dim
        self.half_shape = (self.n,) * (dim - 1) + (self.n // 2 + 1,)
        self.volume = self.length**dim
        self.dk = 2.0 * np.pi / self.length

        m1 = _mode_numbers(self.n)
        grids = np.meshgrid(*([m1] * dim), indexing="ij")
        self.mode_numbers = np.stack(grids).astype(np.int64)
        self.k = self.dk * self.mode_numbers.astype(float)
        # No conjugate partner at m = n/2: zero it out of odd derivatives
        # (cf. Johnson, "Notes on FFT-based differentiation").
        kd = self.k.copy()
        kd[self.mode_numbers == self.n // 2] = 0.0
        self.k_deriv = kd
        self.ksq = np.sum(self.k**2, axis=0)
        self.k4 = self.ksq**2

        absm = np.abs(self.mode_numbers)
        self.dealias_mask_quadratic = np.all(absm <= self.n / 3, axis=0)
        self.dealias_mask_cubic = np.all(absm <= self.n / 4, axis=0)

        for arr in (self.mode_numbers, self.k, self.k_deriv, self.ksq,
                    self.k4, self.dealias_mask_quadratic, self.dealias_mask_cubic):
            arr.setflags(write=False)

    # positions of the axis samples: x_i = i*L/n
    @cached_property
    def axis_points(self) -> np.ndarray:
        return np.arange(self.n) * (self.length / self.n)

    @cached_property
    def mesh(self) -> np.ndarray:
        """Physical coordinates, shape (dim, n, ..., n)."""
        coords = np.meshgrid(*([self.axis_points] * self.dim), indexing="ij")
        out = np.stack(coords)
        out.setflags(write=False)
        return out

    # --- half-spectrum (rfft layout along the last axis) tables -----------
    @cached_property
    def k_half(self) -> np.ndarray:
        out = np.ascontiguousarray(self.k[(...,) + (slice(None, self.n // 2 + 1),)])
        out.setflags(write=False)
        return out

    @cached_property
    def k_deriv_half(self) -> np.ndarray:
        out = np.ascontiguousarray(self.k_deriv[..., : self.n // 2 + 1])
        out.setflags(write=False)
        return out

    @cached_property
    def ksq_half(self) -> np.ndarray:
        out = np.ascontiguousarray(self.ksq[..., : self.n // 2 + 1])
        out.setflags(write=False)
        return out

    @cached_property
    def parseval_weight_half(self) -> np.ndarray:
        """Multiplicity of each stored rfft mode in the full lattice sum."""
        w = np.full(self.half_shape, 2.0)
        w[..., 0] = 1.0
        w[..., self.n // 2] = 1.0
        w.setflags(write=False)
        return w

    def mode_index(self, k: Sequence[float]) -> tuple[int, ...]:
        """Lattice index tuple of the wavevector k; rejects off-lattice k."""
        k = np.asarray(k, dtype=float)
        if k.shape != (self.dim,):
            raise ValueError(f"wavevector must have shape ({self.dim},)")
        m = np.rint(k / self.dk).astype(int)
        if np.max(np.abs(k - m * self.dk)) > 1e-9 * max(1.0, float(np.max(np.abs(k)))):
            raise ValueError(f"wavevector {k} is not on the grid lattice")
        if np.any(np.abs(m) > self.n // 2):
            raise ValueError(f"wavevector {k} is beyond the grid Nyquist")
        return tuple(int(mi) % self.n for mi in m)

    def __repr__(self):
        return f"SpectralGrid(dim={self.dim}, n={self.n}, L={self.length:g})"


@dataclass
class SpectralField:
    """Divergence-free-capable vector field stored as Fourier coefficients.

    coeffs has shape (dim, n, ..., n), complex, amplitude convention.
    """

    grid: SpectralGrid
    coeffs: np.ndarray

    def __post_init__(self):
        expected = (self.grid.dim,) + self.grid.shape
        if self.coeffs.shape != expected:
            raise ValueError(
                f"coeffs shape {self.coeffs.shape} does not match grid {expected}")
        if self.coeffs.dtype != np.complex128:
            self.coeffs = self.coeffs.astype(np.complex128)

    @classmethod
    def from_physical(cls, grid: SpectralGrid, physical: np.ndarray) -> "SpectralField":
        return forward(grid, physical)

    def to_physical(self) -> np.ndarray:
        return inverse(self)

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs.copy())

    def hermitian_residual(self) -> float:
        """max |c(-k) - conj(c(k))| over all modes (0 for real fields)."""
        axes = tuple(range(1, self.coeffs.ndim))
        mirrored = self.coeffs.copy()
        for ax in axes:
            mirrored = np.take(mirrored, (-np.arange(self.grid.n)) % self.grid.n, axis=ax)
        return float(np.max(np.abs(mirrored - np.conj(self.coeffs))))

    def divergence_residual(self) -> float:
        """max_k |k . u(k)| / max_k |u(k)|; zero field gives zero."""
        div = np.sum(self.grid.k * self.coeffs, axis=0)
        denom = np.max(np.sqrt(np.sum(np.abs(self.coeffs) ** 2, axis=0)))
        if denom == 0.0:
            return 0.0
        return float(np.max(np.abs(div)) / denom)

    def mode_amplitude(self, k: Sequence[float]) -> float:
        """Euclidean norm over components of the coefficient at wavevector k."""
        idx = self.grid.mode_index(k)
        return float(np.sqrt(np.sum(np.abs(self.coeffs[(slice(None),) + idx]) ** 2)))


def forward(grid: SpectralGrid, physical: np.ndarray) -> SpectralField:
    """Real samples (dim, n, ..., n) -> amplitude-convention coefficients."""
    physical = np.asarray(physical, dtype=float)
    expected = (grid.dim,) + grid.shape
    if physical.shape != expected:
        raise ValueError(f"physical shape {physical.shape}, expected {expected}")
    axes = tuple(range(1, grid.dim + 1))
    return SpectralField(grid, np.fft.fftn(physical, axes=axes, norm="forward"))


def inverse(field: SpectralField) -> np.ndarray:
    """Coefficients -> real samples (imaginary roundoff discarded)."""
    axes = tuple(range(1, field.grid.dim + 1))
    return np.real(np.fft.ifftn(field.coeffs, axes=axes, norm="forward"))


# --------------------------------------------------------------------------
# Leray (Helmholtz) projection and spectral derivatives
# --------------------------------------------------------------------------

def project_coeffs(grid: SpectralGrid, coeffs: np.ndarray) -> np.ndarray:
    """Apply I - k k^T/|k|^2 modewise; identity at k = 0.  Returns new array."""
    ksq = grid.ksq.copy()
    zero = ksq == 0.0
    ksq[zero] = 1.0
    kdotu = np.einsum("a...,a...->...", grid.k, coeffs)
    return coeffs - grid.k * (kdotu / ksq)


def leray_project(field: SpectralField) -> SpectralField:
    return SpectralField(field.grid, project_coeffs(field.grid, field.coeffs))


def gradient_coeffs(grid: SpectralGrid, coeffs: np.ndarray) -> np.ndarray:
    """d/dx_a as a new leading axis: out[a, ...] = i k_a * coeffs."""
    return 1j * grid.k_deriv.reshape(
        (grid.dim,) + (1,) * (coeffs.ndim - grid.dim) + grid.shape) * coeffs


def laplacian_coeffs(grid: SpectralGrid, coeffs: np.ndarray) -> np.ndarray:
    return -grid.ksq * coeffs


def bilaplacian_coeffs(grid: SpectralGrid, coeffs: np.ndarray) -> np.ndarray:
    return grid.k4 * coeffs


def divergence_coeffs(grid: SpectralGrid, vec_coeffs: np.ndarray) -> np.ndarray:
    return np.einsum("a...,a...->...", 1j * grid.k_deriv, vec_coeffs)


def curl_coeffs(grid: SpectralGrid, vec_coeffs: np.ndarray) -> np.ndarray:
    """2D: scalar vorticity d1 u2 - d2 u1.  3D: the full curl vector."""
    kd = grid.k_deriv
    if grid.dim == 2:
        return 1j * (kd[0] * vec_coeffs[1] - kd[1] * vec_coeffs[0])
    return np.stack([
        1j * (kd[1] * vec_coeffs[2] - kd[2] * vec_coeffs[1]),
        1j * (kd[2] * vec_coeffs[0] - kd[0] * vec_coeffs[2]),
        1j * (kd[0] * vec_coeffs[1] - kd[1] * vec_coeffs[0]),
    ])


@dataclass
class GradientOps:
    gradient: np.ndarray
    laplacian: np.ndarray
    bilaplacian: np.ndarray


def gradient_ops(field: SpectralField) -> GradientOps:
    g = field.grid
    return GradientOps(
        gradient=gradient_coeffs(g, field.coeffs),
        laplacian=laplacian_coeffs(g, field.coeffs),
        bilaplacian=bilaplacian_coeffs(g, field.coeffs),
    )


# --------------------------------------------------------------------------
# Zero padding / truncation and dealiased products
# --------------------------------------------------------------------------

def _pad_axis(arr: np.ndarray, axis: int, n_to: int) -> np.ndarray:
    """Zero-pad one spectral axis from n to n_to, splitting the unpaired mode.

    The coefficient in the m = n/2 slot is halved onto +-n/2 of the fine
    lattice so the real trigonometric interpolant is preserved exactly.
    """
    n = arr.shape[axis]
    half = n // 2
    shape = list(arr.shape)
    shape[axis] = n_to
    out = np.zeros(shape, dtype=arr.dtype)

    def sl(a, b):
        idx = [slice(None)] * arr.ndim
        idx[axis] = slice(a, b)
        return tuple(idx)

    out[sl(0, half)] = arr[sl(0, half)]
    out[sl(n_to - (half - 1), n_to)] = arr[sl(half + 1, n)]
    nyq = arr[sl(half, half + 1)]
    out[sl(half, half + 1)] = 0.5 * nyq
    out[sl(n_to - half, n_to - half + 1)] += 0.5 * nyq
    return out


def _truncate_axis(arr: np.ndarray, axis: int, n_to: int) -> np.ndarray:
    """Inverse of `_pad_axis`: keep the coarse band, folding +-n_to/2."""
    n = arr.shape[axis]
    half = n_to // 2
    shape = list(arr.shape)
    shape[axis] = n_to
    out = np.empty(shape, dtype=arr.dtype)

    def slc(container, a, b):
        idx = [slice(None)] * container
        idx[axis] = slice(a, b)
        return tuple(idx)

    out[slc(arr.ndim, 0, half)] = arr[slc(arr.ndim, 0, half)]
    out[slc(arr.ndim, half + 1, n_to)] = arr[slc(arr.ndim, n - (half - 1), n)]
    out[slc(arr.ndim, half, half + 1)] = (
        arr[slc(arr.ndim, half, half + 1)] + arr[slc(arr.ndim, n - half, n - half + 1)])
    return out


def pad_spectrum(grid: SpectralGrid, coeffs: np.ndarray, n_fine: int) -> np.ndarray:
    """Zero-pad full-lattice coefficients to an n_fine^dim lattice."""
    out = coeffs
    for ax in range(coeffs.ndim - grid.dim, coeffs.ndim):
        out = _pad_axis(out, ax, n_fine)
    return out


def truncate_spectrum(grid: SpectralGrid, coeffs: np.ndarray) -> np.ndarray:
    """Truncate fine-lattice coefficients back to the grid's n^dim lattice."""
    out = coeffs
    for ax in range(coeffs.ndim - grid.dim, coeffs.ndim):
        out = _truncate_axis(out, ax, grid.n)
    return out


def zero_nyquist(grid: SpectralGrid, coeffs: np.ndarray) -> np.ndarray:
    """Zero the unpaired m = n/2 slots along every spectral axis (in place)."""
    for ax in range(coeffs.ndim - grid.dim, coeffs.ndim):
        idx = [slice(None)] * coeffs.ndim
        idx[ax] = grid.n // 2
        coeffs[tuple(idx)] = 0.0
    return coeffs


def dealiased_product(grid: SpectralGrid, factors: Sequence[np.ndarray]) -> np.ndarray:
    """Alias-free pointwise product of 2 or 3 real scalar fields.

    Factors are physical-space samples on the grid.  The product is formed on
    a zero-padded lattice (factor 3/2 for two factors, 2 for three) and
    truncated back; the returned coefficients live in the Nyquist-free band
    (the unpaired mode slot is zero).
    """
    if len(factors) not in (2, 3):
        raise ValueError(f"need 2 or 3 factors, got {len(factors)}")
    n_fine = 3 * grid.n // 2 if len(factors) == 2 else 2 * grid.n
    axes = tuple(range(grid.dim))
    prod = None
    for f in factors:
        f = np.asarray(f, dtype=float)
        if f.shape != grid.shape:
            raise ValueError(f"factor shape {f.shape}, expected {grid.shape}")
        c = np.fft.fftn(f, norm="forward")
        fine = np.real(np.fft.ifftn(pad_spectrum(grid, c, n_fine), norm="forward"))
        prod = fine if prod is None else prod * fine
    out = truncate_spectrum(grid, np.fft.fftn(prod, axes=axes, norm="forward"))
    return zero_nyquist(grid, out)


# --------------------------------------------------------------------------
# Half-spectrum (rfft) conversion helpers
# --------------------------------------------------------------------------

def to_half(grid: SpectralGrid, full: np.ndarray) -> np.ndarray:
    """Slice full-lattice coefficients to the rfft half-spectrum layout."""
    return np.ascontiguousarray(full[..., : grid.n // 2 + 1])


def from_half(grid: SpectralGrid, half: np.ndarray) -> np.ndarray:
    """Rebuild the full lattice from the rfft half-spectrum by symmetry."""
    n = grid.n
    h = n // 2
    full = np.empty(half.shape[:-1] + (n,), dtype=np.complex128)
    full[..., : h + 1] = half
    tail = np.flip(np.conj(half[..., 1:h]), axis=-1)
    mirror = (-np.arange(n)) % n
    for ax in range(tail.ndim - grid.dim, tail.ndim - 1):
        tail = np.take(tail, mirror, axis=ax)
    full[..., h + 1:] = tail
    return full


# --------------------------------------------------------------------------
# Norms and inner products (Parseval, amplitude convention)
# --------------------------------------------------------------------------

def l2_norm_sq(field: SpectralField) -> float:
    """Integral of |u|^2 over the box = volume * sum_k |u_hat|^2."""
    return field.grid.volume * float(np.sum(np.abs(field.coeffs) ** 2))


def grad_norm_sq(field: SpectralField) -> float:
    return field.grid.volume * float(
        np.sum(field.grid.ksq * np.sum(np.abs(field.coeffs) ** 2, axis=0)))


def lap_norm_sq(field: SpectralField) -> float:
    return field.grid.volume * float(
        np.sum(field.grid.k4 * np.sum(np.abs(field.coeffs) ** 2, axis=0)))


def l4_norm_4(field: SpectralField) -> float:
    """Integral of |u|^4, quadrature on the factor-2 (cubic-dealiased) lattice."""
    g = field.grid
    fine = pad_spectrum(g, field.coeffs, 2 * g.n)
    axes = tuple(range(1, g.dim + 1))
    u = np.real(np.fft.ifftn(fine, axes=axes, norm="forward"))
    s = np.sum(u * u, axis=0)
    return g.volume * float(np.mean(s * s))


def inner_l2(f: SpectralField, g: SpectralField) -> float:
    """Discrete L^2 inner product of two real fields."""
    return f.grid.volume * float(
        np.real(np.sum(f.coeffs * np.conj(g.coeffs))))


def divergence_residual(field: SpectralField) -> float:
    return field.divergence_residual()


# --------------------------------------------------------------------------
# Snapshot file format (LFSNAP v1)
# --------------------------------------------------------------------------
# One ASCII header line, then raw little-endian float64 physical samples,
# component-major with axis 0 varying fastest.

def write_snapshot(path, grid: SpectralGrid, physical: np.ndarray, t: float) -> None:
    physical = np.asarray(physical, dtype=float)
    expected = (grid.dim,) + grid.shape
    if physical.shape != expected:
        raise ValueError(f"physical shape {physical.shape}, expected {expected}")
    header = (f"{SNAPSHOT_MAGIC} dim={grid.dim} n={grid.n} "
              f"L={float(grid.length)!r} t={float(t)!r}\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for c in range(grid.dim):
            fh.write(physical[c].astype("<f8").tobytes(order="F"))


def read_snapshot(path) -> tuple[np.ndarray, dict]:
    """Returns (physical (dim, n, ..., n), meta {dim, n, L, t})."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        payload = fh.read()
    parts = header.split()
    if parts[:2] != SNAPSHOT_MAGIC.split():
        raise ValueError(f"not an LFSNAP file: header {header!r}")
    meta = {}
    for tok in parts[2:]:
        key, _, val = tok.partition("=")
        meta[key] = val
    dim = int(meta["dim"])
    n = int(meta["n"])
    out = {"dim": dim, "n": n, "L": float(meta["L"]), "t": float(meta["t"])}
    count = n**dim
    data = np.frombuffer(payload, dtype="<f8")
    if data.size != dim * count:
        raise ValueError(
            f"snapshot payload has {data.size} floats, expected {dim * count}")
    comps = [data[c * count:(c + 1) * count].reshape((n,) * dim, order="F")
             for c in range(dim)]
    return np.stack(comps), out
