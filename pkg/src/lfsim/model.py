"""Model parameters, steady states, and the transformed perturbation system.

The model is the generalized incompressible Navier-Stokes system used for
dense bacterial suspensions ("active turbulence"): advection with strength
lambda0, an active pressure prefactor lambda1, a quartic Landau velocity
potential (alpha + beta|v|^2)v, and a Swift-Hohenberg operator
Gamma0*Lap - Gamma2*Lap^2.  Two families of steady states exist: the rest
state v = 0 and, for alpha < 0, constant polar states with swimming speed
|V| = sqrt(-alpha/beta).

Perturbations u = v - V around either steady state satisfy one generic
system with a drift velocity V, a symmetric zeroth-order matrix M, and a
quadratic term N(u) = sum_{j,k} a_jk u^j u^k.  This module owns those
coefficient sets:

    rest state:   V = 0,  M = alpha*I,     N = 0
    polar state:  V,      M = 2*beta*V V', N(u) = -beta|u|^2 V - 2 beta (u.V) u

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StateKind",
    "ModelParams",
    "SteadyState",
    "TransformedSystem",
    "disordered_state",
    "ordered_state",
    "make_disordered_system",
    "make_ordered_system",
    "untransform",
]

_DIRECTION_TOL = 1e-12


class StateKind(enum.Enum):
    DISORDERED = "disordered"
    ORDERED = "ordered"


@dataclass(frozen=True)
class ModelParams:
    """The six physical scalars plus spatial dimension.

    gamma2 > 0 and beta > 0 are hard requirements (the fourth-order term must
    stabilize and the Landau potential must confine); dim is 2 or 3.
    """

    lambda0: float  # advection strength
    lambda1: float  # active-pressure prefactor (enters pressure only)
    alpha: float    # linear Landau coefficient
    beta: float     # cubic Landau coefficient, > 0
    gamma0: float   # second-order gradient coefficient, either sign
    gamma2: float   # fourth-order Swift-Hohenberg coefficient, > 0
    dim: int = 2

    def __post_init__(self):
        for name in ("lambda0", "lambda1", "alpha", "beta", "gamma0", "gamma2"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.gamma2 <= 0:
            raise ValueError(f"gamma2 must be > 0, got {self.gamma2}")
        if self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")

    @property
    def swimming_speed(self) -> float:
        """|V| of the polar states, sqrt(-alpha/beta); requires alpha < 0."""
        if self.alpha >= 0:
            raise ValueError("polar steady states require alpha < 0")
        return float(np.sqrt(-self.alpha / self.beta))


@dataclass(frozen=True)
class SteadyState:
    """A steady state of the model: the rest state or one polar state."""

    kind: StateKind
    V: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "V", np.asarray(self.V, dtype=float))
        self.V.setflags(write=False)


def disordered_state(params: ModelParams) -> SteadyState:
    return SteadyState(StateKind.DISORDERED, np.zeros(params.dim))


def ordered_state(params: ModelParams, direction: np.ndarray | None = None) -> SteadyState:
    """Polar steady state with speed sqrt(-alpha/beta) along ``direction``.

    The set of polar states is a sphere of directions; the default
    representative points along the first axis.
    """
    if params.alpha >= 0:
        raise ValueError(
            f"ordered states exist only for alpha < 0, got alpha={params.alpha}")
    if direction is None:
        direction = np.zeros(params.dim)
        direction[0] = 1.0
    direction = np.asarray(direction, dtype=float)
    if direction.shape != (params.dim,):
        raise ValueError(f"direction must have shape ({params.dim},)")
    if abs(np.linalg.norm(direction) - 1.0) > _DIRECTION_TOL:
        raise ValueError("direction must be a unit vector")
    return SteadyState(StateKind.ORDERED, params.swimming_speed * direction)


@dataclass(frozen=True)
class TransformedSystem:
    """Coefficients (V, M, a_jk) of the perturbation system about a steady state.

    quad_coeffs[j, k, :] is the vector a_jk of the quadratic term
    N(u) = sum_{j,k} a_jk u^j u^k, stored symmetrized (a_jk = a_kj).
    """

    params: ModelParams
    kind: StateKind
    V: np.ndarray
    M: np.ndarray
    quad_coeffs: np.ndarray
    # True when M is exactly a scalar multiple of the identity (rest state);
    # the Fourier symbol then commutes with the Helmholtz projector.
    scalar_m: float | None = field(default=None)

    def __post_init__(self):
        d = self.params.dim
        for name, shape in (("V", (d,)), ("M", (d, d)), ("quad_coeffs", (d, d, d))):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.max(np.abs(self.M - self.M.T)) != 0.0:
            raise ValueError("M must be symmetric")

    @property
    def has_quadratic(self) -> bool:
        return bool(np.any(self.quad_coeffs))

    def evaluate_quadratic(self, u: np.ndarray) -> np.ndarray:
        """N(u) = sum_{j,k} a_jk u^j u^k, pointwise over a (dim, ...) field."""
        u = np.asarray(u)
        if u.shape[0] != self.params.dim:
            raise ValueError("leading axis of u must index vector components")
        return np.einsum("jki,j...,k...->i...", self.quad_coeffs, u, u)


def make_disordered_system(params: ModelParams) -> TransformedSystem:
    """Perturbation system about the rest state: V = 0, M = alpha*I, N = 0."""
    d = params.dim
    return TransformedSystem(
        params=params,
        kind=StateKind.DISORDERED,
        V=np.zeros(d),
        M=params.alpha * np.eye(d),
        quad_coeffs=np.zeros((d, d, d)),
        scalar_m=params.alpha,
    )


def make_ordered_system(
    params: ModelParams, direction: np.ndarray | None = None
) -> TransformedSystem:
    """Perturbation system about a polar state.

    M = 2*beta*V V' and N(u) = -beta|u|^2 V - 2 beta (u.V) u, encoded as
    a_jk = -beta*delta_jk*V - beta*(V_j e_k + V_k e_j).
    """
    state = ordered_state(params, direction)
    V = state.V
    d = params.dim
    beta = params.beta
    eye = np.eye(d)
    quad = np.zeros((d, d, d))
    for j in range(d):
        for k in range(d):
            quad[j, k] = -beta * (eye[j, k] * V + V[j] * eye[k] + V[k] * eye[j])
    return TransformedSystem(
        params=params,
        kind=StateKind.ORDERED,
        V=V,
        M=2.0 * beta * np.outer(V, V),
        quad_coeffs=quad,
        scalar_m=None,
    )


def untransform(u: np.ndarray, system: TransformedSystem) -> np.ndarray:
    """Recover the laboratory velocity v = u + V from the perturbation u.

    ``u`` has the vector component on the leading axis; for the rest state
    this is the identity.
    """
    u = np.asarray(u)
    if u.shape[0] != system.params.dim:
        raise ValueError(
            f"field has {u.shape[0]} components, system is {system.params.dim}-dimensional")
    return u + system.V.reshape((-1,) + (1,) * (u.ndim - 1))
