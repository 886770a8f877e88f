"""Open Toda lattice: states, Flaschka map, integrals and vector fields.

Sign conventions (chosen so every form of the flow agrees with ``dL/dt = [L, M]``)::

    a_i = -y_i / 2,     b_i = exp((x_{i+1} - x_i) / 2) / 2
    dy_i/dt = exp(x_{i+1} - x_i) - exp(x_i - x_{i-1})

Open ends: ``b_0 = b_n = 0``. Array kernels (``*_field``) take the state along
the last axis and broadcast over any leading batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import SymTridiag

__all__ = [
    "PhysicalState",
    "FlaschkaState",
    "flaschka_from_physical",
    "physical_from_flaschka",
    "build_L",
    "build_M",
    "integral_H",
    "integrals",
    "flaschka_field",
    "physical_field",
    "lax_field",
    "toda_drift_flaschka",
    "toda_drift_physical",
    "hamiltonian_physical",
]


def _frozen_vector(v, name):
    arr = np.array(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PhysicalState:
    """Positions ``x`` and momenta ``y`` of ``n >= 2`` unit-mass particles."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = _frozen_vector(self.x, "x")
        y = _frozen_vector(self.y, "y")
        if x.size != y.size:
            raise ValueError(f"x and y differ in length ({x.size} != {y.size})")
        if x.size < 2:
            raise ValueError("need at least two particles")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.x.size

    def pack(self):
        return np.concatenate([self.x, self.y])

    @classmethod
    def unpack(cls, vec):
        vec = np.asarray(vec, dtype=float)
        n = vec.size // 2
        return cls(vec[:n], vec[n:])


@dataclass(frozen=True)
class FlaschkaState:
    """Diagonal ``a`` (n entries) and bonds ``b`` (n - 1 entries) of the Lax matrix."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = _frozen_vector(self.a, "a")
        b = _frozen_vector(self.b, "b")
        if a.size < 1 or b.size != a.size - 1:
            raise ValueError(f"b must have len(a) - 1 entries, got {a.size} and {b.size}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self):
        return self.a.size

    def matrix(self):
        return SymTridiag(self.a, self.b)

    def pack(self):
        return np.concatenate([self.a, self.b])

    @classmethod
    def unpack(cls, vec):
        vec = np.asarray(vec, dtype=float)
        n = (vec.size + 1) // 2
        return cls(vec[:n], vec[n:])


def flaschka_from_physical(s):
    gaps = np.diff(s.x)
    with np.errstate(over="ignore"):
        b = 0.5 * np.exp(0.5 * gaps)
    if not np.all(np.isfinite(b)):
        raise OverflowError("position gap too large for the Flaschka map")
    return FlaschkaState(-0.5 * s.y, b)


def physical_from_flaschka(f, x1=0.0):
    """Invert the Flaschka map; ``x1`` fixes the lost absolute position."""
    if np.any(f.b <= 0):
        raise ValueError("all b_i must be positive to reconstruct positions")
    gaps = 2.0 * np.log(2.0 * f.b)
    x = x1 + np.concatenate([[0.0], np.cumsum(gaps)])
    return PhysicalState(x, -2.0 * f.a)


def build_L(f):
    return SymTridiag(f.a, f.b)


def build_M(L):
    """``L^+ - L^-`` with strict triangles; equals ``pi_q(L)``."""
    if not isinstance(L, SymTridiag):
        L = SymTridiag.from_dense(L)
    n = L.n
    M = np.zeros((n, n))
    idx = np.arange(n - 1)
    M[idx, idx + 1] = L.off
    M[idx + 1, idx] = -L.off
    return M


def _as_dense(L):
    if isinstance(L, SymTridiag):
        return L.dense()
    if isinstance(L, FlaschkaState):
        return L.matrix().dense()
    return np.asarray(L, dtype=float)


def integral_H(L, k):
    """``H_k = Tr(L^k) / k``; accepts dense stacks as well as tridiagonal input."""
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    k = int(k)
    Ld = _as_dense(L)
    return np.trace(np.linalg.matrix_power(Ld, k), axis1=-2, axis2=-1) / k


def integrals(L, kmax=None):
    """``H_1 .. H_kmax`` (default ``kmax = n``) as an array on the last axis."""
    Ld = _as_dense(L)
    n = Ld.shape[-1]
    kmax = n if kmax is None else kmax
    out = []
    power = np.broadcast_to(np.eye(n), Ld.shape)
    for k in range(1, kmax + 1):
        power = power @ Ld
        out.append(np.trace(power, axis1=-2, axis2=-1) / k)
    return np.stack(out, axis=-1)


def flaschka_field(a, b):
    """Toda vector field in Flaschka variables, written as bond fluxes."""
    flux = 2.0 * b * b
    da = np.zeros(np.broadcast_shapes(a.shape[:-1], b.shape[:-1]) + a.shape[-1:])
    da[..., :-1] -= flux
    da[..., 1:] += flux
    db = b * (a[..., :-1] - a[..., 1:])
    return da, db


def physical_field(x, y):
    force = np.exp(np.diff(x, axis=-1))
    dy = np.zeros_like(y)
    dy[..., :-1] += force
    dy[..., 1:] -= force
    return y.copy(), dy


def lax_field(L):
    """``[L, pi_q L]`` on a dense matrix, without re-projecting onto the band."""
    up = np.triu(L, 1)
    M = up - np.swapaxes(up, -1, -2)
    return L @ M - M @ L


def toda_drift_flaschka(f):
    da, db = flaschka_field(f.a, f.b)
    return FlaschkaState(da, db)


def toda_drift_physical(s):
    with np.errstate(over="ignore"):
        dx, dy = physical_field(s.x, s.y)
    if not np.all(np.isfinite(dy)):
        raise OverflowError("exponential interaction overflowed")
    return PhysicalState(dx, dy)


def hamiltonian_physical(s):
    """``sum y^2 / 2 + sum exp(x_{i+1} - x_i)``; equals ``4 H_2`` of the Lax matrix."""
    with np.errstate(over="ignore"):
        potential = np.exp(np.diff(s.x)).sum()
    if not np.isfinite(potential):
        raise OverflowError("exponential interaction overflowed")
    return 0.5 * float(np.dot(s.y, s.y)) + float(potential)
