"""Lie-algebra operations for the QL splitting of gl(n).

Subscripts ``+``, ``-`` and ``0`` mean the strict upper triangle, the strict
lower triangle and the diagonal. Every map acts on the trailing two axes, so
stacks of matrices are handled without loops.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SymTridiag",
    "pi_q",
    "pi_l",
    "pi_lperp",
    "pi_qperp",
    "r_map",
    "r_star",
    "trace_pairing",
    "commutator",
    "r_bracket",
    "ql_bracket",
    "coad_r",
    "elementary_symmetric",
    "eig_sym_tridiag",
    "sturm_count",
]


def _t(xi):
    return np.swapaxes(xi, -1, -2)


def _plus(xi):
    return np.triu(xi, 1)


def _minus(xi):
    return np.tril(xi, -1)


def _zero(xi):
    return np.tril(np.triu(xi))


def pi_q(xi):
    """Projection onto antisymmetric matrices: ``xi_+ - xi_+^T``."""
    xi = np.asarray(xi, dtype=float)
    up = _plus(xi)
    return up - _t(up)


def pi_l(xi):
    """Complement of :func:`pi_q`: ``xi_- + xi_0 + xi_+^T``."""
    xi = np.asarray(xi, dtype=float)
    return _minus(xi) + _zero(xi) + _t(_plus(xi))


def pi_lperp(xi):
    """``xi_+ - xi_-^T``, the trace-pairing adjoint of :func:`pi_q`."""
    xi = np.asarray(xi, dtype=float)
    return _plus(xi) - _t(_minus(xi))


def pi_qperp(xi):
    """``xi_- + xi_0 + xi_-^T``, the trace-pairing adjoint of :func:`pi_l`."""
    xi = np.asarray(xi, dtype=float)
    lo = _minus(xi)
    return lo + _zero(xi) + _t(lo)


def r_map(xi):
    """Classical R-matrix ``R = pi_q - 1/2``."""
    xi = np.asarray(xi, dtype=float)
    return pi_q(xi) - 0.5 * xi


def r_star(xi):
    """Adjoint of :func:`r_map` under the trace pairing.

    Since ``<pi_lperp xi, eta> = <xi, pi_q eta>``, the adjoint is
    ``pi_lperp - 1/2``. On symmetric input it returns ``-S/2``.
    """
    xi = np.asarray(xi, dtype=float)
    return pi_lperp(xi) - 0.5 * xi


def trace_pairing(xi, eta):
    """Frobenius pairing ``Tr(xi^T eta)``; broadcasts over leading axes."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if xi.shape[-2:] != eta.shape[-2:] or xi.shape[-1] != xi.shape[-2]:
        raise ValueError(
            f"trace pairing needs equal square shapes, got {xi.shape} and {eta.shape}"
        )
    return np.sum(xi * eta, axis=(-2, -1))


def commutator(x, y):
    return x @ y - y @ x


def r_bracket(xi, eta):
    """``[R xi, eta] + [xi, R eta]``."""
    return commutator(r_map(xi), eta) + commutator(xi, r_map(eta))


def ql_bracket(xi, eta):
    """Lie bracket of the QL splitting, written through the projections.

    Returns ``[pi_q xi, pi_q eta] - [pi_l xi, pi_l eta]``. This is the sign
    that agrees with ``R = pi_q - 1/2``; the opposite overall sign is the same
    algebra under ``xi -> -xi``.
    """
    return commutator(pi_q(xi), pi_q(eta)) - commutator(pi_l(xi), pi_l(eta))


def coad_r(xi, mu):
    """Coadjoint operator dual to :func:`r_bracket`.

    ``[(R xi)^T, mu] + R^*[xi^T, mu]``, so that
    ``<coad_r(xi, mu), eta> == <mu, r_bracket(xi, eta)>`` for every ``eta``.
    """
    xi = np.asarray(xi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return commutator(_t(r_map(xi)), mu) + r_star(commutator(_t(xi), mu))


def elementary_symmetric(n, i):
    """Symmetric unit pair at bond ``i`` (0-based): ones at (i, i+1), (i+1, i)."""
    if not 0 <= i < n - 1:
        raise IndexError(f"bond index {i} out of range for n={n}")
    e = np.zeros((n, n))
    e[i, i + 1] = e[i + 1, i] = 1.0
    return e


@dataclass(frozen=True)
class SymTridiag:
    """Symmetric tridiagonal matrix stored as its diagonal and first off-diagonal."""

    diag: np.ndarray
    off: np.ndarray

    def __post_init__(self):
        d = np.array(self.diag, dtype=float).reshape(-1)
        e = np.array(self.off, dtype=float).reshape(-1)
        if d.size < 1:
            raise ValueError("need at least one diagonal entry")
        if e.size != d.size - 1:
            raise ValueError(f"off-diagonal must have {d.size - 1} entries, got {e.size}")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(e))):
            raise ValueError("entries must be finite")
        d.flags.writeable = False
        e.flags.writeable = False
        object.__setattr__(self, "diag", d)
        object.__setattr__(self, "off", e)

    @property
    def n(self):
        return self.diag.size

    def dense(self):
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    @classmethod
    def from_dense(cls, L):
        """Read the band of ``L``; the off-diagonal is the symmetrised band."""
        L = np.asarray(L, dtype=float)
        return cls(np.diag(L).copy(), 0.5 * (np.diag(L, 1) + np.diag(L, -1)))

    def norm(self):
        """Max-row-sum norm, an upper bound on the spectral radius."""
        rows = np.abs(self.diag).copy()
        rows[:-1] += np.abs(self.off)
        rows[1:] += np.abs(self.off)
        return float(rows.max())


def sturm_count(d, e2, x):
    """Number of eigenvalues strictly below ``x``.

    Counts negative pivots of the LDL^T recurrence of ``T - x I``; ``e2`` holds
    the squared off-diagonal.
    """
    count = 0
    q = d[0] - x
    tiny = np.finfo(float).tiny
    if q < 0:
        count += 1
    # a pivot near zero sends the next one to -inf, which still counts right
    with np.errstate(over="ignore", divide="ignore"):
        for i in range(1, d.size):
            if q == 0.0:
                q = tiny
            q = d[i] - x - e2[i - 1] / q
            if q < 0:
                count += 1
    return count


_MAX_BISECTIONS = 2000


def eig_sym_tridiag(L, tol=None):
    """Eigenvalues of a symmetric tridiagonal matrix by Sturm bisection.

    Parameters
    ----------
    L : SymTridiag
    tol : float, optional
        Absolute bracket width at which bisection stops. Defaults to
        ``1e-12 * ||L||``.

    Returns
    -------
    numpy.ndarray
        The ``n`` eigenvalues in nondecreasing order.
    """
    if not isinstance(L, SymTridiag):
        L = SymTridiag.from_dense(L)
    norm = L.norm()
    if tol is None:
        tol = 1e-12 * max(norm, np.finfo(float).tiny)
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    d = L.diag
    e2 = L.off ** 2
    # Gershgorin interval, widened so both ends are strict bounds
    pad = 2.0 * tol + 4.0 * np.finfo(float).eps * max(norm, 1.0)
    lower = -norm - pad
    upper = norm + pad
    out = np.empty(L.n)
    for k in range(L.n):
        lo, hi = lower, upper
        for _ in range(_MAX_BISECTIONS):
            if hi - lo <= tol:
                break
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if sturm_count(d, e2, mid) > k:
                hi = mid
            else:
                lo = mid
        else:
            raise RuntimeError(f"bisection did not converge for eigenvalue {k}")
        out[k] = 0.5 * (lo + hi)
    return out
