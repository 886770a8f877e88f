"""Stochastic Toda lattice (orbit-preserving noise) and its isospectral variant.

Bonds are indexed from 0. A noise amplitude ``sigma[i]`` multiplies the
symmetric unit pair at bond ``i``, and the stochastic potential is
``Tr(L^T sigma_i E_i) = 2 sigma_i b_i``.

Steppers ending in ``_update`` work on raw arrays (leading batch axes
allowed) and take explicit increments ``dW`` of shape ``(..., n - 1)``. The
``_step`` wrappers take state objects and draw from a :class:`WienerDriver`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .algebra import SymTridiag, coad_r, pi_q
from .exceptions import NonFiniteStateError
from .integrate import OdeRunSpec, integrate, packed_flaschka_field, packed_physical_field, rk4_step
from .lattice import FlaschkaState, PhysicalState, integrals, lax_field
from .noise import WienerDriver, brownian_increments, coarsen

__all__ = [
    "NoiseConfig",
    "SdeScheme",
    "stochastic_potential",
    "noise_flux_increment",
    "increment_covariance",
    "bond_matrix",
    "stochastic_toda_update",
    "stochastic_toda_step",
    "stochastic_toda_matrix_update",
    "stochastic_toda_matrix_step",
    "stochastic_toda_physical_update",
    "stochastic_toda_physical_step",
    "isospectral_noise_generator",
    "isospectral_pair_update",
    "isospectral_step",
    "eigenfunction_step",
    "run_stochastic_toda",
    "trace_drift_refinement",
]


@dataclass(frozen=True)
class NoiseConfig:
    """Per-bond noise amplitudes and the master seed."""

    sigma: np.ndarray
    seed: int = 0

    def __post_init__(self):
        s = np.array(self.sigma, dtype=float).reshape(-1)
        if np.any(~np.isfinite(s)) or np.any(s < 0):
            raise ValueError("sigma entries must be finite and nonnegative")
        s.flags.writeable = False
        object.__setattr__(self, "sigma", s)
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @classmethod
    def uniform(cls, n, sigma, seed=0):
        return cls(np.full(n - 1, float(sigma)), seed)

    @property
    def n_bonds(self):
        return self.sigma.size

    def is_uniform(self):
        return self.sigma.size == 0 or bool(np.all(self.sigma == self.sigma[0]))


class SdeScheme(enum.Enum):
    EULER_MARUYAMA = "euler-maruyama"
    STRATONOVICH_HEUN = "stratonovich-heun"


def _check_sigma(sigma, n):
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape[-1] != n - 1:
        raise ValueError(f"need {n - 1} noise amplitudes, got {sigma.shape[-1]}")
    return sigma


def stochastic_potential(L, i, cfg):
    """``Tr(L^T sigma_i E_i)`` for bond ``i`` (0-based)."""
    if not isinstance(L, SymTridiag):
        L = SymTridiag.from_dense(L)
    if not 0 <= i < L.n - 1:
        raise IndexError(f"bond index {i} out of range for n={L.n}")
    return 2.0 * cfg.sigma[i] * L.off[i]


def noise_flux_increment(b, sigma, dW):
    """``2 sigma_{i-1} b_{i-1} dW_{i-1} - 2 sigma_i b_i dW_i`` as a discrete divergence."""
    flux = 2.0 * sigma * b * dW
    da = np.zeros(flux.shape[:-1] + (flux.shape[-1] + 1,))
    da[..., :-1] -= flux
    da[..., 1:] += flux
    return da


def increment_covariance(b, sigma, dt):
    """Covariance of the noise part of ``da`` over one step (Ito isometry).

    With ``c_i = 4 sigma_i^2 b_i^2 dt`` the matrix is ``c_{i-1} + c_i`` on the
    diagonal, ``-c_i`` between sites ``i`` and ``i+1`` and zero elsewhere.
    """
    c = 4.0 * np.asarray(sigma, dtype=float) ** 2 * np.asarray(b, dtype=float) ** 2 * dt
    n = c.size + 1
    cov = np.zeros((n, n))
    i = np.arange(n - 1)
    cov[i, i] += c
    cov[i + 1, i + 1] += c
    cov[i, i + 1] = -c
    cov[i + 1, i] = -c
    return cov


def _finite(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NonFiniteStateError("state became non-finite")


def stochastic_toda_update(a, b, sigma, dt, dW):
    """One step in Flaschka variables.

    The drift is advanced by RK4; the noise is then added with ``b`` frozen at
    the start of the step (Euler-Maruyama, which is exact in law here because
    ``b`` carries no noise). With ``sigma = 0`` the result equals the
    deterministic RK4 step bit for bit.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[-1]
    y = rk4_step(packed_flaschka_field, np.concatenate([a, b], axis=-1), dt)
    a_new = y[..., :n] + noise_flux_increment(b, sigma, dW)
    b_new = y[..., n:]
    _finite(a_new)
    return a_new, b_new


def stochastic_toda_step(f, cfg, dt, driver):
    sigma = _check_sigma(cfg.sigma, f.n)
    dW = driver.increments(f.n - 1, dt)
    a, b = stochastic_toda_update(f.a, f.b, sigma, dt, dW)
    return FlaschkaState(a, b)


def bond_matrix(coeffs, n):
    """Symmetric tridiagonal matrix with zero diagonal and ``coeffs`` on the bonds."""
    coeffs = np.asarray(coeffs, dtype=float)
    out = np.zeros(coeffs.shape[:-1] + (n, n))
    i = np.arange(n - 1)
    out[..., i, i + 1] = coeffs
    out[..., i + 1, i] = coeffs
    return out


def stochastic_toda_matrix_update(L, sigma, dt, dW):
    """Matrix form: RK4 on ``-[pi_q L, L]`` plus ``coad_r(sum sigma_i dW_i E_i, L)``.

    The noise uses the dense coadjoint operator, so staying on the tridiagonal
    orbit is a property of the algebra, not something imposed here.
    """
    L = np.asarray(L, dtype=float)
    n = L.shape[-1]
    S = bond_matrix(np.asarray(sigma) * dW, n)
    out = rk4_step(lax_field, L, dt) + coad_r(S, L)
    _finite(out)
    return out


def stochastic_toda_matrix_step(L, cfg, dt, driver):
    L = np.asarray(L, dtype=float)
    sigma = _check_sigma(cfg.sigma, L.shape[-1])
    return stochastic_toda_matrix_update(L, sigma, dt, driver.increments(L.shape[-1] - 1, dt))


def stochastic_toda_physical_update(x, y, sigma, dt, dW):
    """Physical variables; noise enters the momentum equation only.

    ``dy_i`` gets ``2 sigma_{i-1} e^{(x_i - x_{i-1})/2} dW_{i-1} - 2 sigma_i
    e^{(x_{i+1} - x_i)/2} dW_i``. Under ``a = -y/2`` this matches the Flaschka
    form driven by ``-dW``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[-1]
    state = rk4_step(packed_physical_field, np.concatenate([x, y], axis=-1), dt)
    with np.errstate(over="ignore"):
        flux = 2.0 * sigma * np.exp(0.5 * np.diff(x, axis=-1)) * dW
    dy = np.zeros_like(y)
    dy[..., 1:] += flux
    dy[..., :-1] -= flux
    x_new, y_new = state[..., :n], state[..., n:] + dy
    _finite(x_new, y_new)
    return x_new, y_new


def stochastic_toda_physical_step(s, cfg, dt, driver):
    sigma = _check_sigma(cfg.sigma, s.n)
    x, y = stochastic_toda_physical_update(s.x, s.y, sigma, dt, driver.increments(s.n - 1, dt))
    return PhysicalState(x, y)


def isospectral_noise_generator(sigma, dW, n):
    """``sum_i (R sigma_i)^T dW_i`` = ``-pi_q S - S/2`` with ``S = sum sigma_i dW_i E_i``."""
    S = bond_matrix(np.asarray(sigma) * dW, n)
    return -pi_q(S) - 0.5 * S


def _iso_drift(L):
    return lax_field(L)


def isospectral_pair_update(L, psi, sigma, dt, dW, check=True):
    """Stratonovich-Heun step of the isospectral flow and its eigenfunction.

    ``dL = -[pi_q L, L] dt + [B, L]`` and ``dpsi = -pi_q L psi dt + B psi`` with
    ``B = sum (R sigma_i)^T o dW_i``. ``psi`` may be ``None``.
    """
    L = np.asarray(L, dtype=float)
    n = L.shape[-1]
    B = isospectral_noise_generator(sigma, dW, n)
    f0 = _iso_drift(L)
    g0 = B @ L - L @ B
    L_pred = L + f0 * dt + g0
    f1 = _iso_drift(L_pred)
    g1 = B @ L_pred - L_pred @ B
    L_new = L + 0.5 * (f0 + f1) * dt + 0.5 * (g0 + g1)
    if check:
        _finite(L_new)
    if psi is None:
        return L_new, None
    psi = np.asarray(psi, dtype=float)
    h0 = -(pi_q(L) @ psi[..., None])[..., 0]
    k0 = (B @ psi[..., None])[..., 0]
    psi_pred = psi + h0 * dt + k0
    h1 = -(pi_q(L_pred) @ psi_pred[..., None])[..., 0]
    k1 = (B @ psi_pred[..., None])[..., 0]
    psi_new = psi + 0.5 * (h0 + h1) * dt + 0.5 * (k0 + k1)
    _finite(psi_new)
    return L_new, psi_new


def _require_heun(scheme):
    scheme = SdeScheme(scheme)
    if scheme is not SdeScheme.STRATONOVICH_HEUN:
        raise ValueError(
            "the isospectral flow has state-dependent Stratonovich noise; "
            "use SdeScheme.STRATONOVICH_HEUN"
        )


def isospectral_step(L, cfg, dt, driver, scheme=SdeScheme.STRATONOVICH_HEUN):
    _require_heun(scheme)
    L = np.asarray(L, dtype=float)
    n = L.shape[-1]
    sigma = _check_sigma(cfg.sigma, n)
    L_new, _ = isospectral_pair_update(L, None, sigma, dt, driver.increments(n - 1, dt))
    return L_new


def eigenfunction_step(psi, L, cfg, dt, driver):
    """Advance ``psi`` alongside ``L``; returns ``(psi_new, L_new)`` on one increment."""
    L = np.asarray(L, dtype=float)
    n = L.shape[-1]
    sigma = _check_sigma(cfg.sigma, n)
    L_new, psi_new = isospectral_pair_update(L, psi, sigma, dt, driver.increments(n - 1, dt))
    return psi_new, L_new


def run_stochastic_toda(f0, cfg, spec: OdeRunSpec, stream=0):
    """Single path of the stochastic lattice in Flaschka variables.

    Steps leaving some ``b_i <= 0`` are counted in
    ``trajectory.diagnostics["positivity_breaches"]`` rather than raised.
    """
    sigma = _check_sigma(cfg.sigma, f0.n)
    driver = WienerDriver(cfg.seed, stream)
    n = f0.n
    breaches = 0

    def step(y, k):
        nonlocal breaches
        a, b = stochastic_toda_update(y[:n], y[n:], sigma, spec.dt, driver.increments(n - 1, spec.dt))
        if np.any(b <= 0):
            breaches += 1
        return np.concatenate([a, b])

    traj = integrate(None, f0.pack(), spec, "flaschka", step=step)
    traj.diagnostics["positivity_breaches"] = breaches
    return traj


def trace_drift_refinement(L0, sigma, t_end, dt_fine, factors, seeds, kmax=None):
    """Isospectral Heun runs on fixed Brownian paths at several step sizes.

    For each seed one fine path with step ``dt_fine`` is drawn and summed
    into coarser increments for every entry of ``factors``. Returns an array
    of shape ``(len(seeds), len(factors))`` holding ``max_t max_k |H_k(t) -
    H_k(0)|`` for each run.
    """
    L0 = np.asarray(L0, dtype=float)
    n = L0.shape[-1]
    sigma = _check_sigma(sigma, n)
    kmax = n if kmax is None else kmax
    n_fine = int(round(t_end / dt_fine))
    H0 = integrals(L0, kmax)
    out = np.zeros((len(seeds), len(factors)))
    for i, seed in enumerate(seeds):
        fine = brownian_increments(seed, 0, n_fine, n - 1, dt_fine)
        for j, factor in enumerate(factors):
            L = L0
            worst = 0.0
            for dW in coarsen(fine, factor):
                L, _ = isospectral_pair_update(L, None, sigma, factor * dt_fine, dW)
                worst = max(worst, np.abs(integrals(L, kmax) - H0).max())
            out[i, j] = worst
    return out
