"""Monte Carlo ensembles over independent noise paths and their statistics.

Path ``p`` always uses Brownian stream ``p`` of the ensemble seed, all kernels
act row-wise on a batch of paths, and per-path values are gathered in path
order before any reduction. Results are therefore identical for every worker
count and chunking.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .algebra import eig_sym_tridiag
from .dissipation import packed_dissipative_field
from .integrate import OdeRunSpec, rk4_step
from .noise import BLOCK, normal_block
from .stochastic import isospectral_pair_update, noise_flux_increment

__all__ = [
    "SYSTEMS",
    "LatticeSystem",
    "EnsembleSpec",
    "ObservableSeries",
    "EnsembleResult",
    "BoundVerdict",
    "observable",
    "OBSERVABLES",
    "run_ensemble",
    "simulate_paths",
    "merge_series",
    "energy_bound",
    "energy_bound_verdict",
    "generator_estimate",
    "spectrum_drift",
    "tridiagonality_residual",
    "write_series_csv",
]

SYSTEMS = ("deterministic", "stochastic", "isospectral", "dissipative", "combined")


@dataclass(frozen=True)
class LatticeSystem:
    """Which lattice dynamics to run, from which initial ``(a, b)``."""

    kind: str
    a0: np.ndarray
    b0: np.ndarray
    sigma: np.ndarray | float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if self.kind not in SYSTEMS:
            raise ValueError(f"unknown system {self.kind!r}; expected one of {SYSTEMS}")
        a0 = np.array(self.a0, dtype=float).reshape(-1)
        b0 = np.array(self.b0, dtype=float).reshape(-1)
        if a0.size < 2 or b0.size != a0.size - 1:
            raise ValueError("need n >= 2 diagonal entries and n - 1 bond entries")
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), b0.shape).copy()
        if np.any(~np.isfinite(sigma)) or np.any(sigma < 0):
            raise ValueError("sigma must be finite and nonnegative")
        if not (math.isfinite(self.theta) and self.theta >= 0):
            raise ValueError("theta must be finite and nonnegative")
        if self.kind in ("deterministic", "stochastic", "isospectral") and self.theta != 0:
            raise ValueError(f"{self.kind} system takes no theta")
        if self.kind in ("deterministic", "dissipative") and np.any(sigma):
            raise ValueError(f"{self.kind} system takes no sigma")
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "b0", b0)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n(self):
        return self.a0.size

    @property
    def noisy(self):
        return bool(np.any(self.sigma))


@dataclass(frozen=True)
class EnsembleSpec:
    n_paths: int
    base_seed: int
    system: LatticeSystem
    run: OdeRunSpec
    n_workers: int = 1

    def __post_init__(self):
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ValueError(f"n_paths must be a positive integer, got {self.n_paths}")
        if int(self.n_workers) != self.n_workers or self.n_workers < 1:
            raise ValueError(f"n_workers must be a positive integer, got {self.n_workers}")
        if int(self.base_seed) != self.base_seed or not 0 <= self.base_seed < 2**64:
            raise ValueError(f"base_seed must be a 64-bit unsigned integer, got {self.base_seed}")


@dataclass(frozen=True)
class ObservableSeries:
    name: str
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    n_paths: int
    n_excluded: int = 0

    @property
    def stderr(self):
        if self.n_paths < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self.variance / self.n_paths)


@dataclass
class EnsembleResult:
    times: np.ndarray
    series: dict
    excluded: np.ndarray
    first_path: np.ndarray
    form: str
    diagnostics: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.series[name]


# observables act on a batch of Lax matrices given as (a, b) plus the full
# matrix when the state is not tridiagonal
OBSERVABLES = {}


def observable(name):
    def register(fn):
        OBSERVABLES[name] = fn
        return fn

    return register


def _dense(a, b):
    n = a.shape[-1]
    L = np.zeros(a.shape + (n,))
    i = np.arange(n)
    L[..., i, i] = a
    L[..., i[:-1], i[1:]] = b
    L[..., i[1:], i[:-1]] = b
    return L


def _trace_power(a, b, L, k):
    M = _dense(a, b) if L is None else L
    return np.trace(np.linalg.matrix_power(M, k), axis1=-2, axis2=-1) / k


@observable("H1")
def _h1(a, b, L=None):
    return a.sum(axis=-1)


@observable("H2")
def _h2(a, b, L=None):
    if L is None:
        return 0.5 * (a * a).sum(axis=-1) + (b * b).sum(axis=-1)
    return _trace_power(a, b, L, 2)


@observable("V")
def _potential(a, b, L=None):
    return (b * b).sum(axis=-1)


@observable("b_max")
def _bmax(a, b, L=None):
    return np.abs(b).max(axis=-1)


def _resolve(name):
    if name in OBSERVABLES:
        return OBSERVABLES[name]
    if name.startswith("H") and name[1:].isdigit() and int(name[1:]) >= 1:
        k = int(name[1:])
        return lambda a, b, L=None: _trace_power(a, b, L, k)
    raise KeyError(f"unknown observable {name!r}")


def _increments(seed, streams, block, width, dt):
    z = np.stack([normal_block(seed, p, block, width) for p in streams])
    return np.sqrt(dt) * z


def simulate_paths(system, run, seed, streams, observables=("H2",)):
    """Run the paths listed in ``streams`` as one batch.

    Returns ``(times, values, ok, first, breaches)``: ``values[name]`` has
    shape ``(len(streams), T)``, ``ok`` flags paths that stayed finite,
    ``first`` holds the recorded states of the first listed path and
    ``breaches`` counts steps per path that left some ``b_i <= 0``.
    """
    streams = [int(p) for p in streams]
    fns = {name: _resolve(name) for name in observables}
    n, dt = system.n, run.dt
    P = len(streams)
    iso = system.kind == "isospectral"
    if iso:
        y = np.broadcast_to(_dense(system.a0, system.b0), (P, n, n)).copy()
    else:
        y = np.tile(np.concatenate([system.a0, system.b0]), (P, 1))
        drift = packed_dissipative_field(system.theta)
    ok = np.ones(P, dtype=bool)
    breaches = np.zeros(P, dtype=int)
    record = set(run.record_steps())
    times, rows, first = [], {name: [] for name in fns}, []

    def snapshot(k, y):
        if iso:
            a = np.diagonal(y, axis1=-2, axis2=-1)
            b = np.diagonal(y, 1, axis1=-2, axis2=-1)
            L = y
        else:
            a, b, L = y[:, :n], y[:, n:], None
        times.append(k * dt)
        for name, fn in fns.items():
            rows[name].append(np.where(ok, fn(a, b, L), np.nan))
        first.append(y[0].reshape(-1).copy())

    snapshot(0, y)
    y_init = y[0].copy()
    dW = np.zeros((P, n - 1))
    with np.errstate(all="ignore"):
        for k in range(run.n_steps):
            if system.noisy:
                blk, off = divmod(k, BLOCK)
                if off == 0:
                    dW_block = _increments(seed, streams, blk, n - 1, dt)
                dW = dW_block[:, off]
            if iso:
                y, _ = isospectral_pair_update(y, None, system.sigma, dt, dW, check=False)
                bad = ~np.isfinite(y).all(axis=(-2, -1))
            else:
                b_old = y[:, n:]
                y = rk4_step(drift, y, dt, check=False)
                if system.noisy:
                    y = np.concatenate([y[:, :n] + noise_flux_increment(b_old, system.sigma, dW), y[:, n:]], axis=-1)
                bad = ~np.isfinite(y).all(axis=-1)
                breaches += ok & ~bad & np.any(y[:, n:] <= 0, axis=-1)
            if np.any(bad & ok):
                ok &= ~bad
                # reset to the initial state so dropped rows stay quiet
                y[bad] = y_init
            if k + 1 in record:
                snapshot(k + 1, y)
    values = {name: np.stack(v, axis=1) for name, v in rows.items()}
    return np.array(times), values, ok, np.array(first), breaches


def _chunk_job(args):
    return simulate_paths(*args)


def _chunks(n_paths, n_workers):
    bounds = np.linspace(0, n_paths, min(n_workers, n_paths) + 1).astype(int)
    return [range(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def _series(name, times, values, ok):
    kept = values[ok]
    m = kept.shape[0]
    if m == 0:
        nan = np.full(times.shape, np.nan)
        return ObservableSeries(name, times, nan, nan, 0, int((~ok).sum()))
    mean = kept.mean(axis=0)
    var = kept.var(axis=0, ddof=1) if m > 1 else np.zeros_like(mean)
    return ObservableSeries(name, times, mean, var, m, int((~ok).sum()))


def run_ensemble(spec, observables=("H2",)):
    """Simulate ``spec.n_paths`` paths and reduce the requested observables.

    Paths that turn non-finite are dropped from every statistic; their
    indices are listed in ``result.excluded``.
    """
    if not spec.system.noisy:
        return _run_noiseless(spec, observables)
    chunks = _chunks(spec.n_paths, spec.n_workers)
    jobs = [(spec.system, spec.run, spec.base_seed, list(c), tuple(observables)) for c in chunks]
    if len(jobs) == 1:
        parts = [_chunk_job(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            parts = list(pool.map(_chunk_job, jobs))
    times = parts[0][0]
    ok = np.concatenate([p[2] for p in parts])
    breaches = np.concatenate([p[4] for p in parts])
    series = {}
    for name in observables:
        values = np.concatenate([p[1][name] for p in parts])
        series[name] = _series(name, times, values, ok)
    form = "lax" if spec.system.kind == "isospectral" else "flaschka"
    diagnostics = {"positivity_breaches": int(breaches.sum())}
    return EnsembleResult(times, series, np.flatnonzero(~ok), parts[0][3], form, diagnostics)


def _run_noiseless(spec, observables):
    # every path is the same; simulate one and report zero variance
    times, values, ok, first, breaches = simulate_paths(spec.system, spec.run, spec.base_seed, [0], observables)
    m = spec.n_paths if ok[0] else 0
    series = {
        name: ObservableSeries(name, times, values[name][0], np.zeros(times.shape), m, spec.n_paths - m)
        for name in observables
    }
    excluded = np.arange(spec.n_paths) if m == 0 else np.arange(0)
    diagnostics = {"positivity_breaches": int(breaches[0]) * spec.n_paths}
    return EnsembleResult(times, series, excluded, first, "lax" if spec.system.kind == "isospectral" else "flaschka", diagnostics)


def merge_series(parts):
    """Pool series computed on disjoint path sets (Chan's parallel update)."""
    parts = [p for p in parts if p.n_paths > 0]
    if not parts:
        raise ValueError("nothing to merge")
    head = parts[0]
    n, mean, m2 = head.n_paths, head.mean, head.variance * max(head.n_paths - 1, 0)
    for p in parts[1:]:
        if not np.array_equal(p.times, head.times) or p.name != head.name:
            raise ValueError("series must share name and time grid")
        tot = n + p.n_paths
        delta = p.mean - mean
        mean = mean + delta * p.n_paths / tot
        m2 = m2 + p.variance * (p.n_paths - 1) + delta ** 2 * n * p.n_paths / tot
        n = tot
    var = m2 / (n - 1) if n > 1 else np.zeros_like(mean)
    excluded = sum(p.n_excluded for p in parts)
    return ObservableSeries(head.name, head.times, mean, var, n, excluded)


def energy_bound(h2_0, sigma, times):
    """``H_2(0) exp(4 sigma^2 t)`` with ``sigma`` the largest bond amplitude."""
    s = float(np.max(sigma)) if np.size(sigma) else 0.0
    return h2_0 * np.exp(4.0 * s * s * np.asarray(times))


@dataclass(frozen=True)
class BoundVerdict:
    holds: bool
    margin: np.ndarray


def energy_bound_verdict(series, sigma, h2_0=None, rtol=1e-9):
    """Check ``mean <= H_2(0) e^{4 sigma^2 t} (1 + 3 SE / mean)`` at every recorded time.

    ``margin`` is the right side minus the mean (nonnegative where the bound
    holds). ``rtol`` absorbs the time-stepping error of the drift, which is
    all that is left when ``sigma = 0``.
    """
    if h2_0 is None:
        h2_0 = series.mean[0]
    bound = energy_bound(h2_0, sigma, series.times)
    with np.errstate(divide="ignore", invalid="ignore"):
        slack = bound * (1.0 + 3.0 * series.stderr / np.abs(series.mean))
    slack = np.where(np.isfinite(slack), slack, bound)
    margin = slack - series.mean
    return BoundVerdict(bool(np.all(margin >= -rtol * np.abs(bound))), margin)


def generator_estimate(series):
    """Forward-difference estimate of ``d/dt E[f]`` between recorded times."""
    return np.diff(series.mean) / np.diff(series.times)


def _eigenvalues(M):
    if tridiagonality_residual(M) == 0.0 and np.array_equal(M, M.T):
        return eig_sym_tridiag(M)
    return np.linalg.eigvalsh(M)


def spectrum_drift(matrices):
    """``max_k |lambda_k(t) - lambda_k(0)|`` for each snapshot, eigenvalues sorted.

    Accepts a stack of symmetric matrices or a :class:`Trajectory`. Jacobi
    matrices go through the Sturm bisection solver.
    """
    if hasattr(matrices, "lax_matrices"):
        matrices = matrices.lax_matrices()
    mats = np.asarray(matrices, dtype=float)
    ref = _eigenvalues(mats[0])
    return np.array([np.abs(_eigenvalues(M) - ref).max() for M in mats])


def tridiagonality_residual(L):
    """Max-abs of the entries with ``|i - j| >= 2`` (zero for a Jacobi matrix)."""
    L = np.asarray(L, dtype=float)
    n = L.shape[-1]
    i, j = np.indices((n, n))
    mask = np.abs(i - j) >= 2
    if not mask.any():
        return 0.0
    return float(np.abs(L[..., mask]).max())


def write_series_csv(path, series):
    with open(path, "w") as fh:
        fh.write("t,mean,variance,stderr,n_paths\n")
        for t, m, v, s in zip(series.times, series.mean, series.variance, series.stderr):
            fh.write(f"{float(t)!r},{float(m)!r},{float(v)!r},{float(s)!r},{series.n_paths}\n")
