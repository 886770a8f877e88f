"""Fixed-step RK4 integration of the deterministic Toda flow in three forms."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .algebra import SymTridiag
from .exceptions import NonFiniteStateError
from .lattice import (
    FlaschkaState,
    PhysicalState,
    flaschka_field,
    flaschka_from_physical,
    lax_field,
    physical_field,
    physical_from_flaschka,
)

__all__ = [
    "OdeRunSpec",
    "Trajectory",
    "rk4_step",
    "integrate",
    "run_toda",
    "packed_flaschka_field",
    "packed_physical_field",
    "FORMS",
]

FORMS = ("flaschka", "physical", "lax")


@dataclass(frozen=True)
class OdeRunSpec:
    dt: float
    t_end: float
    record_every: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ValueError(f"t_end must be positive and finite, got {self.t_end}")
        if self.dt > self.t_end:
            raise ValueError("dt must not exceed t_end")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ValueError(f"record_every must be a positive integer, got {self.record_every}")

    @property
    def n_steps(self):
        """Number of steps; ``t_end`` is rounded to the nearest multiple of ``dt``."""
        return max(1, int(round(self.t_end / self.dt)))

    def record_steps(self):
        """Step indices at which snapshots are taken (always includes 0 and the last)."""
        steps = list(range(0, self.n_steps + 1, int(self.record_every)))
        if steps[-1] != self.n_steps:
            steps.append(self.n_steps)
        return steps


@dataclass
class Trajectory:
    """Recorded snapshots of one run.

    ``states`` stacks snapshots on axis 0: packed ``[a, b]`` vectors for the
    Flaschka form, packed ``[x, y]`` for the physical form, dense matrices for
    the Lax form.
    """

    times: np.ndarray
    states: np.ndarray
    form: str = "flaschka"
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.shape[0] != self.states.shape[0]:
            raise ValueError("times and states must have equal length")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return self.times.size

    @property
    def n(self):
        if self.form == "flaschka":
            return (self.states.shape[-1] + 1) // 2
        if self.form == "physical":
            return self.states.shape[-1] // 2
        return self.states.shape[-1]

    def flaschka(self):
        """Return ``(a, b)`` arrays of shape ``(T, n)`` and ``(T, n - 1)``."""
        n = self.n
        if self.form == "flaschka":
            return self.states[:, :n], self.states[:, n:]
        if self.form == "physical":
            x, y = self.states[:, :n], self.states[:, n:]
            return -0.5 * y, 0.5 * np.exp(0.5 * np.diff(x, axis=-1))
        a = np.diagonal(self.states, axis1=-2, axis2=-1).copy()
        b = 0.5 * (
            np.diagonal(self.states, 1, axis1=-2, axis2=-1)
            + np.diagonal(self.states, -1, axis1=-2, axis2=-1)
        )
        return a, b

    def lax_matrices(self):
        """Dense Lax matrices for every snapshot."""
        if self.form == "lax":
            return self.states
        a, b = self.flaschka()
        out = np.zeros((len(self), self.n, self.n))
        i = np.arange(self.n)
        out[:, i, i] = a
        out[:, i[:-1], i[1:]] = b
        out[:, i[1:], i[:-1]] = b
        return out


def _check_finite(state):
    if not np.all(np.isfinite(state)):
        raise NonFiniteStateError("state became non-finite")


def rk4_step(drift, state, dt, check=True):
    """One classical Runge-Kutta step of ``d state/dt = drift(state)``.

    With ``check=False`` non-finite results are returned instead of raised,
    which lets batched callers drop individual rows.
    """
    k1 = drift(state)
    k2 = drift(state + 0.5 * dt * k1)
    k3 = drift(state + 0.5 * dt * k2)
    k4 = drift(state + dt * k3)
    out = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if check:
        _check_finite(out)
    return out


def integrate(drift, y0, spec, form="flaschka", step=None):
    """Run ``step`` (RK4 on ``drift`` by default) and record per ``spec``."""
    if step is None:
        def step(y, k):
            return rk4_step(drift, y, spec.dt)

    y = np.array(y0, dtype=float)
    _check_finite(y)
    wanted = set(spec.record_steps())
    times, states = [0.0], [y.copy()]
    for k in range(1, spec.n_steps + 1):
        y = step(y, k - 1)
        if k in wanted:
            times.append(k * spec.dt)
            states.append(y.copy())
    return Trajectory(np.array(times), np.array(states), form=form)


def packed_flaschka_field(y):
    n = (y.shape[-1] + 1) // 2
    da, db = flaschka_field(y[..., :n], y[..., n:])
    return np.concatenate([da, db], axis=-1)


def packed_physical_field(y):
    n = y.shape[-1] // 2
    with np.errstate(over="ignore"):
        dx, dy = physical_field(y[..., :n], y[..., n:])
    return np.concatenate([dx, dy], axis=-1)


def run_toda(form, init, spec):
    """Integrate the open Toda lattice in the requested form.

    Parameters
    ----------
    form : {"flaschka", "physical", "lax"}
    init : FlaschkaState, PhysicalState, SymTridiag or dense matrix
        Converted to the chosen form when needed (physical needs positive ``b``).
    spec : OdeRunSpec
    """
    if form not in FORMS:
        raise ValueError(f"unknown form {form!r}; expected one of {FORMS}")
    if form == "flaschka":
        f = _to_flaschka(init)
        return integrate(packed_flaschka_field, f.pack(), spec, form)
    if form == "physical":
        if isinstance(init, PhysicalState):
            s = init
        else:
            s = physical_from_flaschka(_to_flaschka(init))
        return integrate(packed_physical_field, s.pack(), spec, form)
    if isinstance(init, np.ndarray) and init.ndim == 2:
        L0 = init
    else:
        L0 = _to_flaschka(init).matrix().dense()
    return integrate(lax_field, L0, spec, form)


def _to_flaschka(init):
    if isinstance(init, FlaschkaState):
        return init
    if isinstance(init, PhysicalState):
        return flaschka_from_physical(init)
    if isinstance(init, SymTridiag):
        return FlaschkaState(init.diag, init.off)
    L = SymTridiag.from_dense(init)
    return FlaschkaState(L.diag, L.off)
