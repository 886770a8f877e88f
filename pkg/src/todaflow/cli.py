"""Batch entry point: ``todaflow run <config> [--override key=value ...] [--quiet]``.

The config is line-oriented ``key = value`` text with ``#`` comments and
comma-separated lists. Exit status is 0 on success, 1 for configuration
errors (including a missing file) and 2 for numerical failure.
"""
from __future__ import annotations

import argparse
import math
import os
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .continuum import FieldState, Grid1D, VISCOSITIES, continuum_energy, continuum_momentum, run_continuum, write_field_csv
from .ensemble import (
    EnsembleSpec,
    LatticeSystem,
    ObservableSeries,
    energy_bound_verdict,
    run_ensemble,
    spectrum_drift,
    tridiagonality_residual,
    write_series_csv,
)
from .exceptions import NonFiniteStateError, NumericalInstabilityError
from .integrate import FORMS, OdeRunSpec, run_toda
from .lattice import FlaschkaState
from .noise import WienerDriver

__all__ = ["ConfigError", "RunConfig", "parse_config", "build_initial", "execute", "main"]

SYSTEMS = ("deterministic", "stochastic", "isospectral", "dissipative", "combined", "continuum")
NAMED_INITS = ("rest-equal-spacing", "two-soliton-like", "random", "smooth-sine", "explicit")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    system: str = ""
    n: int = 0
    t_end: float = 0.0
    dt: float = 1e-3
    record_every: int = 10
    sigma: list = field(default_factory=lambda: [0.0])
    theta: float = 0.0
    seed: int = 0
    n_paths: int = 1
    workers: int = 1
    form: str = "flaschka"
    init: str = ""
    init_a: list = field(default_factory=list)
    init_b: list = field(default_factory=list)
    length: float = 2 * math.pi
    viscosity: str = "linear"
    observables: list = field(default_factory=lambda: ["H1", "H2", "H3", "H4", "V", "b_max"])
    output_dir: str = ""

    def bond_sigma(self):
        """Per-bond amplitudes; a single value is broadcast to every bond."""
        if len(self.sigma) == 1:
            return np.full(self.n - 1, self.sigma[0])
        return np.array(self.sigma, dtype=float)

    def run_spec(self):
        return OdeRunSpec(self.dt, self.t_end, self.record_every)

    def manifest(self):
        """Every run parameter, one per line.

        ``workers`` and ``output_dir`` only decide where and how fast the run
        happens, so they are left out and the manifest is as reproducible as
        the data files.
        """
        lines = []
        for f in fields(self):
            if f.name in ("workers", "output_dir"):
                continue
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _float_list(s):
    return [_float(x) for x in s.split(",") if x.strip()]


def _str_list(s):
    return [x.strip() for x in s.split(",") if x.strip()]


_KEYS = {
    "system": str,
    "n": int,
    "t_end": _float,
    "dt": _float,
    "record_every": int,
    "sigma": _float_list,
    "theta": _float,
    "seed": int,
    "n_paths": int,
    "workers": int,
    "form": str,
    "init": str,
    "init_a": _float_list,
    "init_b": _float_list,
    "length": _float,
    "viscosity": str,
    "observables": _str_list,
    "output_dir": str,
}


def _parse_lines(items, cfg, seen):
    for where, raw in items:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        try:
            parsed = _KEYS[key](value)
        except ValueError:
            raise ConfigError(f"{where}: {key} has invalid value {value!r}") from None
        setattr(cfg, key, parsed)
        seen[key] = where


def parse_config(text, overrides=()):
    """Parse and fully validate a run configuration.

    ``overrides`` are extra ``key=value`` strings applied after the file.
    Every error names the line (or override) it comes from.
    """
    cfg = RunConfig()
    seen = {}
    _parse_lines(((f"line {i}", raw) for i, raw in enumerate(text.splitlines(), 1)), cfg, seen)
    _parse_lines(((f"override {i}", raw) for i, raw in enumerate(overrides, 1)), cfg, seen)
    _validate(cfg, seen)
    return cfg


def _validate(cfg, seen):
    def fail(key, msg):
        where = seen.get(key, "config")
        raise ConfigError(f"{where}: {key} {msg}")

    for key in ("system", "n", "t_end"):
        if key not in seen:
            raise ConfigError(f"config: missing required key {key!r}")
    if cfg.system not in SYSTEMS:
        fail("system", f"must be one of {', '.join(SYSTEMS)}")
    continuum = cfg.system == "continuum"
    if cfg.n < (8 if continuum else 2):
        fail("n", f"must be at least {8 if continuum else 2}")
    if not cfg.dt > 0:
        fail("dt", "must be positive")
    if not cfg.t_end > 0:
        fail("t_end", "must be positive")
    if cfg.dt > cfg.t_end:
        fail("dt", "must not exceed t_end")
    if cfg.record_every < 1:
        fail("record_every", "must be at least 1")
    if cfg.n_paths < 1:
        fail("n_paths", "must be at least 1")
    if cfg.workers < 1:
        fail("workers", "must be at least 1")
    if not 0 <= cfg.seed < 2**64:
        fail("seed", "must be a 64-bit unsigned integer")
    if cfg.theta < 0:
        fail("theta", "must be nonnegative")
    if not cfg.length > 0:
        fail("length", "must be positive")
    if not cfg.sigma or any(s < 0 for s in cfg.sigma):
        fail("sigma", "must be one value or a list of nonnegative values")
    if continuum and len(cfg.sigma) != 1:
        fail("sigma", "must be a single value for the continuum system")
    if not continuum and len(cfg.sigma) not in (1, cfg.n - 1):
        fail("sigma", f"needs 1 or n - 1 = {cfg.n - 1} entries")
    if cfg.form not in FORMS:
        fail("form", f"must be one of {', '.join(FORMS)}")
    if cfg.form != "flaschka" and cfg.system != "deterministic":
        fail("form", "other than flaschka is only available for the deterministic system")
    if cfg.viscosity not in VISCOSITIES:
        fail("viscosity", f"must be one of {', '.join(VISCOSITIES)}")
    noisy = any(s > 0 for s in cfg.sigma)
    if cfg.system in ("deterministic", "dissipative") and noisy:
        fail("sigma", f"must be 0 for the {cfg.system} system")
    if cfg.system in ("deterministic", "stochastic", "isospectral") and cfg.theta != 0:
        fail("theta", f"must be 0 for the {cfg.system} system")
    if not continuum:
        for name in cfg.observables:
            if name not in ("V", "b_max") and not re.fullmatch(r"H[1-9][0-9]*", name):
                fail("observables", f"has unknown entry {name!r}")
    _validate_init(cfg, seen, fail)
    if not cfg.output_dir:
        cfg.output_dir = os.environ.get("TODA_OUTPUT_DIR", "toda_output")


def _validate_init(cfg, seen, fail):
    explicit = "init_a" in seen or "init_b" in seen
    if not cfg.init:
        if not explicit:
            raise ConfigError("config: missing initial condition (init or init_a/init_b)")
        cfg.init = "explicit"
    name, args = _split_init(cfg.init)
    if name is None or name not in NAMED_INITS:
        fail("init", f"must be one of {', '.join(NAMED_INITS)} (random takes (seed, scale))")
    if name == "explicit":
        m = cfg.n if cfg.system == "continuum" else cfg.n - 1
        if len(cfg.init_a) != cfg.n:
            fail("init_a", f"needs {cfg.n} entries")
        if len(cfg.init_b) != m:
            fail("init_b", f"needs {m} entries")
        if cfg.system != "continuum" and any(v <= 0 for v in cfg.init_b):
            fail("init_b", "entries must be positive")
    elif explicit:
        fail("init", "cannot be combined with init_a/init_b")
    if name == "random" and (len(args) != 2 or args[1] < 0 or int(args[0]) != args[0]):
        fail("init", "random needs (seed, scale) with an integer seed and scale >= 0")
    if name != "random" and args:
        fail("init", f"{name} takes no arguments")


def _split_init(text):
    m = re.fullmatch(r"\s*([a-z-]+)\s*(?:\((.*)\))?\s*", text)
    if not m:
        return None, []
    try:
        args = [float(x) for x in m.group(2).split(",")] if m.group(2) else []
    except ValueError:
        return None, []
    return m.group(1), args


def build_initial(cfg):
    """Initial ``(a, b)`` for the configured descriptor.

    ``b`` has ``n - 1`` entries on the lattice and ``n`` on the continuum grid.
    """
    n = cfg.n
    continuum = cfg.system == "continuum"
    m = n if continuum else n - 1
    name, args = _split_init(cfg.init)
    if name == "explicit":
        return np.array(cfg.init_a, dtype=float), np.array(cfg.init_b, dtype=float)
    if name == "rest-equal-spacing":
        # zero momenta, unit-free equal spacing x_{i+1} - x_i = 0
        return np.zeros(n), np.full(m, 0.5)
    if name == "two-soliton-like":
        # two opposite momentum kicks at a quarter and three quarters of the chain
        a = np.zeros(n)
        a[n // 4] = -1.0
        a[(3 * n) // 4] = 1.0
        return a, np.full(m, 0.5)
    if name == "random":
        rng = np.random.default_rng(int(args[0]))
        scale = args[1]
        return scale * rng.standard_normal(n), 0.5 * np.exp(0.5 * scale * rng.standard_normal(m))
    x = cfg.length * np.arange(n) / n
    # on the chain, bonds sit halfway between sites
    xb = x if continuum else x[:-1] + 0.5 * cfg.length / n
    return 0.2 * np.sin(x), 0.5 + 0.1 * np.cos(xb)


def _fmt(v):
    return repr(float(v))


def _write_rows(path, header, times, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for t, row in zip(times, rows):
            fh.write(",".join([_fmt(t)] + [_fmt(v) for v in row]) + "\n")


def _state_header(n, form):
    if form == "flaschka":
        return [f"a{i}" for i in range(n)] + [f"b{i}" for i in range(n - 1)]
    if form == "physical":
        return [f"x{i}" for i in range(n)] + [f"y{i}" for i in range(n)]
    return [f"L{i}_{j}" for i in range(n) for j in range(n)]


def _drift(series):
    """Largest change of the mean relative to its initial value.

    Absolute when the initial value is below 1e-8, as for zero total momentum.
    """
    m0 = series.mean[0]
    d = np.nanmax(np.abs(series.mean - m0))
    return d / abs(m0) if abs(m0) > 1e-8 else d


def _run_lattice(cfg, out, log):
    a0, b0 = build_initial(cfg)
    sigma = cfg.bond_sigma()
    system = LatticeSystem(cfg.system, a0, b0, sigma, cfg.theta)
    names = list(dict.fromkeys(list(cfg.observables) + ["H2"]))
    spec = EnsembleSpec(cfg.n_paths, cfg.seed, system, cfg.run_spec(), cfg.workers)
    log(f"running {cfg.n_paths} path(s) of the {cfg.system} lattice, n={cfg.n}")
    result = run_ensemble(spec, names)
    if len(result.excluded) == cfg.n_paths:
        raise NonFiniteStateError("every path became non-finite")

    if cfg.system == "deterministic" and cfg.form != "flaschka":
        traj = run_toda(cfg.form, FlaschkaState(a0, b0), cfg.run_spec())
        times, states = traj.times, traj.states.reshape(len(traj), -1)
    else:
        times, states = result.times, result.first_path
    form = cfg.form if cfg.system == "deterministic" else result.form
    _write_rows(out / "trajectory.csv", ["t"] + _state_header(cfg.n, form), times, states)
    for name in names:
        write_series_csv(out / f"observable_{name}.csv", result[name])

    summary = {
        "system": cfg.system,
        "n_paths": result[names[0]].n_paths,
        "n_excluded": len(result.excluded),
        "positivity_breaches": result.diagnostics["positivity_breaches"],
    }
    verdict = energy_bound_verdict(result["H2"], sigma)
    summary["bound_holds"] = "true" if verdict.holds else "false"
    summary["bound_min_margin"] = _fmt(np.min(verdict.margin))
    for name in names:
        if re.fullmatch(r"H\d+", name):
            summary[f"drift_{name}"] = _fmt(_drift(result[name]))
    mats = states.reshape(len(times), cfg.n, cfg.n) if form == "lax" else None
    if mats is None:
        a, b = states[:, :cfg.n], states[:, cfg.n:]
        if form == "physical":
            a, b = -0.5 * states[:, cfg.n:], 0.5 * np.exp(0.5 * np.diff(states[:, :cfg.n], axis=-1))
        mats = np.zeros((len(times), cfg.n, cfg.n))
        i = np.arange(cfg.n)
        mats[:, i, i] = a
        mats[:, i[:-1], i[1:]] = b
        mats[:, i[1:], i[:-1]] = b
    summary["tridiagonality_residual_max"] = _fmt(tridiagonality_residual(mats))
    summary["spectrum_drift_max"] = _fmt(spectrum_drift(mats).max())
    summary["b_max_final"] = _fmt(np.abs(np.diagonal(mats[-1], 1)).max())
    return summary


def _run_continuum_paths(cfg, out, log):
    a0, b0 = build_initial(cfg)
    grid = Grid1D.periodic(cfg.n, cfg.length)
    f0 = FieldState(a0, b0)
    sigma = cfg.sigma[0]
    log(f"running {cfg.n_paths} continuum path(s) on {cfg.n} points")
    momenta, energies = [], []
    times = None
    for p in range(cfg.n_paths):
        driver = WienerDriver(cfg.seed, p) if sigma > 0 else None
        times, snaps = run_continuum(f0, grid, cfg.dt, cfg.t_end, cfg.theta, sigma, driver,
                                     cfg.record_every, viscosity=cfg.viscosity)
        if p == 0:
            write_field_csv(out / "fields.csv", times, snaps, grid)
        momenta.append([continuum_momentum(s, grid) for s in snaps])
        energies.append([continuum_energy(s, grid) for s in snaps])
    summary = {"system": "continuum", "n_paths": cfg.n_paths, "n_excluded": 0}
    for name, vals in (("momentum", np.array(momenta)), ("energy", np.array(energies))):
        var = vals.var(axis=0, ddof=1) if cfg.n_paths > 1 else np.zeros(vals.shape[1])
        series = ObservableSeries(name, times, vals.mean(axis=0), var, cfg.n_paths)
        write_series_csv(out / f"observable_{name}.csv", series)
        summary[f"drift_{name}"] = _fmt(_drift(series))
    return summary


def execute(cfg, log=print):
    """Run a validated config and write every output under ``cfg.output_dir``."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.txt").write_text(cfg.manifest())
    if cfg.system == "continuum":
        summary = _run_continuum_paths(cfg, out, log)
    else:
        summary = _run_lattice(cfg, out, log)
    (out / "summary.txt").write_text("".join(f"{k}={v}\n" for k, v in summary.items()))
    return summary


def main(argv=None):
    parser = argparse.ArgumentParser(prog="todaflow", description="Toda lattice simulations")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a configuration file")
    run.add_argument("config")
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    run.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    def log(msg):
        if not args.quiet:
            print(msg)

    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(text, args.override)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        summary = execute(cfg, log)
    except (NonFiniteStateError, NumericalInstabilityError, OverflowError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    for k, v in summary.items():
        log(f"{k}={v}")
    log(f"outputs written to {cfg.output_dir}")
    return 0
