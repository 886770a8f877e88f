"""Deterministic, stochastic and dissipative Toda lattices and their continuum limit."""
from .algebra import (
    SymTridiag,
    coad_r,
    commutator,
    eig_sym_tridiag,
    pi_l,
    pi_lperp,
    pi_q,
    pi_qperp,
    ql_bracket,
    r_bracket,
    r_map,
    r_star,
    trace_pairing,
)
from .continuum import FieldState, Grid1D, lattice_embedding_compare, run_continuum
from .dissipation import detect_equilibrium, energy_decay_rate, run_dissipative
from .ensemble import EnsembleSpec, LatticeSystem, ObservableSeries, energy_bound_verdict, run_ensemble
from .exceptions import NonFiniteStateError, NumericalInstabilityError
from .integrate import OdeRunSpec, Trajectory, run_toda
from .lattice import FlaschkaState, PhysicalState, build_L, build_M
from .noise import WienerDriver
from .stochastic import NoiseConfig, SdeScheme, run_stochastic_toda

__version__ = "0.1.0"
