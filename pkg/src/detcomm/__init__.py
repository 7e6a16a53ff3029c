"""Simulator and security analyzer for deterministic single-photon
two-qubit communication with a publicly announced key."""

from .adversary import (
    EveStrategy,
    ForwardingMode,
    analytic_error_rate,
    error_bound,
    eve_intercept,
    optimal_strategy,
    post_key_recover,
    prekey_leakage,
    random_strategy,
)
from .protocol import SessionConfig, Transcript, run_session
from .scheme import OPTIMAL, SIMPLE, BitValue, SchemeParams, build_bases, qnd_vulnerability

__all__ = [
    "OPTIMAL",
    "SIMPLE",
    "BitValue",
    "EveStrategy",
    "ForwardingMode",
    "SchemeParams",
    "SessionConfig",
    "Transcript",
    "analytic_error_rate",
    "build_bases",
    "error_bound",
    "eve_intercept",
    "optimal_strategy",
    "post_key_recover",
    "prekey_leakage",
    "qnd_vulnerability",
    "random_strategy",
    "run_session",
]

__version__ = "0.1.0"
