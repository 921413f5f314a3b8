"""Distributed finite-convergence-time state estimation for LTI plants.

Sensors sit at the nodes of a directed graph. Each agent estimates the
initial condition of the state block it newly observes (in the multisensor
observable canonical form), and passes the finite-time estimate to the next
agent along a Hamiltonian walk.
"""

from fctdse._kernels import BACKEND
from fctdse.canonical import CanonicalForm, LtiSystem, decompose, validate
from fctdse.consensus import ConsensusConfig, consensus_rhs, run_omniscience
from fctdse.errors import (
    ConfigurationError,
    FctDseError,
    IntegrationError,
    NotJointlyObservableError,
    ProtocolError,
    StructuralError,
    ValidationError,
    WalkSearchError,
)
from fctdse.network import ChannelBuffer, DiGraph, SwitchingSchedule, WalkOrder, find_walk, validate_walk
from fctdse.numerics import adjugate_and_det, integrate, mat_exp, rank_and_range
from fctdse.observer import AgentObserver, ObserverConfig, fct_reconstruct, perturbed_output
from fctdse.sim import RunSummary, Scenario, Trace, load_scenario, run, scenario_from_dict

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AgentObserver",
    "CanonicalForm",
    "ChannelBuffer",
    "ConfigurationError",
    "ConsensusConfig",
    "DiGraph",
    "FctDseError",
    "IntegrationError",
    "LtiSystem",
    "NotJointlyObservableError",
    "ObserverConfig",
    "ProtocolError",
    "RunSummary",
    "Scenario",
    "StructuralError",
    "SwitchingSchedule",
    "Trace",
    "ValidationError",
    "WalkOrder",
    "WalkSearchError",
    "adjugate_and_det",
    "consensus_rhs",
    "decompose",
    "fct_reconstruct",
    "find_walk",
    "integrate",
    "load_scenario",
    "mat_exp",
    "perturbed_output",
    "rank_and_range",
    "run",
    "run_omniscience",
    "scenario_from_dict",
    "validate",
    "validate_walk",
]
