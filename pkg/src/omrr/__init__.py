"""Online matching with reusable resources under known arrival distributions."""

from __future__ import annotations

from .attenuation import AttenuationTable, ValidityBreach, beta_exact, beta_monte_carlo
from .hardness import HardnessParams, hardness_bound, hardness_instance, recursion_evaluate
from .lp import LpSolution, build_benchmark_lp, check_solution, solve_instance, solve_lp
from .model import (
    ArrivalProcess,
    Instance,
    InvalidInstance,
    OccupationDistribution,
    load_instance,
    save_instance,
    validate_instance,
)
from .oracle import offline_optimal
from .policies import POLICIES, Policy, make_policy
from .sim import EvaluationReport, evaluate, run_episode, run_sequence

__version__ = "0.1.0"

__all__ = [
    "ArrivalProcess",
    "AttenuationTable",
    "EvaluationReport",
    "HardnessParams",
    "Instance",
    "InvalidInstance",
    "LpSolution",
    "OccupationDistribution",
    "POLICIES",
    "Policy",
    "ValidityBreach",
    "beta_exact",
    "beta_monte_carlo",
    "build_benchmark_lp",
    "check_solution",
    "evaluate",
    "hardness_bound",
    "hardness_instance",
    "load_instance",
    "make_policy",
    "offline_optimal",
    "recursion_evaluate",
    "run_episode",
    "run_sequence",
    "save_instance",
    "solve_instance",
    "solve_lp",
    "validate_instance",
]
