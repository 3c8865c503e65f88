"""Two-proposal online rounding: exact, sampled and general modes."""
from capalloc.allocator.core import (
    BACKEND,
    AlgoConfig,
    ExactLimitError,
    Experiment,
    RoundTrace,
    RunTrace,
    SigmaCache,
    SimulationResult,
    theoretical_sample_count,
    prepare,
    run,
    run_general,
    run_sampled,
    simulate,
    simulate_tables,
)
from capalloc.allocator.rules import KAPPA, DerivedConstants, Tables, alpha, beta, build_tables

__all__ = [
    "BACKEND", "KAPPA", "AlgoConfig", "DerivedConstants", "ExactLimitError", "Experiment",
    "RoundTrace", "RunTrace", "SigmaCache", "SimulationResult", "Tables", "alpha", "beta",
    "build_tables", "theoretical_sample_count", "prepare", "run", "run_general", "run_sampled",
    "simulate", "simulate_tables",
]
