"""Geodesic-flow laboratory for Finsler metrics of constant positive flag
curvature on the 2-sphere: round and rotationally deformed (Katok-type)
norms, their Hamiltonian co-geodesic flows, closed-orbit and conjugate-point
analysis, and the perturbed metric with exactly two disjoint closed
geodesics."""

__version__ = "0.1.0"

from .analysis import detect_closure, find_closed_geodesics
from .charts import ChartId, PhaseState
from .counterexample import CounterexampleParams, PerturbedMetric, verify_counterexample
from .flow import IntegratorOptions, integrate, oracle_katok, psi_map
from .metrics import (
    ChainMetric,
    KatokMetric,
    RoundMetric,
    make_metric,
    metric_config,
    spectrum,
)
from .variational import variational_flow

__all__ = [
    "ChartId",
    "PhaseState",
    "ChainMetric",
    "KatokMetric",
    "RoundMetric",
    "PerturbedMetric",
    "CounterexampleParams",
    "IntegratorOptions",
    "integrate",
    "oracle_katok",
    "psi_map",
    "variational_flow",
    "detect_closure",
    "find_closed_geodesics",
    "verify_counterexample",
    "make_metric",
    "metric_config",
    "spectrum",
    "__version__",
]
