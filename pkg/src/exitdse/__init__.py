"""Hardware-aware design-space exploration for early-exit networks."""

from .calibration import CalibrationTrace, evaluate, load_trace, store_trace
from .dse import (
    Objective,
    ParetoFront,
    SaConfig,
    brute_force,
    design_metrics,
    optimize,
    random_search,
    score,
    tune_wlat,
)
from .network import DesignPoint, NetworkSpec, enumerate_designs, load_network
from .perf import (
    DesignMetrics,
    DeviceProfile,
    deployed_memory,
    expected_latency,
    load_profile,
    memory_footprint,
    worst_case_latency,
)
from .sdf import ExitRateVector, build_graph, build_matrices, propagate_rates
from .simulator import TraceGenSpec, generate_trace, simulate, truncate_for_budget
from .transforms import ConfTune, ExitRepos, TransformEngine

__version__ = "0.1.0"

__all__ = [
    "brute_force",
    "build_graph",
    "build_matrices",
    "CalibrationTrace",
    "ConfTune",
    "deployed_memory",
    "design_metrics",
    "DesignMetrics",
    "DesignPoint",
    "DeviceProfile",
    "enumerate_designs",
    "evaluate",
    "ExitRateVector",
    "ExitRepos",
    "expected_latency",
    "generate_trace",
    "load_network",
    "load_profile",
    "load_trace",
    "memory_footprint",
    "NetworkSpec",
    "Objective",
    "optimize",
    "ParetoFront",
    "propagate_rates",
    "random_search",
    "SaConfig",
    "score",
    "simulate",
    "store_trace",
    "TraceGenSpec",
    "TransformEngine",
    "truncate_for_budget",
    "tune_wlat",
    "worst_case_latency",
]
