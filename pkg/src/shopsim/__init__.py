"""Synthetic retail transaction data from a four-stage customer choice model."""

__version__ = "0.1.0"

from .analytics import (  # noqa: E402
    ElasticityComponents,
    MetricsReport,
    compute_metrics,
    elasticity_components,
    elasticity_table,
    segment_customers,
)
from .calibration import SearchSpace, calibrate, ks_complement, objective  # noqa: E402
from .config import load_config, parse_config  # noqa: E402
from .population import PriorSet, build_catalog, sample_population  # noqa: E402
from .pricing import BASELINE_POLICY, SCENARIO_POLICIES, DiscountPolicy, generate_price_paths  # noqa: E402
from .rng import DistributionSpec, Stage, StreamKey  # noqa: E402
from .simulator import SimulationConfig, export_log, read_log, run_simulation  # noqa: E402

__all__ = [
    "BASELINE_POLICY",
    "SCENARIO_POLICIES",
    "DiscountPolicy",
    "DistributionSpec",
    "ElasticityComponents",
    "MetricsReport",
    "PriorSet",
    "SearchSpace",
    "SimulationConfig",
    "Stage",
    "StreamKey",
    "build_catalog",
    "calibrate",
    "compute_metrics",
    "elasticity_components",
    "elasticity_table",
    "export_log",
    "generate_price_paths",
    "ks_complement",
    "load_config",
    "objective",
    "parse_config",
    "read_log",
    "run_simulation",
    "sample_population",
    "segment_customers",
]
