"""Conservative-cascade modeling and multifractal analysis of IP address sets."""

from .addrspace import (
    AddressParseError,
    AddressSet,
    AddressUniverse,
    CapacityMap,
    DEFAULT_RESERVED_V4,
    Prefix,
    dyadic_interval,
    parse_addresses,
    parse_prefix,
    range_to_prefixes,
    v6_universe,
)
from .allocation import (
    InclusionTree,
    PrefixRecord,
    approx_max_aggregates,
    build_inclusion_tree,
    max_aggregation_runs,
    percent_covered,
    width_depth_stats,
)
from .anomaly import (
    AnomalyScore,
    DetectorConfig,
    DetectorState,
    delta_tau_report,
    detector_init,
    hotelling_score,
    lag_sweep,
    observe,
    preload,
    synth_anomalous,
)
from .cascade import (
    CascadeSpec,
    CriticalRanges,
    GeneratorModel,
    InfeasibleSplitError,
    SpilloverLog,
    critical_q_range,
    generate,
    sample_weight,
    split_mass,
    theoretical_tau,
)
from .fitting import (
    FitResult,
    InsufficientDataError,
    SplitWeight,
    compute_weights,
    fit_sigma,
    preprocess,
    weight_histogram,
)
from .masstree import PrefixMassTree, build_mass_tree, zoom_path
from .moments import (
    DimensionsReport,
    PartitionTable,
    StructureEstimate,
    generalized_dimensions,
    linearity_test,
    partition_function,
    singleton_fraction,
    tau_tilde_avg,
    tau_tilde_level,
)

__version__ = "0.1.0"
