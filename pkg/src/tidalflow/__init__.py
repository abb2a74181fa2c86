"""Tidal-regularized factorization of origin-destination temporal flows,
station-to-user transfer, and clustering-stability benchmarking."""

from tidalflow.backend import BACKEND_NAME, available_backends
from tidalflow.clustering import (
    ClusterLabels,
    MethodParams,
    StabilityConfig,
    StabilityReport,
    adjusted_rand_index,
    kmeans_pp,
    partition_for_stability,
    run_method,
    stability_test,
    summarize_stability,
)
from tidalflow.data import (
    FlowMatrix,
    ODPairIndex,
    SyntheticSpec,
    TripDatabase,
    TripRecord,
    build_od_flow_matrix,
    build_user_flow_matrix,
    filter_users_by_trip_count,
    generate_synthetic_trips,
    parse_trip_csv,
)
from tidalflow.factorization import (
    EpochSplits,
    FactorModel,
    SemanticGroups,
    TrainConfig,
    TrainResult,
    classify_components,
    generic_loss,
    init_factors,
    loss_gradients,
    normalize_factors,
    permute_components,
    reorder_factors,
    tidal_loss,
    total_loss,
    train,
)
from tidalflow.seeding import derive_seed
from tidalflow.transfer import (
    ProjectionResult,
    StationFunctionScores,
    UserWeights,
    aggregate_station_flows,
    aggregate_user_weights,
    project_users,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAME",
    "available_backends",
    "ClusterLabels",
    "MethodParams",
    "StabilityConfig",
    "StabilityReport",
    "adjusted_rand_index",
    "kmeans_pp",
    "partition_for_stability",
    "run_method",
    "stability_test",
    "summarize_stability",
    "FlowMatrix",
    "ODPairIndex",
    "SyntheticSpec",
    "TripDatabase",
    "TripRecord",
    "build_od_flow_matrix",
    "build_user_flow_matrix",
    "filter_users_by_trip_count",
    "generate_synthetic_trips",
    "parse_trip_csv",
    "EpochSplits",
    "FactorModel",
    "SemanticGroups",
    "TrainConfig",
    "TrainResult",
    "classify_components",
    "generic_loss",
    "init_factors",
    "loss_gradients",
    "normalize_factors",
    "permute_components",
    "reorder_factors",
    "tidal_loss",
    "total_loss",
    "train",
    "derive_seed",
    "ProjectionResult",
    "StationFunctionScores",
    "UserWeights",
    "aggregate_station_flows",
    "aggregate_user_weights",
    "project_users",
    "__version__",
]
