from fedbev._core import (
    Error,
    ValidationError,
    __version__,
    aggregation_weights,
    config_keys,
    generate_fleet,
    parameter_count,
    report,
    run,
    split_sizes,
    weighted_average,
    window_count,
)

__all__ = [
    "Error",
    "ValidationError",
    "aggregation_weights",
    "config_keys",
    "generate_fleet",
    "parameter_count",
    "report",
    "run",
    "split_sizes",
    "weighted_average",
    "window_count",
]
