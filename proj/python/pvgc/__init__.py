"""Pyramid vision graph network with a capsule head."""

from ._core import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DegenerateBatchError,
    DegenerateGraphError,
    Error,
    Model,
    NumericError,
    ShapeError,
    census,
    compute_metrics,
    cross_entropy,
    dilation_for_layer,
    dynamic_routing,
    gradcheck,
    knn,
    margin_loss,
    resolved_config,
    squash,
    train_synthetic,
)


def overrides(**options):
    """key=value strings from keyword options, e.g. classes=2."""
    return [f"{key}={value}" for key, value in options.items()]


__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DegenerateBatchError",
    "DegenerateGraphError",
    "Error",
    "Model",
    "NumericError",
    "ShapeError",
    "census",
    "compute_metrics",
    "cross_entropy",
    "dilation_for_layer",
    "dynamic_routing",
    "gradcheck",
    "knn",
    "margin_loss",
    "overrides",
    "resolved_config",
    "squash",
    "train_synthetic",
]
