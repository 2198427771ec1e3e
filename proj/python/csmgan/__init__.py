"""Video moment localization with cross- and self-modal graph attention."""

from ._core import (
    Config,
    ConfigError,
    ContractError,
    DimensionError,
    Model,
    NumericError,
    ParseError,
    Sample,
    candidates,
    decode_features,
    encode_features,
    gradcheck,
    gradcheck_names,
    load_dataset,
    load_features,
    metric_grid,
    preset_names,
    save_dataset,
    save_features,
    synthetic_dataset,
    temporal_iou,
    train,
)

__all__ = [
    "Config",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "Model",
    "NumericError",
    "ParseError",
    "Sample",
    "candidates",
    "decode_features",
    "encode_features",
    "gradcheck",
    "gradcheck_names",
    "load_dataset",
    "load_features",
    "metric_grid",
    "preset_names",
    "save_dataset",
    "save_features",
    "synthetic_dataset",
    "temporal_iou",
    "train",
]
