"""Streamflow forecasting with CNN-LSTM and LSTM models."""

from _flowcast import (
    __version__,
    basin_average,
    chronological_split,
    count_parameters,
    fit_scaler,
    generate_basin,
    grad_check,
    kge,
    make_video_samples,
    train_model,
)

__all__ = [
    "__version__",
    "basin_average",
    "chronological_split",
    "count_parameters",
    "fit_scaler",
    "generate_basin",
    "grad_check",
    "kge",
    "make_video_samples",
    "train_model",
]
