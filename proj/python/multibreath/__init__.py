"""Respiratory-sound classification toolkit (native core)."""

from ._multibreath import (  # noqa: F401
    Model,
    MetricsReport,
    gradient_suite,
    icbhi_metrics,
    log_mel,
    read_wav,
    resample,
)

__all__ = [
    "Model",
    "MetricsReport",
    "gradient_suite",
    "icbhi_metrics",
    "log_mel",
    "read_wav",
    "resample",
]
