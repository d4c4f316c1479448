"""Compressed beamforming: sub-Nyquist Fourier-domain beamforming and FRI echo recovery."""

from .beamform import ArrayGeometry, Apodization
from .config import ConfigError, ExperimentConfig, parse_config
from .signal import FriEcho, MeasurementVector, SampledTrace, TwoWayPulse

__all__ = [
    "ArrayGeometry",
    "Apodization",
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "FriEcho",
    "MeasurementVector",
    "SampledTrace",
    "TwoWayPulse",
]

__version__ = "0.1.0"
