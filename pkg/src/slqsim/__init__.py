"""Simulation and mean-field analysis of the SLQ(d) policy at an entanglement
generation switch, with the JSQ(d) supermarket model as a baseline."""

from slqsim.model import (
    ConfigError,
    LoadSummary,
    Policy,
    SamplingMode,
    SystemConfig,
    load_summary,
    validate_config,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "LoadSummary",
    "Policy",
    "SamplingMode",
    "SystemConfig",
    "load_summary",
    "validate_config",
]
