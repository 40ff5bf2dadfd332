"""Cooperative precoder feedback for FDD massive MIMO.

Channel models, limited-feedback quantizers, D2D CSI exchange with optimal
bit partition, and ZF/MMSE/SLNR precoding, plus closed-form interference
bounds and a seeded Monte Carlo harness.
"""

from coopfb.errors import (
    CapacityError,
    ConfigError,
    CoopFeedbackError,
    DegenerateStatisticsError,
    IntegrationError,
    InvalidDimensionError,
    InvalidInputError,
    PartitionError,
    SingularityError,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConfigError",
    "CoopFeedbackError",
    "DegenerateStatisticsError",
    "IntegrationError",
    "InvalidDimensionError",
    "InvalidInputError",
    "PartitionError",
    "SingularityError",
]
