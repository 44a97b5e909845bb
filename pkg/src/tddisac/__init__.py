"""Target detection for OFDM ISAC sensing under TDD transmission."""

from tddisac.config import (
    GridConfig,
    RadioConfig,
    SensingConfig,
    TddPattern,
    default_config,
)

__all__ = [
    "GridConfig",
    "RadioConfig",
    "SensingConfig",
    "TddPattern",
    "default_config",
]

__version__ = "0.1.0"
