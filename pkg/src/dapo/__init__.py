"""Dual approximation policy optimization on finite MDPs."""

from .errors import ConfigError, DapoError, Divergence, DomainError, NonConvergence, SingularSystem
from .mirror_maps import MirrorMap, Variant

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DapoError",
    "Divergence",
    "DomainError",
    "MirrorMap",
    "NonConvergence",
    "SingularSystem",
    "Variant",
]
