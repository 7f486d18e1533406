"""Morphology and behavior co-design for a UAV/UGV search-and-rescue swarm."""
from .errors import DomainError, InfeasibleError
from .morphology import DEFAULT_MODEL, DesignBounds, DesignVector, MorphologyModel, TalentVector

__version__ = "0.1.0"

__all__ = ["DEFAULT_MODEL", "DesignBounds", "DesignVector", "DomainError", "InfeasibleError", "MorphologyModel",
           "TalentVector", "__version__"]
