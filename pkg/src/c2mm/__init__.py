"""Numerics for the chiral two-matrix model with coupled Bessel weights."""
from .errors import C2MMError, ConditioningAlarm, DomainError, ToleranceError, ValidationError
from .model import ModelSpec, load_spec

__version__ = "0.1.0"

__all__ = [
    "C2MMError",
    "ConditioningAlarm",
    "DomainError",
    "ToleranceError",
    "ValidationError",
    "ModelSpec",
    "load_spec",
]
