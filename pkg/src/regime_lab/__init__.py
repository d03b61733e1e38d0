"""Markov-modulated birth-death processes under fast regime switching."""

from .errors import NumericalError, RegimeLabError, ValidationError
from .markov_env import ModulatingChain
from .model import (
    JumpModel,
    ScalingContext,
    build_custom,
    build_mm_infinity,
    build_mph_n,
    build_multiclass_mmn,
    make_context,
    solve_fluid_equilibrium,
)

__version__ = "0.1.0"

__all__ = [
    "JumpModel",
    "ModulatingChain",
    "NumericalError",
    "RegimeLabError",
    "ScalingContext",
    "ValidationError",
    "build_custom",
    "build_mm_infinity",
    "build_mph_n",
    "build_multiclass_mmn",
    "make_context",
    "solve_fluid_equilibrium",
]
