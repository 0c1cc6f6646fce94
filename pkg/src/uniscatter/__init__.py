"""Scattering theory for one-dimensional coined quantum walks on finite windows."""

__version__ = "0.1.0"

from .coins import CoinField, CoinGenerator, CoinParams, DecayBound
from .errors import (
    ConfigError,
    NumericalError,
    PreconditionError,
    UniscatterError,
)
from .operators import DirectSumState, LatticeWindow, SpinorState, WindowedOperator
from .resolvent import EpsSchedule, RadialPoint, delta_apply, resolvent_apply, richardson
from .scattering import coefficients, pm_bis_check, smatrix_formula, smatrix_packet
from .spectral import FreeSpectrum
from .walk import WalkModel, build_walk, uniform_model
from .waveops import stationary_wave_apply, strong_wave_apply

__all__ = [
    "CoinField", "CoinGenerator", "CoinParams", "DecayBound",
    "ConfigError", "NumericalError", "PreconditionError", "UniscatterError",
    "DirectSumState", "LatticeWindow", "SpinorState", "WindowedOperator",
    "EpsSchedule", "RadialPoint", "delta_apply", "resolvent_apply", "richardson",
    "coefficients", "pm_bis_check", "smatrix_formula", "smatrix_packet",
    "FreeSpectrum", "WalkModel", "build_walk", "uniform_model",
    "stationary_wave_apply", "strong_wave_apply",
]
