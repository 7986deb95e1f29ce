"""Homogenization of tracer motion in locally stationary quasi-periodic random flows."""
__version__ = "0.1.0"

from .field import ModeSet, PhasePoint, InvariantMeasureSpec, reference_modes  # noqa: E402
from .profiles import Constant, GaussianBump, LogisticRidge  # noqa: E402
from .rng import RngStream  # noqa: E402

__all__ = [
    "__version__", "ModeSet", "PhasePoint", "InvariantMeasureSpec", "reference_modes",
    "Constant", "GaussianBump", "LogisticRidge", "RngStream",
]
