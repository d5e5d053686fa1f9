"""End-to-end learned portfolio allocation with classic benchmarks and backtesting."""

__version__ = "0.1.0"

from .errors import DegenerateWeightsError, NumericsError, ValidationError

__all__ = ["DegenerateWeightsError", "NumericsError", "ValidationError", "__version__"]
