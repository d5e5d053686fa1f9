"""Shared exception types.

The CLI maps these onto exit codes: ValidationError -> 1, NumericsError -> 2.
"""


class ValidationError(Exception):
    """Bad input: malformed file, shape mismatch, violated precondition."""


class NumericsError(Exception):
    """Numerical failure: non-finite value, degenerate statistic, failed solve."""


class DegenerateWeightsError(NumericsError):
    """Raw allocation scores sum too close to zero to normalize."""
