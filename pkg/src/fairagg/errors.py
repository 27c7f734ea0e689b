"""Shared exception types.

Every failure mode of the library maps onto one of these so callers can
distinguish bad inputs from numerical trouble without string matching.
"""

from __future__ import annotations

import numpy as np


class FairaggError(Exception):
    """Base class for all library errors."""


class InvalidDimensionError(FairaggError, ValueError):
    """A dimension is zero, negative, or mismatched between arguments."""


class DomainError(FairaggError, ValueError):
    """An input lies outside the mathematical domain of the operation."""


class DegenerateInputError(FairaggError, ValueError):
    """Input is structurally valid but degenerate (e.g. all-zero losses)."""


class NumericalFailureError(FairaggError, ArithmeticError):
    """A non-finite value appeared where the computation requires finiteness."""


class NonConvergenceError(FairaggError, RuntimeError):
    """An iterative solver hit its iteration cap before meeting tolerance.

    Carries the best iterate found so callers can degrade gracefully.
    """

    def __init__(self, message: str, best_iterate: np.ndarray, residual: float):
        super().__init__(message)
        self.best_iterate = best_iterate
        self.residual = residual


class DivergenceError(FairaggError, ArithmeticError):
    """Local training produced a non-finite loss; carries round context."""

    def __init__(self, message: str, round_index: int | None = None,
                 client_id: int | None = None):
        super().__init__(message)
        self.round_index = round_index
        self.client_id = client_id


class ConfigError(FairaggError, ValueError):
    """A config document failed to parse or validate; message names the key."""
