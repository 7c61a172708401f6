"""Exception hierarchy for roughfield."""
from __future__ import annotations
from typing import Optional


class RoughFieldError(Exception):
    """Base class for all roughfield errors."""


class ShapeError(RoughFieldError, ValueError):
    """Tensor shapes do not compose."""


class GridMismatchError(RoughFieldError, ValueError):
    """Two objects that must share a time grid do not."""


class ConfigError(RoughFieldError, ValueError):
    """Invalid scenario configuration. The message names the offending key."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class InsufficientDataError(RoughFieldError, ValueError):
    """Too few samples or meshes, or degenerate data, for a fit."""


class DivergenceError(RoughFieldError, ArithmeticError):
    """
    A stepped state became non-finite or exceeded the explosion threshold.

    Attributes:
        node: Grid index at which the state left the admissible range.
        replica: Monte Carlo replica index, when known.
    """

    def __init__(self, message: str, node: Optional[int] = None, replica: Optional[int] = None):
        super().__init__(message)
        self.node = node
        self.replica = replica

    def with_replica(self, replica: int) -> "DivergenceError":
        return DivergenceError(self.args[0], node=self.node, replica=replica)

    def __reduce__(self):
        return DivergenceError, (self.args[0], self.node, self.replica)

    def __str__(self) -> str:
        msg = super().__str__()
        if self.replica is not None:
            msg = f"{msg} (replica {self.replica})"
        return msg
