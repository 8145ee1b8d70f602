"""Exception hierarchy shared by all modules.

Every error carries the CLI exit code it maps to.
"""

from __future__ import annotations

import numpy as np


class EfldError(Exception):
    exit_code = 1


class ConfigError(EfldError, ValueError):
    exit_code = 1


class DomainError(EfldError, ValueError):
    exit_code = 3


class ShapeError(DomainError):
    pass


class UnsupportedError(EfldError):
    exit_code = 1


class FormatError(EfldError):
    """Malformed input file; ``offset`` is the byte offset where parsing failed."""

    exit_code = 2

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class QuadratureError(EfldError, ArithmeticError):
    exit_code = 3


class NumericError(EfldError, ArithmeticError):
    """Non-finite values during training; keeps the step index and a state snapshot."""

    exit_code = 3

    def __init__(self, message: str, step: int | None = None, snapshot: np.ndarray | None = None):
        if step is not None:
            message = f"{message} at step {step}"
        super().__init__(message)
        self.step = step
        self.snapshot = snapshot


class PreconditionError(EfldError):
    exit_code = 4


class VerificationError(EfldError):
    exit_code = 4
