from __future__ import annotations

from typing import Optional


class BoosterError(Exception):
    """Root of every error raised by the booster library."""


class ConfigError(BoosterError, ValueError):
    pass


class ShapeError(BoosterError, ValueError):
    pass


class NonFiniteError(BoosterError, ArithmeticError):
    pass


class DegenerateEmbeddingError(BoosterError, ArithmeticError):
    pass


class DataError(BoosterError, ValueError):
    """Malformed or missing input data. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
