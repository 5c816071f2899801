"""
Error types shared by the core modules and the harness
"""

from __future__ import annotations
from typing import Optional


class EasyHardError(Exception):
    """Base class for every error raised by this package"""


class InputFormatError(EasyHardError, ValueError):
    """Malformed input: bad line, duplicate id, degenerate box"""

    def __init__(
        self, message: str, line: Optional[int] = None, source: Optional[str] = None
    ):
        self.line = line
        self.source = source
        prefix = ''
        if source:
            prefix += f'{source}: '
        if line is not None:
            prefix += f'line {line}: '
        super().__init__(prefix + message)


class MissingImageError(EasyHardError, KeyError):
    """An image id was queried that the backend, table or dataset does not know"""

    def __init__(self, image_id: str, where: str = 'input'):
        self.image_id = image_id
        self.where = where
        super().__init__(image_id)

    def __str__(self) -> str:
        return f"image id '{self.image_id}' not found in {self.where}"


class ConfigurationError(EasyHardError, ValueError):
    """Inconsistent or unresolvable experiment configuration"""


class BenchmarkError(EasyHardError, RuntimeError):
    """Synthetic benchmark could not be generated"""


class EvaluationError(EasyHardError, ValueError):
    """Metric undefined for the given matches (e.g. no ground-truth faces)"""
