"""
Error hierarchy for the fusebox toolkit.
"""
from typing import Optional


class FuseboxError(ValueError):
    """Base class for every validation or domain error raised by fusebox."""


class ParseError(FuseboxError):
    """A prediction or ground-truth document failed to parse or validate."""

    def __init__(self, message: str, source: str = "<bytes>",
                 location: Optional[str] = None, field: Optional[str] = None):
        self.message = message
        self.source = source
        self.location = location
        self.field = field
        super().__init__(str(self))

    def __str__(self) -> str:
        parts = [self.source]
        if self.location:
            parts.append(self.location)
        if self.field:
            parts.append(f"field '{self.field}'")
        return f"{': '.join(parts)}: {self.message}"


class CategoryMismatchError(FuseboxError):
    """Prediction sets disagree on their category sets."""


class DegenerateBoxError(FuseboxError):
    """GIoU requested for two zero-area boxes."""


class ConfigError(FuseboxError):
    """The run configuration is invalid."""


class TransformError(FuseboxError):
    """A test-time transform cannot be applied to an image."""
