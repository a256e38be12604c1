"""Exception types raised across the package.

Every failure that can be caused by bad input data or bad configuration
derives from :class:`LiftRegError`, so callers (and the CLI) can catch one
type at the boundary.
"""

from __future__ import annotations


class LiftRegError(Exception):
    """Base class for all package errors."""


class ConfigurationError(LiftRegError, ValueError):
    """Inconsistent parameters, e.g. mismatched feature dimensions."""


class DatasetIOError(LiftRegError, OSError):
    """A file could not be read or written. The message names the path."""


class FormatError(LiftRegError, ValueError):
    """A file exists but does not parse. Carries the path and line if known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class ValidationError(LiftRegError, ValueError):
    """Parsed content violates a documented invariant (bounds, missing files)."""


class ManifestVersionError(FormatError):
    """Manifest declares a schema version this package does not understand."""


class DegenerateSampleError(LiftRegError, ValueError):
    """Point sample too degenerate (collinear, coincident) to fix a rotation."""


class InsufficientInputError(LiftRegError, ValueError):
    """Not enough correspondences or pairs to run an estimator."""


class GenerationError(LiftRegError, RuntimeError):
    """The synthetic generator could not satisfy the requested scene spec."""
