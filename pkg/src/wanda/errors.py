"""Exception hierarchy shared by all modules.

The CLI maps each family to a stable exit code: argument/config errors -> 2,
numerical failures -> 3, file and format errors -> 4.
"""

from __future__ import annotations


class WandaError(Exception):
    """Base class for every error raised by this package."""


class ArgumentError(WandaError, ValueError):
    """An argument is outside its documented domain."""


class ConfigError(ArgumentError):
    """A pruning configuration combines incompatible options."""


class ShapeError(ArgumentError):
    """Operand shapes are incompatible."""


class NumericalError(WandaError, ArithmeticError):
    """A numerical procedure could not produce a finite answer."""


class SingularMatrixError(NumericalError):
    """Cholesky factorization hit a non-positive pivot.

    ``pivot`` is the zero-based index of the failing diagonal entry.
    """

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class ActivationOverflowError(NumericalError):
    """A forward pass produced non-finite activations."""

    def __init__(self, message: str, layer: str):
        super().__init__(message)
        self.layer = layer


class FormatError(WandaError):
    """A file on disk does not follow its declared format."""

    def __init__(self, message: str, path: object = None):
        super().__init__(message)
        self.path = path


class CheckpointError(FormatError):
    """Base for checkpoint load failures."""


class MissingFileError(CheckpointError):
    pass


class ManifestError(CheckpointError):
    """manifest.json is malformed or has missing/invalid fields."""


class BlobLengthError(CheckpointError):
    """weights.bin does not match the sizes declared in the manifest."""


class ShapeChainError(CheckpointError):
    """Consecutive layers disagree on their shared dimension."""

    def __init__(self, message: str, layer: str, path: object = None):
        super().__init__(message, path)
        self.layer = layer


class NonFiniteError(CheckpointError):
    """A stored value is NaN or infinite."""

    def __init__(self, message: str, layer: str, index: int, path: object = None):
        super().__init__(message, path)
        self.layer = layer
        self.index = index


class CalibrationFormatError(FormatError):
    """Calibration file has a bad header (magic or version)."""


class TruncatedCalibrationError(CalibrationFormatError):
    """Calibration payload is shorter than the header declares."""
