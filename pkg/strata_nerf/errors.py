"""
Strata-NeRF - Error Types
=========================

Every failure raised by the package derives from ``StrataError`` and from the
closest builtin exception, so callers may catch either.
"""


class StrataError(Exception):
    """Base class for all package errors."""


class ShapeError(StrataError, ValueError):
    """Operand shapes are incompatible for an operation."""


class UnknownOpError(StrataError, KeyError):
    """An op-kind is not registered with the autodiff engine."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown op"


class NonScalarRootError(StrataError, ValueError):
    """backward() was asked to start from a non-scalar tensor."""


class NonFiniteError(StrataError, ValueError):
    """A NaN or infinity appeared where finite values are required."""


class GeometryError(StrataError, ValueError):
    """Invalid ray, camera, interval or encoding input."""


class SceneError(StrataError, ValueError):
    """A scene description violates its nesting or camera constraints."""


class DatasetError(StrataError, FileNotFoundError):
    """A dataset manifest or one of its files is missing or inconsistent."""


class CheckpointError(StrataError, ValueError):
    """A checkpoint file is malformed or does not match the model config."""


class TrainingDivergedError(StrataError, RuntimeError):
    """The training loss became non-finite."""


class ConfigError(StrataError, KeyError):
    """A configuration key or value is invalid."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "invalid configuration"


class UsageError(StrataError, ValueError):
    """Command-line usage error."""
