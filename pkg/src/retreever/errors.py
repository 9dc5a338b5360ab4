"""Exception taxonomy for the retreever package."""

from __future__ import annotations


class RetreeverError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(RetreeverError):
    """Operands have incompatible or unsupported shapes."""


class RankError(RetreeverError):
    """An operand has the wrong number of dimensions."""


class MaskError(RetreeverError):
    """A mask forbids every position along the reduced axis."""


class PoisonedUpdateError(RetreeverError):
    """An optimizer update would write NaN or Inf into a parameter."""


class EmptyContextError(RetreeverError):
    """A tree or model was given zero context tokens."""


class StateError(RetreeverError):
    """An object was used in an order its lifecycle forbids."""


class ConfigError(RetreeverError):
    """A config file is malformed, has unknown keys, or bad values."""
