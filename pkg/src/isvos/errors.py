"""Exception types shared by every subpackage."""


class IsvosError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(IsvosError, ValueError):
    """A caller violated a precondition of an operation."""


class DimensionError(ContractError):
    """Tensor shapes are incompatible with the requested operation."""


class StateError(ContractError):
    """An object is not in a state that permits the operation (e.g. empty memory)."""


class SpecError(ContractError):
    """A scene or model configuration is invalid."""


class NonFiniteError(IsvosError, FloatingPointError):
    """An op produced NaN or Inf."""


class ParseError(IsvosError):
    """A file could not be parsed. ``offset`` is the byte offset of the failure."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset
