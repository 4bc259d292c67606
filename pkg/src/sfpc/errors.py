"""Exception hierarchy shared by the codec, controllers and CLI."""


class SFPError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ContractError(SFPError, ValueError):
    """An argument violated an operation's precondition."""


class NonFiniteError(SFPError, ArithmeticError):
    """A NaN or infinity reached a path that does not accept it."""

    exit_code = 3


class CorruptStreamError(SFPError):
    """A packed stream or container could not be parsed.

    ``offset`` is the byte offset (within the container or stream) where
    the inconsistency was detected, or None when it is not positional.
    """

    exit_code = 2

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(SFPError, ValueError):
    """Invalid training, hardware or CLI configuration."""


class DivergenceError(SFPError, ArithmeticError):
    """Training produced a non-finite loss or activation."""

    exit_code = 3
