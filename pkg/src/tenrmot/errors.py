"""Exception types shared across the package."""


class TenrmotError(Exception):
    pass


class ShapeError(TenrmotError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(TenrmotError, ValueError):
    """A configuration value is outside its legal range."""


class ContractError(TenrmotError, ValueError):
    """A caller broke an operation's precondition."""


class InputError(TenrmotError, ValueError):
    """User-supplied data (text, files, frames) is malformed."""
