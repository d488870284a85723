"""Exception hierarchy shared by all modules."""


class StarncError(Exception):
    """Base class for package errors."""


class ConfigurationError(StarncError, ValueError):
    """Invalid scenario or construction parameters."""


class ContractError(StarncError, ValueError):
    """Arguments violate an operation's shape or length contract."""


class ModelDomainError(StarncError, ValueError):
    """A rate or probability lies outside a channel model's domain."""


class DecodeStateError(StarncError, RuntimeError):
    """Decoding was requested before the receiver reached full rank."""
