"""Exception types shared across the package.

The CLI maps ProtoSetError to exit code 1 (bad input or configuration) and any
other exception to exit code 2 (internal failure).
"""


class ProtoSetError(Exception):
    """Base class for all errors raised deliberately by this package."""


class ConfigError(ProtoSetError):
    """Invalid configuration value or malformed config file."""


class DomainError(ProtoSetError):
    """Input outside an operation's documented domain (empty set, bad bandwidth, ...)."""


class ShapeError(ProtoSetError):
    """Array arguments with incompatible or unexpected shapes."""


class ParseError(ProtoSetError):
    """Malformed record in a text input file; message names the line."""


class FormatError(ProtoSetError):
    """Structurally valid file whose content violates the format contract."""


class CapacityError(ProtoSetError):
    """Problem size exceeds an explicit safety cap (e.g. brute-force enumeration)."""


class NumericsError(ProtoSetError):
    """Non-finite value produced where the computation requires finite ones."""
