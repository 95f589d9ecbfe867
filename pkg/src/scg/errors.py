"""Exception hierarchy shared across the gateway."""


class ScgError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(ScgError, ValueError):
    pass


class ParseError(ScgError, ValueError):
    pass


class FrameTooLarge(ScgError):
    pass


class Incomplete(ScgError):
    """Not enough bytes buffered to hold a complete frame."""

    def __init__(self, needed, available):
        super().__init__(f"frame needs {needed} bytes, {available} available")
        self.needed = needed
        self.available = available


class ParamsTooWeak(ScgError, ValueError):
    pass


class StorageError(ScgError, OSError):
    """A write to the data directory failed; the operation did not take effect."""


class IntegrityError(ScgError):
    """Stored data failed authentication or structural checks.

    ``record_ids`` names the quarantined queue records, if any. ``recovered``
    carries the part of a batch that did authenticate, so callers of
    ``dequeue_batch`` can still forward it.
    """

    def __init__(self, message, record_ids=(), recovered=()):
        super().__init__(message)
        self.record_ids = list(record_ids)
        self.recovered = list(recovered)


class DuplicateMessage(ScgError):
    pass


class UnknownMessage(ScgError, KeyError):
    pass


class KeyTooShort(ScgError, ValueError):
    pass


class Infeasible(ScgError):
    pass


class PolicyViolation(ScgError):
    pass


class AuthFailed(ScgError):
    pass


class UntrustedChain(ScgError):
    pass


class Expired(ScgError):
    pass


class NoRoleAttribute(ScgError):
    pass


class ConfigError(ScgError):
    pass
