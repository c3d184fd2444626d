"""Exception hierarchy shared across the package."""


class StegoError(Exception):
    """Base class for all library errors."""


class ConfigError(StegoError):
    """Bad session or CLI configuration (maps to exit code 2)."""


class InvalidToken(StegoError):
    """A token id is unknown, or EOS appears in a non-final position."""


class InvalidWeight(StegoError):
    """A candidate weight is non-positive or otherwise unusable."""


class EmptyCandidateSet(StegoError):
    """An operation that needs at least one candidate received none."""


class ModelUnavailable(StegoError):
    """The language model backend cannot be reached (maps to exit code 4)."""


class ProtocolViolation(StegoError):
    """A caller broke an internal contract (bad group index, bad request)."""


class DesyncError(StegoError):
    """Decoder state no longer matches the stegotext (tampering or key mismatch)."""


class CapacityError(StegoError):
    """The payload cannot be carried and continuation is disabled for this vocab."""


class HardStop(StegoError):
    """A session exceeded its round or sentence budget (maps to exit code 3)."""


class OracleTooLarge(StegoError):
    """An exact enumeration oracle would exceed its state budget."""
