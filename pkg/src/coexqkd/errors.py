"""Exception types shared across the package."""


class CoexError(Exception):
    """Base class for all package errors."""


class ProfileError(CoexError, ValueError):
    pass


class OutOfRangeError(CoexError, ValueError):
    """A wavelength query fell outside the anchor coverage (no extrapolation)."""


class PlanInvalidError(CoexError, ValueError):
    pass


class InfeasibleError(CoexError):
    """The key-rate target cannot be met anywhere in the power bracket."""


class SyncError(CoexError):
    pass


class AlignmentRequiredError(CoexError):
    pass


class InsufficientSampleError(CoexError):
    pass


class SeedError(CoexError, ValueError):
    pass


class ScenarioError(CoexError, ValueError):
    pass


# wire protocol
class WireError(CoexError):
    pass


class FramingError(WireError):
    pass


class IntegrityError(WireError):
    pass


class VersionError(WireError):
    pass


class TransportError(CoexError):
    """The byte stream was closed, stalled or timed out."""
