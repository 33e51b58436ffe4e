"""Exception hierarchy shared by all modules."""


class SphTrackError(Exception):
    """Base class for library errors."""


class AntipodalError(SphTrackError, ValueError):
    """Log map requested for a point (nearly) opposite the reference."""


class ChartDomainError(SphTrackError, ValueError):
    """Tangent coordinates outside the injectivity radius (norm >= pi)."""


class NegativeDtError(SphTrackError, ValueError):
    pass


class NonPositiveDtError(SphTrackError, ValueError):
    pass


class DegenerateBoxError(SphTrackError, ValueError):
    """Box height too small to convert into a depth."""


class SyncError(SphTrackError, ValueError):
    """Image and LiDAR packets too far apart in time for a joint update."""


class DimensionMismatch(SphTrackError, ValueError):
    pass


class SingularInnovation(SphTrackError, ArithmeticError):
    pass


class NonMonotonicTimeError(SphTrackError, ValueError):
    pass


class ConfigError(SphTrackError, ValueError):
    pass


class SchemaError(SphTrackError, ValueError):
    pass


class EmptyLogError(SphTrackError, ValueError):
    pass


class NoMatchesError(SphTrackError, ValueError):
    pass


class IoError(SphTrackError, OSError):
    """Input file missing or unreadable, or an output could not be written."""
