"""Exception hierarchy shared by the solver modules."""


class KyleError(Exception):
    """Base class for all package errors."""


class ParameterError(KyleError, ValueError):
    """A model or grid parameter violates a standing assumption."""


class InputError(KyleError, ValueError):
    """Input data (a distribution function, a table) is malformed."""


class ExtrapolationError(KyleError, ValueError):
    """A query falls outside the support of tabulated data."""


class RangeError(KyleError, ValueError):
    """A value lies outside the attainable range of a monotone map."""


class StabilityError(KyleError, RuntimeError):
    """A time-stepping scheme lost positivity or mass."""


class InternalConsistencyError(KyleError, RuntimeError):
    """A computed field violates an analytic bound beyond tolerance."""


class DiscretizationError(KyleError, RuntimeError):
    """A Monte-Carlo discretization produced an impossible value."""


class ResolutionError(KyleError, RuntimeError):
    """A consistency probe failed, pointing at insufficient resolution."""


class ConfigError(KyleError, ValueError):
    """A run configuration is missing keys or holds invalid values."""


class IntegrityError(KyleError, RuntimeError):
    """A persisted bundle does not match its checksum index."""
