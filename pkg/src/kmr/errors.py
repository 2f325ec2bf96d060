"""Exception hierarchy shared across the package."""


class KMRError(Exception):
    pass


class ConfigurationError(KMRError, ValueError):
    """Bad knob/rule registration, unknown ids, invalid policy output."""


class DomainError(KMRError, ValueError):
    """A value lies outside the permitted domain (empty data, bad lr, bits...)."""


class StructuralError(KMRError, ValueError):
    """Shape or dimension mismatch."""


class RuleError(KMRError):
    """A rule failed while transforming a model."""
