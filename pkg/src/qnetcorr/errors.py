class QNetError(Exception):
    """Base class for library errors."""


class ConfigParseError(QNetError):
    """Malformed configuration text."""


class ValidationError(QNetError):
    """A model, environment or rerouting invariant is violated."""


class NonErgodicError(ValidationError):
    """Some node has load >= 1 at its limiting service rate."""


class UnboundedObservableError(QNetError):
    """A raw q(j) atom was passed to an exact (infinite-space) route."""


class PreconditionError(QNetError):
    """Inputs fail the hypotheses of a comparison or construction."""
