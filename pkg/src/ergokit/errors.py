"""Exception hierarchy shared by every ergokit module."""


class ErgokitError(Exception):
    """Base class for all ergokit failures."""


class ConfigurationError(ErgokitError):
    """Model or parameter set is structurally invalid (dimensions, ranges)."""


class InputError(ErgokitError):
    """Caller supplied data that violates an operation precondition."""


class EvaluationError(ErgokitError):
    """A user-supplied map returned non-finite values."""


class NumericError(ErgokitError):
    """A numerical routine failed to reach its tolerance or proposal budget."""


class EnvelopeError(NumericError):
    """Rejection sampling envelope is too loose or violated."""


class SampleSizeError(InputError):
    """Too few samples for the requested estimator."""


class FitError(ErgokitError):
    """A regression could not be performed on the supplied data."""


class DiagnosticError(ErgokitError):
    """An experiment ran but produced no usable signal."""


class ParseError(ErgokitError):
    """Configuration document could not be parsed or validated."""
