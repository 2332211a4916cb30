"""Exception hierarchy shared by every gckd module.

Each class carries a short machine-readable ``category`` that the command
line prints on failure.
"""


class GckdError(Exception):
    category = "error"


class ShapeError(GckdError):
    category = "shape"


class NumericDomainError(GckdError):
    """Raised for inputs outside a function's mathematical domain (e.g. zero norm)."""

    category = "domain"


class ParameterError(GckdError):
    category = "parameter"


class UsageError(GckdError):
    category = "usage"


class ConfigError(GckdError):
    category = "config"


class StructuralError(GckdError):
    """Parameter sets or checkpoints whose structure does not match."""

    category = "structural"


class DataIOError(GckdError):
    category = "io"
