"""Exception hierarchy shared by every module of the package."""


class AdubfError(Exception):
    """Base class; ``category`` is printed by the CLI on failure."""

    category = "error"


class ConfigError(AdubfError, ValueError):
    category = "config"


class FormatError(AdubfError, ValueError):
    category = "format"


class DimensionError(AdubfError, ValueError):
    category = "dimension"


class DomainError(AdubfError, ValueError):
    category = "domain"


class ContractError(AdubfError, ValueError):
    category = "contract"


class SingularityError(AdubfError, ArithmeticError):
    """Raised when a matrix is singular to tolerance.

    Parameters
    ----------
    message : str
    cond : float
        Condition-number estimate of the offending matrix (may be inf).
    """

    category = "numerical"

    def __init__(self, message, cond=float("inf")):
        super().__init__(f"{message} (cond ~ {cond:.3g})")
        self.cond = cond


class TrainingDiverged(AdubfError, FloatingPointError):
    category = "diverged"

    def __init__(self, batch_index, value):
        super().__init__(f"non-finite loss {value!r} at batch {batch_index}")
        self.batch_index = batch_index
