"""Exception and warning types raised across the package."""


class DimensionError(ValueError):
    """Shapes, grids or reshape targets that do not conform."""


class RankError(ValueError):
    """Invalid tensor-train rank vector or adjacent-core rank mismatch."""


class DegenerateInputError(ValueError):
    """Input with no usable signal, e.g. an all-zero tensor."""


class NonnegativityError(ValueError):
    """Negative entries where a nonnegative input is required."""


class CollectiveContractError(RuntimeError):
    """Ranks disagreed on the payload of a collective call."""


class StoreError(OSError):
    """Chunked store could not be read or written."""


class NumericalError(ArithmeticError):
    """An iterative numerical routine failed to converge or hit a hard limit."""


class DegenerateInputWarning(UserWarning):
    """Emitted when a degenerate input is handled by a documented fallback."""
