"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid construction parameters or experiment configuration."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class InsufficientDataError(ValueError):
    """An estimator was asked for more prefix samples than are logged."""


class BudgetError(RuntimeError):
    """The sampling budget cannot cover a mandatory phase."""


class InvariantError(RuntimeError):
    """An internal invariant that should hold by construction was violated."""


class DepthLimitError(RuntimeError):
    """A tree operation was refused because the subtree is too deep."""
