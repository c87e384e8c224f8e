"""Exception types raised across ctxdag."""


class ContractError(ValueError):
    """Input shapes or arguments violate an operation's preconditions."""


class DomainError(ValueError):
    """A matrix lies outside the set where h_s is defined."""


class SolverError(RuntimeError):
    """An iterative routine failed to converge or left its feasible region."""

    def __init__(self, message, index=None):
        if index is not None:
            message = f"batch item {index}: {message}"
        super().__init__(message)
        self.index = index


class ConfigError(ValueError):
    """Invalid run configuration."""


class TrainingError(RuntimeError):
    """Training diverged."""
