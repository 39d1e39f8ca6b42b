"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid run configuration.

    Carries every violation found in one pass so the user can fix a
    config file in a single edit.  ``messages`` is a list of strings,
    each prefixed with a line number when one is known.
    """

    def __init__(self, messages):
        if isinstance(messages, str):
            messages = [messages]
        self.messages = list(messages)
        super().__init__("\n".join(self.messages))


class DomainError(ValueError):
    """An input lies outside the region where a quantity is defined."""


class NumericalError(RuntimeError):
    """A solver failed in a way that invalidates the run."""


class ConvergenceError(NumericalError):
    """An iterative integration or eigensolve did not converge."""


class MonteCarloError(NumericalError):
    """Too many Monte Carlo trials failed to trust the ensemble average."""
