"""Exception hierarchy shared by every layer of the solver."""


class ANMError(Exception):
    """Base class for all errors raised by this package."""


class NumericalDomainError(ANMError, ValueError):
    """A numerical primitive was evaluated outside its domain.

    ``batch_index`` names the offending batch item when it is known, and
    ``where`` optionally names the graph vertex or operator.
    """

    def __init__(self, message, batch_index=None, where=None):
        self.batch_index = batch_index
        self.where = where
        parts = [message]
        if batch_index is not None:
            parts.append(f"batch item {batch_index}")
        if where is not None:
            parts.append(f"at {where}")
        super().__init__("; ".join(parts))


class GraphBuildError(ANMError, ValueError):
    """Unknown operator, wrong arity or incompatible shapes at build time."""


class SolverError(ANMError, RuntimeError):
    """Base class for continuation failures; carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class InvalidStartError(SolverError):
    pass


class NoProgressError(SolverError):
    pass


class MaxIterationsError(SolverError):
    pass


class FactorizationError(SolverError):
    pass


class MeshError(ANMError, ValueError):
    pass


class InvertedElementError(SolverError):
    """An accepted continuation state contains tetrahedra with det(F) <= 0."""

    def __init__(self, message, lam=None, segment=None, trace=None):
        self.lam = lam
        self.segment = segment
        super().__init__(message, trace)


class ConfigError(ANMError, ValueError):
    pass
