"""Solver failure modes."""


class SolverError(RuntimeError):
    """Base class; ``trace`` carries whatever history was recorded."""

    def __init__(self, message, trace=None, residual=None):
        super().__init__(message)
        self.trace = trace
        self.residual = residual


class NonConvergenceError(SolverError):
    pass


class DivergenceError(SolverError):
    """NaN, overflowing potential, or oscillating increments."""

    def __init__(self, message, trace=None, residual=None, kind="diverged"):
        super().__init__(message, trace, residual)
        self.kind = kind
