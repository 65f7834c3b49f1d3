"""Exception types shared across the solver."""


class GeometryError(Exception):
    """Mesh or dual-grid construction failed a geometric precondition."""


class SolverError(Exception):
    """A linear or nonlinear solve did not meet its contract."""


class IterativeFailure(SolverError):
    """Krylov breakdown or iteration budget exhausted; callers may fall back
    to a direct factorization."""


class StepRejected(Exception):
    """A time step could not be completed and should be retried with a
    smaller increment."""


class CflError(StepRejected):
    """Explicit transport step violated the CFL bound."""
