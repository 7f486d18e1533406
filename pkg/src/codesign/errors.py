class DomainError(ValueError):
    """Raised when an input falls outside the domain an operation accepts."""


class InfeasibleError(RuntimeError):
    """An optimizer could not find a single feasible candidate."""
