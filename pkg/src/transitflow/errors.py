"""Exception hierarchy shared across the package."""


class TransitFlowError(Exception):
    """Base class for all package errors."""


class ValidationError(TransitFlowError):
    """Bad inputs, malformed files or configuration problems."""


class ComputationError(TransitFlowError):
    """A numerical operation could not produce a meaningful result."""


class NonConvergenceError(TransitFlowError):
    """An iterative procedure hit its iteration cap without agreeing."""
