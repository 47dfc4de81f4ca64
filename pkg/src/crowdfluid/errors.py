"""Exception types raised across the package."""


class CrowdModelError(Exception):
    """Base class for all errors raised by crowdfluid."""


class ConnectivityError(CrowdModelError, ValueError):
    """The city graph is not connected (routing chain not irreducible)."""


class CapacityError(CrowdModelError, ValueError):
    """An exact computation would exceed the state-space limit."""

    def __init__(self, message, count=None):
        super().__init__(message)
        self.count = count


class NumericalError(CrowdModelError, ArithmeticError):
    """A linear solve or iteration did not reach its residual tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class IntegrationError(CrowdModelError, ArithmeticError):
    """ODE integration left the simplex by more than the allowed slack."""
