class NonFiniteStateError(ArithmeticError):
    """A step produced NaN or infinite entries."""


class NumericalInstabilityError(ArithmeticError):
    """A field blew up within a single step (time step too large)."""
