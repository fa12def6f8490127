"""Exception types shared across modules."""


class NumericalError(ArithmeticError):
    """A NaN/Inf appeared or a numerical self-check failed (CLI exit code 2)."""
