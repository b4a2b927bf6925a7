class NumericError(ArithmeticError):
    """A matrix factorisation or evaluation failed."""


class DegenerateComponentError(NumericError):
    """A mixture component lost (almost) all of its responsibility mass."""

    def __init__(self, component, mass, threshold):
        self.component = component
        self.mass = mass
        super().__init__(
            f"component {component} has total responsibility {mass:.4g} < {threshold:g}"
        )


class FitFailure(RuntimeError):
    """All restarts of a fit failed."""

    def __init__(self, message, causes=()):
        self.causes = list(causes)
        super().__init__(message)
