"""Exception types shared across modlab."""


class ModlabError(Exception):
    """Base class for all modlab errors."""


class InvalidRadii(ModlabError, ValueError):
    pass


class UnsupportedDimension(ModlabError, ValueError):
    pass


class NonFiniteIntegrand(ModlabError, ArithmeticError):
    pass


class EvaluationDomain(ModlabError, ValueError):
    """A point was handed to a mapping outside of where it is defined."""


class NearSingularity(ModlabError, ValueError):
    pass


class NotAdmissible(ModlabError, ValueError):
    pass


class PsiNotIntegrable(ModlabError, ArithmeticError):
    pass


class ParameterRange(ModlabError, ValueError):
    pass


class QuadratureFailure(ModlabError, ArithmeticError):
    pass


class NoConvergence(ModlabError, RuntimeError):
    """The modulus optimizer ran out of sweeps.

    The best estimate found so far is attached as ``estimate`` so callers
    can still report it.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class ConfigError(ModlabError, ValueError):
    """Bad run configuration; ``path`` is a JSON pointer to the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class NumericalError(ModlabError, RuntimeError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message
