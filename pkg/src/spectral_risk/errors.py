"""Exception hierarchy shared by all modules."""


class SpectralRiskError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SpectralRiskError, ValueError):
    """Inputs violate a documented precondition."""


class NumericalError(SpectralRiskError, ArithmeticError):
    """A numerical routine failed on valid inputs."""


class InvalidRegime(ValidationError):
    pass


class PoleInDomain(ValidationError):
    pass


class NotSymmetric(ValidationError):
    pass


class NotPositiveDefinite(ValidationError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class ConfigError(ValidationError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class NoAdmissibleRoot(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class IllConditioned(NumericalError):
    pass


class NotConverged(NumericalError):
    """Raised by iterative fits; ``result`` holds the last iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
