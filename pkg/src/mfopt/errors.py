"""Exception types raised across the package."""


class MfoptError(Exception):
    """Base class for package errors."""


class DimensionMismatch(MfoptError, ValueError):
    pass


class EigensolverFailure(MfoptError):
    pass


class IllConditionedDesign(MfoptError, ValueError):
    """Design points give a (numerically) rank-deficient data Gram matrix."""


class NoConvergence(MfoptError):
    def __init__(self, msg, residual=None, iterations=None):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


class IndefiniteHessian(MfoptError):
    pass


class CorrectorDivergence(NoConvergence):
    """Newton corrector left its basin; retry with more continuation steps."""


class NewtonDivergence(NoConvergence):
    pass


class CflViolation(MfoptError):
    pass


class NonfiniteState(MfoptError):
    pass


class ConfigError(MfoptError, ValueError):
    pass


class BudgetError(MfoptError, ValueError):
    pass
