"""Exception types raised by fosctl."""


class FosError(Exception):
    """Base class for all fosctl errors."""


class DimensionMismatch(FosError, ValueError):
    pass


class SingularAggregateMatrix(FosError, ValueError):
    """The sum of the state matrices is not invertible."""


class NotStabilizable(FosError):
    """The Riccati recursion did not converge for the augmented pair."""

    def __init__(self, message, mode=None):
        super().__init__(message)
        self.mode = mode


class UnstableClosedLoop(FosError, ValueError):
    pass


class KappaInfeasible(FosError):
    """No admissible kappa exists because c_psi * psi(v) >= 1."""


class InfeasibleUpTo(FosError):
    def __init__(self, v_max, table):
        super().__init__(f"no feasible window length v <= {v_max}")
        self.v_max = v_max
        self.table = table


class OptimizerStalled(FosError, RuntimeWarning):
    pass


class NumericOverflow(FosError, ArithmeticError):
    pass
