"""Exception and warning types shared across the package."""


class ChannelError(ValueError):
    """Invalid channel coefficients or noise variance."""


class NonConvergent(RuntimeError):
    """A fixed-point iteration did not reach its tolerance.

    Attributes
    ----------
    residual : float
        Residual at the last iterate.
    iterations : int
        Number of iterations performed.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NonStationaryPolicy(NonConvergent):
    """A policy stage for which no steady-state covariance was found."""


class Infeasible(RuntimeError):
    """No restart of the stationary program produced a feasible point."""


class BracketFailure(RuntimeError):
    """Target power is not reachable inside the shadow-price bracket."""


class NoPositiveRoot(ArithmeticError):
    """The first-order quartic returned no positive real root."""


class GridError(RuntimeError):
    """An optimal control pushed the covariance outside the value grid."""


class ConsistencyError(ArithmeticError):
    """A covariance update produced a clearly indefinite matrix."""


class UnitCircleZeroWarning(UserWarning):
    """The noise filter has a zero on (or numerically at) the unit circle."""


class NonStationaryWarning(UserWarning):
    """The covariance trajectory had not settled over the simulated tail."""
