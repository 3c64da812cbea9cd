"""Exception types shared across the package."""


class PCELabError(Exception):
    """Base class for all pcelab errors."""


class SingularCovariance(PCELabError):
    """A positive-time transition covariance is numerically singular."""


class DivergentIntegral(PCELabError):
    """A Gaussian exponential-quadratic expectation does not exist."""


class DimensionMismatch(PCELabError):
    """Inconsistent dimensions between forms, maps or stacked layouts."""


class AssumptionViolated(PCELabError):
    """A well-posedness condition of an equilibrium problem fails."""


class SingularPayoffMap(PCELabError):
    """The terminal payoff matrix is not invertible."""


class NoConvergence(PCELabError):
    """An iterative solver exhausted its iteration budget."""


class DegenerateVolatility(PCELabError):
    """The price volatility matrix is numerically singular."""


class AffinityViolated(PCELabError):
    """A quantity expected to be affine/quadratic in its arguments is not."""


class InvalidSpec(PCELabError):
    """A scenario or limit specification violates its constraints."""


class Inconclusive(PCELabError):
    """A numerical divergence test could not reach a verdict."""
