"""Exception types shared across the package."""


class CbveError(Exception):
    """Base class for all package errors."""


class KernelQueryError(CbveError):
    """A jump-kernel moment query is malformed or divergent."""


class QuadratureError(CbveError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class CanonicalizationError(CbveError):
    """Raw measure triplet cannot be decomposed against its own time scale."""


class LevelTooSmallError(CbveError):
    """Level k violates the truncation constraint 1 <= c_k <= k."""


class NegativeCumulantError(CbveError):
    """Backward cumulant integration produced a non-positive value.

    Positivity of the solution is guaranteed for admissible environments,
    so this signals an inadmissible input or a tolerance that is too loose.
    The solver never clamps.
    """


class NonConvergenceError(CbveError):
    """Adaptive step control underflowed without meeting the tolerance."""


class EnvelopeError(CbveError):
    """Envelope constants are inapplicable (some jump has d(alpha) <= -1)."""


class PgfCoefficientError(CbveError):
    """A probability generating function produced a negative coefficient."""


class ExplosionError(CbveError):
    """A simulated population exceeded the overflow guard."""


class ConfigError(CbveError):
    """Experiment configuration is malformed or fails validation."""
