"""Exception types shared across the package."""


class WillmoreLabError(Exception):
    """Base class for all package errors."""


class ConfigError(WillmoreLabError):
    """Malformed or inconsistent run configuration."""


class NonPositiveDefinite(WillmoreLabError):
    """Perturbed metric failed a positive-definiteness probe."""


class CatalogDerivativeMissing(WillmoreLabError):
    """Perturbation does not supply derivatives of the requested order."""


class ExtrapolationDiverged(WillmoreLabError):
    """Richardson table failed to settle at the finest level."""


class StepFloor(WillmoreLabError):
    """Adaptive integrator step fell below the minimum step size."""


class NotStarShaped(WillmoreLabError):
    """A radial ray meets the geodesic sphere other than once."""


class DegenerateImmersion(WillmoreLabError):
    """det of the first fundamental form is not positive at some node."""


class OrientationAmbiguous(WillmoreLabError):
    """Inward-normal test is inconclusive."""


class CurvatureOrderMissing(WillmoreLabError):
    """Euler-Lagrange field requested but the metric lacks third derivatives."""


class CenterTooClose(WillmoreLabError):
    """Inversion center is on or too close to the surface."""


class FitIllConditioned(WillmoreLabError):
    """Least-squares design matrix is numerically singular."""


class NewtonDiverged(WillmoreLabError):
    """Newton iteration exceeded its iteration budget."""


class NoContraction(WillmoreLabError):
    """Fixed-point iteration is not contracting."""


class StepLimit(WillmoreLabError):
    """Iteration budget exhausted before reaching tolerance."""
