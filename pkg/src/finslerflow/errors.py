"""Exception types shared across the package."""


class FinslerFlowError(Exception):
    """Base class for all package-specific errors."""


class PoleSingularity(FinslerFlowError):
    """Chart expression evaluated too close to a coordinate pole (cos(theta) ~ 0)."""


class InadmissibleAlpha(FinslerFlowError):
    """Zermelo parameter outside the range where the deformed norm stays positive."""


class DegenerateWind(FinslerFlowError):
    """Navigation wind has h-norm >= 1 somewhere, so the primal norm degenerates."""


class NotNormalized(FinslerFlowError):
    """Initial covector is not on the unit level of the dual norm."""


class ToleranceFailure(FinslerFlowError):
    """Adaptive step controller underflowed without meeting the error target."""


class RefinementDiverged(FinslerFlowError):
    """Newton refinement of a closure candidate failed to converge."""


class EquatorialOrbit(FinslerFlowError):
    """Rotation number requested for an orbit that never leaves the equator."""


class IdenticalImages(FinslerFlowError):
    """Intersection count requested for two curves with the same image."""


class NotConstantCurvature(FinslerFlowError):
    """Return-map spread too large for a constant-flag-curvature metric."""


class RootBracketFailure(FinslerFlowError):
    """Scaling root of the homogenized dual norm could not be bracketed."""


class NumericalBreakdown(FinslerFlowError):
    """Finite-difference stencil left the admissible cone of the dual norm."""
