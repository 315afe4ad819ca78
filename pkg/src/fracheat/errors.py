"""Exception types shared across the package."""


class FracheatError(Exception):
    """Base class for all package-specific failures."""


class QuadratureConvergenceError(FracheatError):
    """A kernel quadrature or tail series did not reach the requested tolerance."""


class SupportViolationError(FracheatError):
    """A field declared compactly supported has mass outside the declared box."""


class BoxValidityError(FracheatError):
    """The requested time horizon lets the diffusing profile feel the box wall."""


class SmallnessViolationError(FracheatError):
    """The scaled sup-norm monitor of a nonlinear run drifted upward."""


class ConfigError(FracheatError):
    """An experiment configuration failed validation."""
