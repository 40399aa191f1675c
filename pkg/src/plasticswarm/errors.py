"""Exception types raised by the solvers and the experiment layer."""


class PlasticSwarmError(Exception):
    """Base class for all package errors."""


class ConfigError(PlasticSwarmError, ValueError):
    """Invalid or inconsistent experiment configuration."""


class NumericalAbort(PlasticSwarmError, RuntimeError):
    """A simulation had to stop; the partial trajectory is still valid."""


class LeaderDepletion(NumericalAbort):
    """Leader density fell to the floor, so the feedback velocity is undefined."""


class NumericalBlowup(NumericalAbort):
    """A field became non-finite or exceeded the magnitude guard."""


class NegativeDensity(NumericalAbort):
    """A density went below the tolerated negativity band."""


class StabilityViolation(NumericalAbort):
    """The time step violates the explicit-scheme stability bound."""


class DiffusionZero(PlasticSwarmError, ValueError):
    """Steady-state formulas divide by the diffusion coefficient."""


class NonpositiveRatio(PlasticSwarmError, ValueError):
    """Requested leader/follower mass ratio or rate scale is not positive."""


class EmptySample(PlasticSwarmError, ValueError):
    """Density estimation was asked for with no sample positions."""


class TargetVanishes(PlasticSwarmError, ValueError):
    """KL divergence needs a strictly positive reference density."""


class NonzeroMassWarning(UserWarning):
    """Antiderivative requested for a field whose integral is not zero."""
