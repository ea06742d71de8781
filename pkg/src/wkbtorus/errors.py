"""Exception types raised across the package."""


class WkbTorusError(Exception):
    """Base class for all package errors."""


class GridError(WkbTorusError, ValueError):
    pass


class NonConvergence(WkbTorusError, RuntimeError):
    """An iterative solver stopped at its iteration cap.

    ``final_change`` holds the last measured update size.
    """

    def __init__(self, message, final_change=None):
        super().__init__(message)
        self.final_change = final_change


class ParticleOutsideDomain(WkbTorusError, ValueError):
    """Particles fall outside the differentiability mask of S+."""

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(int(i) for i in indices)


class CflViolation(WkbTorusError, ValueError):
    pass


class EmptySupport(WkbTorusError, ValueError):
    pass


class ResolutionError(WkbTorusError, ValueError):
    """The grid cannot resolve the WKB phase at the requested hbar."""


class MomentumWindowExceeded(WkbTorusError, ValueError):
    pass


class WindowTooSmall(WkbTorusError, ValueError):
    pass


class PairingNotReal(WkbTorusError, ArithmeticError):
    pass


class OptFailed(WkbTorusError, RuntimeError):
    pass


class Infeasible(WkbTorusError, ValueError):
    pass


class ConfigError(WkbTorusError, ValueError):
    pass
