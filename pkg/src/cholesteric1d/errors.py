"""Exception hierarchy shared by all modules."""


class Cholesteric1DError(Exception):
    pass


class InvalidGridError(Cholesteric1DError, ValueError):
    pass


class InvalidParameterError(Cholesteric1DError, ValueError):
    pass


class InvalidJumpMapError(Cholesteric1DError, ValueError):
    pass


class LiftingError(Cholesteric1DError):
    pass


class VanishingModulusError(LiftingError):
    pass


class UndefinedWindingError(VanishingModulusError):
    pass


class AliasingError(LiftingError):
    pass


class DivergenceError(Cholesteric1DError):
    """Raised when a solver produces a non-finite energy.

    ``last_iterate`` holds the last finite iterate.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class NoFitError(Cholesteric1DError):
    """Extrapolation data do not support a power-law fit; ``data`` holds the raw pairs."""

    def __init__(self, message, data=None):
        super().__init__(message)
        self.data = data


class ResolutionError(Cholesteric1DError, ValueError):
    pass


class OverlapError(Cholesteric1DError, ValueError):
    pass


class DegeneratePathError(Cholesteric1DError, ValueError):
    pass


class ConfigError(Cholesteric1DError, ValueError):
    pass
