"""Exception hierarchy shared by all sddelab modules."""


class SDDELabError(Exception):
    """Base class for every error raised by sddelab."""


class GridError(SDDELabError, ValueError):
    """Off-grid time, out-of-range index or mismatched grids/shapes."""


class ModelContractError(SDDELabError, ValueError):
    """A coefficient model violates its declared contract."""


class EllipticityError(SDDELabError, ValueError):
    """The diffusion matrix a = sigma sigma' is singular where it must be invertible."""


class BlowUpError(SDDELabError, FloatingPointError):
    """The integrated state became non-finite."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NumericalFailure(SDDELabError, RuntimeError):
    """A numerical routine failed; ``diagnostics`` carries whatever was learnt."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DetectionFailure(NumericalFailure):
    """Periodic-orbit detection did not settle within its budget."""


class ConvergenceError(NumericalFailure):
    """An optimizer did not meet its gradient tolerance; ``best`` holds the best iterate."""

    def __init__(self, message, best=None, diagnostics=None):
        super().__init__(message, diagnostics)
        self.best = best


class UnusableEstimateError(SDDELabError, RuntimeError):
    """A Monte Carlo estimate is dominated by censored trials."""


class ConfigError(SDDELabError, ValueError):
    """Malformed or incomplete experiment configuration."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
