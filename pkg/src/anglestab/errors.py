"""Exception hierarchy shared by every module of the package."""


class AnglestabError(Exception):
    """Base class for all package errors."""


class StructuralError(AnglestabError):
    """A model references something that does not exist or is malformed."""


class NumericalError(AnglestabError):
    """Singular matrix, NaN/overflow, or a failed eigen-decomposition."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class DivergedError(NumericalError):
    """Newton power flow did not reach the tolerance in max_iter iterations."""

    def __init__(self, message, mismatch):
        super().__init__(message)
        self.mismatch = mismatch


class ConvergenceError(NumericalError):
    """The implicit step corrector did not converge."""


class LinearizationError(NumericalError):
    """A perturbed network solve failed while building the state matrix."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class InitializationError(AnglestabError):
    """A device cannot be placed at its power-flow dispatch."""

    def __init__(self, message, device=None):
        super().__init__(message)
        self.device = device


class NoBracketError(AnglestabError):
    """CCT search endpoints do not straddle the stability boundary."""

    def __init__(self, message, lo_stable=None, hi_stable=None):
        super().__init__(message)
        self.lo_stable = lo_stable
        self.hi_stable = hi_stable


class ScenarioError(AnglestabError):
    """Scenario file could not be parsed or validated."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
