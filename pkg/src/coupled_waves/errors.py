"""Exception hierarchy.

Solver failures map to CLI exit code 3, input problems to exit code 1, and
violated geometric hypotheses are reported (not raised) and map to exit 2.
"""


class CoupledWavesError(Exception):
    """Base class for all package errors."""


class SolverFailure(CoupledWavesError):
    """A numerical kernel failed to deliver its contract."""


class NoConvergence(SolverFailure):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class BreakdownNonSPD(SolverFailure):
    """Conjugate gradients met a direction of non-positive curvature."""


class SolverError(SolverFailure):
    """Dense eigen/singular value solver failure."""


class ConservationViolated(SolverFailure):
    def __init__(self, message, drift=None):
        super().__init__(message)
        self.drift = drift


class TransitionTooNarrow(CoupledWavesError, ValueError):
    pass


class EmptyCore(CoupledWavesError, ValueError):
    pass


class GridMismatch(CoupledWavesError, ValueError):
    pass


class NonPositiveEnergy(CoupledWavesError, ValueError):
    pass


class DegenerateWindow(CoupledWavesError, ValueError):
    pass


class SizeCap(CoupledWavesError, ValueError):
    pass


class OnSpectrum(CoupledWavesError, ValueError):
    def __init__(self, message, beta=None):
        super().__init__(message)
        self.beta = beta


class ZeroInitialData(CoupledWavesError, ValueError):
    pass


class ParseError(CoupledWavesError):
    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class ValidationError(CoupledWavesError):
    """Carries every validation problem found, as (field, message) pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"{field}: {msg}" for field, msg in self.problems]
        super().__init__("invalid scenario:\n  " + "\n  ".join(lines))

    @property
    def fields(self):
        return [field for field, _ in self.problems]
