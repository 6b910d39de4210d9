"""Exception hierarchy shared by all spgarch modules."""


class SpgarchError(Exception):
    """Base class for every error raised by spgarch."""


class DegenerateDistance(SpgarchError, ValueError):
    """Two sites share coordinates, so an inverse distance is undefined."""

    def __init__(self, i: int, j: int):
        self.pair = (i, j)
        super().__init__(f"sites {i} and {j} are coincident")


class ParseError(SpgarchError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DomainError(SpgarchError, ValueError):
    """A function was evaluated outside its domain (log of a non-positive value)."""

    def __init__(self, message: str, site: int | None = None):
        self.site = site
        super().__init__(message)


class SingularSystem(SpgarchError, ArithmeticError):
    pass


class NonPositiveH(SpgarchError, ArithmeticError):
    """The volatility system has a solution with a non-positive entry."""

    def __init__(self, message: str, sites=()):
        self.sites = tuple(int(s) for s in sites)
        super().__init__(message)


class NotContraction(SpgarchError, ValueError):
    def __init__(self, message: str, bound: float):
        self.bound = float(bound)
        super().__init__(message)


class NoConvergence(SpgarchError, ArithmeticError):
    """Fixed-point iteration did not settle within the iteration budget."""

    def __init__(self, message: str, iterations: int, contraction_estimate: float):
        self.iterations = int(iterations)
        self.contraction_estimate = float(contraction_estimate)
        super().__init__(message)


class EstimationFailed(SpgarchError, RuntimeError):
    def __init__(self, message: str, diagnostics=()):
        self.diagnostics = list(diagnostics)
        super().__init__(message)


class DegenerateInput(SpgarchError, ValueError):
    pass


class DegenerateWeights(SpgarchError, ValueError):
    pass


class RankDeficient(SpgarchError, ValueError):
    pass


class NumericalFailure(SpgarchError, ArithmeticError):
    pass


class PipelineError(SpgarchError):
    """Wraps a failure inside the SAR + spGARCH pipeline with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
