"""Exception hierarchy shared by all modules."""


class KModelError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class NonIntegerGenus(KModelError):
    pass


class EvenValence(KModelError):
    pass


class EvenVertex(KModelError):
    pass


class BudgetExceeded(KModelError):
    pass


class BadConstantTerm(KModelError):
    pass


class ShapeMismatch(KModelError):
    pass


class MultipleZHoles(KModelError):
    pass


class NotHomogeneous(KModelError):
    pass


class NotCyclic(KModelError):
    pass


class NoCiliation(KModelError):
    pass


class NonTermination(KModelError):
    pass


class NotResidualDegreeZero(KModelError):
    pass


class CancellationFailure(KModelError):
    pass


class CutoffMismatch(KModelError):
    pass


class TruncationWarning(UserWarning):
    pass
