"""Exception types shared across the package."""


class AffinvError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(AffinvError, ValueError):
    """An operation was called outside its contract (bad order, base, index...)."""


class FormulaDomainError(AffinvError, ArithmeticError):
    """A closed-form expression was evaluated where it is not defined.

    Examples: dividing by a jet with near-zero constant term, taking the
    square root of a negative leading coefficient, or asking the sextic
    root selector for a root when no admissible one exists.
    """


class NormalizationError(AffinvError, RuntimeError):
    """The staged frame solver failed to reach its cross-section.

    ``stage`` identifies the first stage whose constraints could not be
    satisfied (0 = translation, 1 = gradient, 2 = quadratic part, 3+ =
    branch-specific higher-order stages).
    """

    def __init__(self, message: str, stage: int = -1):
        super().__init__(message)
        self.stage = stage


class WrongBranchError(NormalizationError):
    """The input jet does not lie on the branch the caller asked for."""
