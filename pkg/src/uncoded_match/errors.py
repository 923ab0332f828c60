"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Malformed numeric input: bad shape, non-finite entry, dimension mismatch."""


class InvalidSpecError(InvalidInputError):
    """A problem specification violates one of its invariants.

    ``violations`` holds the individual messages produced by
    :func:`uncoded_match.model.validate`.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class NumericalFailureError(ArithmeticError):
    """An iterative kernel failed to converge."""


class DegenerateSchemeError(ValueError):
    """The uncoded scheme has a zero coefficient, a case the theory excludes."""


class InfeasibleDownstreamError(ValueError):
    """Downstream noise powers already violate their own thresholds."""


class ConsistencyError(RuntimeError):
    """An algebraic identity that must hold by construction was violated."""
