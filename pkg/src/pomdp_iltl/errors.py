"""Exception types raised across the package."""


class PomdpIltlError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(PomdpIltlError):
    """A model, table or automaton file is malformed."""


class ModelValidationError(PomdpIltlError):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"{len(self.violations)} model violation(s):\n{lines}")


class ZeroLikelihoodObservation(PomdpIltlError):
    """The observation is impossible under the current belief and action."""


class DimensionMismatch(PomdpIltlError):
    pass


class IltlSyntaxError(PomdpIltlError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at offset {offset})")


class UnknownProposition(PomdpIltlError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown atomic proposition {name!r}")


class UnboundedOperator(PomdpIltlError):
    """Raised when a bounded evaluator meets U/F/G without a bound."""


class TraceTooShort(PomdpIltlError):
    pass


class LdbaValidationError(PomdpIltlError):
    def __init__(self, problems):
        self.problems = list(problems)
        lines = "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(f"invalid LDBA:\n{lines}")


class InvalidRun(PomdpIltlError):
    pass


class UnsupportedPattern(PomdpIltlError):
    pass


class EpsilonUnavailable(PomdpIltlError):
    pass


class EmptySet(PomdpIltlError):
    """An alpha-vector set that must be nonempty is empty."""


class InconsistentSamples(PomdpIltlError):
    pass


class InconsistentRecord(PomdpIltlError):
    pass


class NoSafeAction(PomdpIltlError):
    pass


class NonConvergence(PomdpIltlError):
    """Iteration budget exhausted; ``result`` carries the best-so-far output."""

    def __init__(self, message, residual, result=None):
        self.residual = residual
        self.result = result
        super().__init__(f"{message} (residual {residual:.3e})")
