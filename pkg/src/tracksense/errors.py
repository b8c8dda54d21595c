"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A configuration, parameter, or input file failed validation."""


class KernelValidationError(ValidationError):
    """A transition kernel violates its invariants (never silently renormalized)."""


class ImpossibleMissError(ValueError):
    """Conditioning on a miss event of probability zero (unreachable history)."""


class StateBudgetError(RuntimeError):
    """Reachable-state closure exceeded the configured budget."""


class ActionSpaceError(RuntimeError):
    """Exact candidate enumeration would exceed the subset-count guard."""


class SolverError(RuntimeError):
    """A solver failed to produce a valid result."""


class NonContractionError(SolverError):
    """Value recursion failed to contract (e.g. gamma = 1 without exit mass)."""


class FingerprintMismatchError(ValidationError):
    """An artifact's kernel fingerprint does not match the supplied kernel."""
