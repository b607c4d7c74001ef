"""Exception hierarchy shared across the package.

Callers that need to map failures onto process exit codes (the CLI does)
can rely on the split: configuration problems, regularity/validation
failures, and plain numerical breakdowns are distinct branches.
"""


class SharpBridgeError(Exception):
    """Base class for all package errors."""


class ConfigError(SharpBridgeError, ValueError):
    """Malformed or inconsistent run configuration."""


class EvaluationError(SharpBridgeError):
    """A coefficient field returned non-finite or degenerate values."""


class NumericsError(SharpBridgeError):
    """An integrator, optimizer or finite-difference stack broke down."""


class ConjugatePointError(NumericsError):
    """The exponential-map Jacobian is near singular between two points."""


class RsrError(SharpBridgeError):
    """The strong-regularity diagnostics failed.

    Raised when a characteristic does not reach the boundary strictly
    before the truncated terminal time, or reaches it tangentially; in
    that regime the constant-prefactor expansion is not established.
    """
