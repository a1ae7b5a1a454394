"""Exception taxonomy shared by all kamflow modules."""


class KamflowError(Exception):
    """Base class for all library errors."""


class StructuralError(KamflowError, ValueError):
    """Incompatible shapes: dimension mismatch, duplicate indices, ragged fields."""


class ConfigurationError(KamflowError, ValueError):
    """A knob is set to an unusable value (grid too small, missing weight, bad base)."""


class PreconditionError(KamflowError, ValueError):
    """A mathematical precondition of an operation is violated."""


class ResonanceError(PreconditionError):
    """An exact (within floating-point trust) resonance <k, omega> = 0 was hit."""

    def __init__(self, message, k=None):
        super().__init__(message)
        self.k = tuple(int(x) for x in k) if k is not None else None


class NonInvertibleError(PreconditionError):
    """Jacobian too far from the identity for the Neumann series to converge."""


class StepPreconditionError(PreconditionError):
    """A KAM step (or the pre-run gate) rejected its input; carries the step index."""

    def __init__(self, message, nu=0, bound=None):
        super().__init__(message)
        self.nu = int(nu)
        self.bound = bound


class DivergenceError(KamflowError, ArithmeticError):
    """An iteration failed to contract within its iteration budget."""
