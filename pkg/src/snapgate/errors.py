"""Exception and warning types raised across the package."""


class SnapGateError(Exception):
    """Base class for all errors raised by snapgate."""


class DomainError(SnapGateError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class DimensionError(SnapGateError, ValueError):
    """Operands live in spaces of different dimension."""


class TruncationError(SnapGateError):
    """A state does not fit the Fock cutoff well enough to be trusted."""


class NumericalIntegrityError(SnapGateError):
    """A numerical result drifted outside its tolerance (norm, trace, positivity)."""


class StepSizeError(NumericalIntegrityError):
    """The integration step is too coarse for the dynamics being integrated."""


class LowContrastError(SnapGateError):
    """An interference curve carries no usable signal above its residual."""


class AliasingError(SnapGateError):
    """Sampling is too sparse for phase unwrapping to be unambiguous."""


class UnderdeterminedError(SnapGateError):
    """Not enough independent data to determine the requested quantities."""


class CoverageError(SnapGateError):
    """A grid or correction does not cover the populated part of the state."""


class OptimizationFailure(SnapGateError):
    """An optimizer finished below the required figure of merit."""


class SelectivityWarning(UserWarning):
    """Drive strength is not small compared to the dispersive shift."""


class CoverageWarning(UserWarning):
    """Population sits outside the components an operation acts on."""
