"""Exception hierarchy shared by all subpackages."""


class WptError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(WptError, ValueError):
    """A model or scenario violates one of its invariants."""


class NonPhysicalCoupling(ValidationError):
    """Coupling coefficient >= 1 or an inductance matrix that is not positive definite."""


class DimensionMismatch(ValidationError):
    pass


class DutyOutOfRange(ValidationError):
    """Switch-on time outside [0, T/2]."""


class FrequencyOutOfRange(ValidationError):
    """Frequency outside the compensable range of a capacitor pair."""


class InfeasibleTargets(ValidationError):
    pass


class WindowTooLong(ValidationError):
    pass


class InsufficientEdges(WptError):
    pass


class NumericalError(WptError, ArithmeticError):
    """Base for solver failures (CLI exit code 3)."""


class ConductionFixpointDivergence(NumericalError):
    pass


class StepTooLarge(NumericalError):
    pass


class ParseError(WptError):
    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
