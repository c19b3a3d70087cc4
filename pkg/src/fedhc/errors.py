"""Exception hierarchy shared across the package."""


class FedhcError(Exception):
    """Base class for every error raised by this package."""


class InputError(FedhcError, ValueError):
    """Malformed or unusable input data (CLI exit code 2)."""


class MissingCell(InputError):
    pass


class NonNumericCell(InputError):
    pass


class ConstantColumn(InputError):
    pass


class InvalidDataset(InputError):
    pass


class CptNotNormalized(InputError):
    pass


class SchemaError(InputError):
    pass


class CycleDetected(FedhcError):
    """A directed cycle was found; ``cycle`` holds the witnessed node sequence."""

    def __init__(self, cycle, message=None):
        self.cycle = list(cycle)
        super().__init__(message or "directed cycle: " + " -> ".join(map(str, self.cycle + self.cycle[:1])))


class SingularConditioningSet(FedhcError):
    pass


class InsufficientSample(FedhcError):
    pass


class DegenerateTable(FedhcError):
    pass


class SingularRegression(FedhcError):
    pass


class InconsistentConstraints(FedhcError):
    """Blacklist/whitelist cannot be honoured (CLI exit code 3)."""


class PreconditionError(FedhcError):
    """Data do not meet a method's requirements (CLI exit code 2)."""


class SingularSubset(FedhcError):
    pass


class ExactFit(PreconditionError):
    """More than h observations lie on a hyperplane."""


class DegenerateReweighting(PreconditionError):
    pass


class EmptyResult(PreconditionError):
    pass
