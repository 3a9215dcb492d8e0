"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GradAlignError(Exception):
    exit_code = 3


class UsageError(GradAlignError):
    exit_code = 2


class DataError(GradAlignError):
    """Invalid input data, configuration or join."""

    exit_code = 3


class DimensionError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class DecodeError(DataError):
    pass


class ExhaustionError(DataError):
    pass


class InsufficientProbeError(DataError):
    pass


class MissingGenomeError(DataError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"genomes missing from benchmark table: {', '.join(self.missing)}")


class NumericalError(GradAlignError):
    exit_code = 4


class UndefinedCorrelationError(NumericalError):
    pass


class TrainingDivergedError(NumericalError):
    def __init__(self, message, last_finite_epoch):
        self.last_finite_epoch = last_finite_epoch
        super().__init__(message)


class PreconditionError(NumericalError):
    pass


class DegenerateGeometryError(NumericalError):
    pass
