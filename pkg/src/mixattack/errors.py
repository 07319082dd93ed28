"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MixAttackError(Exception):
    exit_code = 1


class UsageError(MixAttackError):
    exit_code = 2


class CapacityError(UsageError):
    """Exhaustive search would exceed the configured combination cap."""


class DataError(MixAttackError):
    exit_code = 3


class SchemaError(DataError):
    pass


class FormatError(DataError):
    """A persisted binary file is malformed or has the wrong magic/version."""


class NumericError(MixAttackError):
    exit_code = 4


class TrainingError(NumericError):
    pass
