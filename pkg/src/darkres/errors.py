"""Exception hierarchy. The CLI maps each family onto an exit status."""


class DarkresError(Exception):
    exit_code = 4


class ConfigError(DarkresError):
    exit_code = 2


class DataError(DarkresError):
    exit_code = 3


class ComputationError(DarkresError):
    exit_code = 4


class MissingColumn(DataError):
    def __init__(self, name):
        super().__init__(f"missing column: {name!r}")
        self.name = name


class EmptyDataset(DataError):
    pass


class LabelOutOfRange(DataError):
    def __init__(self, row, value):
        super().__init__(f"row {row}: label {value!r} is not a known category")
        self.row = row
        self.value = value


class CategoryTooSmall(DataError):
    def __init__(self, category_id, count):
        super().__init__(f"category {category_id} has {count} records, need at least 3")
        self.category_id = category_id


class ArtifactExists(DataError):
    pass


class InsufficientRows(DataError):
    pass


class ConstantInput(ComputationError):
    pass


class EmptySelection(ComputationError):
    pass


class DimensionMismatch(ComputationError):
    pass


class ZeroSpectralRadius(ComputationError):
    pass


class SingularSystem(ComputationError):
    pass


class UntrainedModel(ComputationError):
    pass


class NoLegalMutation(ComputationError):
    pass


class TooManyFeatures(ComputationError):
    def __init__(self, m, limit):
        super().__init__(f"{m} active features exceed the exact-enumeration limit of {limit}; use sampled mode")
        self.m = m


class WrongCardinality(ComputationError):
    pass
