"""Exception hierarchy shared across the package."""


class FGTTError(Exception):
    """Base class for all package errors."""


class ShapeError(FGTTError, ValueError):
    pass


class ParameterError(FGTTError, ValueError):
    pass


class ContractError(FGTTError, ValueError):
    pass


class SchemaError(FGTTError, ValueError):
    """Raised when data does not conform to a feature schema."""


class ConstantColumnError(ContractError):
    """A column selected for standardisation has zero spread on the training rows."""


class ImputationError(FGTTError, ValueError):
    pass


class StratificationError(FGTTError, ValueError):
    pass


class ConfigError(FGTTError, ValueError):
    pass


class PartitionError(FGTTError, ValueError):
    pass


class AggregationError(FGTTError, ValueError):
    pass


class TrainingError(FGTTError, RuntimeError):
    pass


class SurrogateError(FGTTError, RuntimeError):
    pass
