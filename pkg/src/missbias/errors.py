"""Exception hierarchy shared across the package."""


class MissBiasError(Exception):
    """Base class for every error raised by this package."""


class ContractError(MissBiasError, ValueError):
    """A precondition on an argument was violated."""


class DomainError(ContractError):
    """Input lies outside the function's numerical domain (e.g. non-finite)."""


class OptimizationDiverged(MissBiasError, RuntimeError):
    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"objective became non-finite ({value}) at step {step}")


class TrainingError(MissBiasError, RuntimeError):
    pass


class IngestionError(MissBiasError, ValueError):
    pass


class ExplainerError(MissBiasError, RuntimeError):
    pass


class CapacityError(MissBiasError, ValueError):
    pass


class CalibratorLoadError(ContractError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"invalid calibrator document, field {field!r}: {message}")


class ConfigError(MissBiasError, ValueError):
    pass


class StageError(MissBiasError, RuntimeError):
    """A benchmark stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.__cause__ = cause
