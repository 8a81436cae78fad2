"""Exception hierarchy shared by the library, the CLI and the HTTP API."""


class AchelousError(Exception):
    """Base class for every error raised on purpose by this project."""


class ShapeError(AchelousError, ValueError):
    """A tensor or module received incompatible dimensions."""


class ConfigError(AchelousError, ValueError):
    """A configuration value, key or bound is invalid."""


class DatasetError(AchelousError, IOError):
    """A dataset file is missing, truncated or malformed."""

    def __init__(self, path, detail: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {detail}")


class CheckpointError(DatasetError):
    """A checkpoint file has a bad header or a truncated payload."""


class TrainingDivergedError(AchelousError, RuntimeError):
    """A task loss became NaN or infinite during training."""

    def __init__(self, task: str, value: float, step: int):
        self.task = task
        self.step = step
        super().__init__(f"loss for task '{task}' is {value} at step {step}")
