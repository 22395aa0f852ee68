"""Exception hierarchy shared by every stage of the pipeline."""


class SpikeCloudError(Exception):
    """Base class for all library errors."""


class ConfigError(SpikeCloudError, ValueError):
    """An option or configuration value is invalid.

    ``key`` names the offending setting when one is known.
    """

    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class ParseError(SpikeCloudError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DegenerateInputError(SpikeCloudError, ValueError):
    pass


class EncodingError(SpikeCloudError, ValueError):
    pass


class NumericError(SpikeCloudError, ArithmeticError):
    pass


class UsageError(SpikeCloudError, RuntimeError):
    pass


class TrainingDivergedError(NumericError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class CheckpointError(SpikeCloudError, ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    def __init__(self, name: str, expected, found):
        super().__init__(
            f"tensor {name!r}: manifest shape {tuple(found)} does not match "
            f"config shape {tuple(expected)}"
        )
        self.name = name
        self.expected = tuple(expected)
        self.found = tuple(found)
