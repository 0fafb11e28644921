"""Exception hierarchy. ``exit_code`` is what the CLI returns for each class."""


class QmpHerError(Exception):
    exit_code = 1


class ContractError(QmpHerError, ValueError):
    """A caller broke a documented precondition (shapes, lengths, ranges)."""

    exit_code = 2


class ConfigError(QmpHerError, ValueError):
    exit_code = 2


class NumericalDivergenceError(QmpHerError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class EpisodeFinishedError(ContractError):
    pass


class CheckpointError(QmpHerError):
    exit_code = 4
    code = "checkpoint"


class CheckpointVersionError(CheckpointError):
    exit_code = 2
    code = "version_mismatch"


class CheckpointCorruptError(CheckpointError):
    exit_code = 4
    code = "corrupt_file"


class CheckpointDimensionError(CheckpointError):
    exit_code = 2
    code = "incompatible_dims"
