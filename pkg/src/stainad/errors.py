"""Toolkit error types, mapped to CLI exit codes by stainad.cli."""


class ConfigError(Exception):
    """Bad or inconsistent run configuration (CLI exit code 2)."""


class DataError(Exception):
    """Dataset missing, malformed, or incomplete (CLI exit code 3)."""


class TrainingDiverged(Exception):
    """Non-finite loss or other numeric failure during training (CLI exit code 4)."""

    def __init__(self, message, epoch=None, batch=None, lr=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.lr = lr
