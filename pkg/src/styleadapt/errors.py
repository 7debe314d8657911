"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: ConfigError -> 1 (usage),
DatasetError -> 2 (data), everything else -> 3 (runtime).
"""


class ConfigError(Exception):
    """Bad run configuration: unknown key, unparsable value, invalid combination."""


class DatasetError(Exception):
    """Bad dataset on disk or invalid data request (missing root, empty class, ...)."""


class CheckpointError(Exception):
    """Unreadable, corrupt, or version-mismatched checkpoint file."""


class TrainingError(RuntimeError):
    """Training aborted; carries a diagnostics dict (step, loss components, grad norms)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
