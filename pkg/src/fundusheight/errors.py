"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1 (usage),
DataError and subclasses -> 2, TrainingDivergenceError -> 3.
"""


class FundusHeightError(Exception):
    """Base class for package errors."""


class ConfigError(FundusHeightError):
    """Invalid configuration or command usage."""


class DataError(FundusHeightError):
    """Corrupt or contract-violating data (manifests, images, tensors)."""


class HeightRangeError(DataError):
    """A height value lies outside the declared [min, max] range."""


class DomainError(DataError):
    """An image is in the wrong value domain for the requested operation."""


class ShapeError(DataError):
    """Tensor or image shape does not match the expected layout."""


class CheckpointError(DataError):
    """Checkpoint missing, unreadable, or incompatible with the architecture."""

    def __init__(self, message, mismatched_keys=()):
        if mismatched_keys:
            message = f"{message}: {sorted(mismatched_keys)}"
        super().__init__(message)
        self.mismatched_keys = tuple(mismatched_keys)


class TrainingDivergenceError(FundusHeightError):
    """A loss term became non-finite during optimization.

    `recent_breakdowns` holds the last logged loss rows (most recent last)
    for post-mortem inspection.
    """

    def __init__(self, message, recent_breakdowns=()):
        super().__init__(message)
        self.recent_breakdowns = list(recent_breakdowns)
