"""Exception types shared across the toolkit."""


class DimensionError(ValueError):
    """Tensor or image shapes are incompatible with an operation."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class FormatError(ValueError):
    """A checkpoint or table file is malformed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(ValueError):
    """The training or evaluation data cannot be used."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""
