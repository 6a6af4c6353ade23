"""Exception types shared across the toolkit."""


class DimensionMismatchError(ValueError):
    """Raised when an input's class dimension disagrees with the accumulator or params."""


class NonFiniteLogitError(ValueError):
    """Raised when a record contains NaN or infinite logit entries.

    Carries the offending record index (position within the batch or stream)
    in ``record_index``.
    """

    def __init__(self, record_index: int, message: str | None = None):
        self.record_index = record_index
        super().__init__(message or f"non-finite logits in record {record_index}")


class EmptyStreamError(ValueError):
    """Raised when an operation that needs at least one record receives none."""


class InvalidLabelError(ValueError):
    """Raised when a label is not a valid class index.

    Carries the offending label in ``label``.
    """

    def __init__(self, label: int, num_classes: int):
        self.label = label
        super().__init__(f"label {label} is not a valid index for {num_classes} classes")


class TrainingDivergedError(RuntimeError):
    """Raised when training produces a non-finite loss or parameters."""

    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}")
