"""Exception types shared across the package."""


class UsageError(ValueError):
    """Bad command input: missing paths, clobbered outputs, invalid flags."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class FormatError(ValueError):
    """A serialized artifact (dataset file, checkpoint) is malformed."""


class ContextOverflowError(ValueError):
    """An assembled token sequence exceeds the model's context window."""


class NumericalError(RuntimeError):
    """Training produced a non-finite loss.

    Carries enough context to point at the failing step.
    """

    def __init__(self, message: str, *, stage: str = "", epoch: int = -1,
                 step: int = -1, learning_rate: float = float("nan")):
        super().__init__(message)
        self.stage = stage
        self.epoch = epoch
        self.step = step
        self.learning_rate = learning_rate
