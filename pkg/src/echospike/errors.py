"""Exception types shared across the package."""


class EchoSpikeError(Exception):
    """Base class for all package errors."""


class EspkFormatError(EchoSpikeError):
    """Raised when an ESPK file fails to parse or validate.

    Attributes:
        offset: Absolute byte offset of the first offending byte.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class CheckpointError(EchoSpikeError):
    """Raised when a checkpoint manifest or blob is inconsistent."""


class TrainingDivergedError(EchoSpikeError):
    """Raised when a non-finite weight appears during training."""
