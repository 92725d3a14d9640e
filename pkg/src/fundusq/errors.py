"""Exception types shared across the fundusq package."""


class FundusQError(Exception):
    """Base class for all package-specific errors."""


# --- imaging ---------------------------------------------------------------

class AllBlackImage(FundusQError):
    """Raised when border cropping would remove every row and column."""


# --- datasets --------------------------------------------------------------

class ParseError(FundusQError):
    """Manifest file is not syntactically valid."""


class ValidationError(FundusQError):
    """A record violates a manifest invariant."""

    def __init__(self, message: str, record_id: str | None = None):
        super().__init__(message)
        self.record_id = record_id


class InsufficientData(FundusQError):
    """A requested split size exceeds what the manifest contains."""


class IdCollision(FundusQError):
    """Two manifests being merged share a record id."""


# --- qmodel ----------------------------------------------------------------

class UnsupportedConfig(FundusQError):
    """Model configuration names an unknown backbone, head or init."""


class WrongHead(FundusQError):
    """Operation requires a different model head."""


class ShapeMismatch(FundusQError):
    """Input tensor does not match what the model expects."""


class CorruptCheckpoint(FundusQError):
    """Checkpoint file failed its content-hash verification."""


# --- training --------------------------------------------------------------

class MissingLabels(FundusQError):
    """Manifest lacks the label kind a training stage needs."""


class EmptySplit(FundusQError):
    """A split required for training contains no records."""


class WrongStage(FundusQError):
    """Checkpoint provenance does not match the stage being run."""


# --- metrics ---------------------------------------------------------------

class LengthMismatch(FundusQError):
    """Paired inputs have different lengths."""


class EmptyInput(FundusQError):
    """A statistic was requested on an empty sample."""


class AllZeroDifferences(FundusQError):
    """Wilcoxon test is undefined when every paired difference is zero."""


class OneClassOnly(FundusQError):
    """AUC is undefined when only one class is present."""


class DegenerateInput(FundusQError):
    """Input has no variance where variance is required."""


class IndexOutOfRange(FundusQError):
    """A class index lies outside [0, k)."""


# --- explain ---------------------------------------------------------------

class UnknownLayer(FundusQError):
    """Requested CAM layer does not exist in the model."""


class NonScalarOutput(FundusQError):
    """Grad-CAM for regression needs a single scalar model output."""


class DimensionMismatch(FundusQError):
    """Heatmap and image spatial dimensions differ."""
