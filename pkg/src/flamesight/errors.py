"""Exception hierarchy shared across the package.

Every error raised by library code derives from :class:`FlameSightError` so
callers (and the CLI) can distinguish validation problems from genuine
runtime failures with a single except clause.
"""


class FlameSightError(Exception):
    """Base class for all flamesight errors."""


# --- raster input/output ---------------------------------------------------

class UnreadableFile(FlameSightError):
    """File is missing, truncated, or not decodable at all."""


class UnsupportedFormat(FlameSightError):
    """File decodes but is not an accepted raster layout."""


class ZeroDimension(FlameSightError):
    """Raster declares a zero width or height."""


class MultiChannelInput(FlameSightError):
    """Single-channel raster expected, got multiple channels."""


class ZeroTarget(FlameSightError):
    """Resample target dimension is not positive."""


class DimensionMismatch(FlameSightError):
    """Two rasters that must be aligned have different dimensions."""


class NonDivisibleSize(FlameSightError):
    """Image dimensions are not a multiple of the patch size."""


class EmptyImage(FlameSightError):
    """Operation requires at least one pixel."""


# --- model -----------------------------------------------------------------

class InvalidDim(FlameSightError):
    """Requested embedding/architecture dimension is out of range."""


class ShapeMismatch(FlameSightError):
    """Tensor shapes are inconsistent with the model configuration."""


class NonFiniteActivation(FlameSightError):
    """A forward pass produced NaN or infinity."""


class NonFiniteGradient(FlameSightError):
    """A gradient used for an update is NaN or infinite."""


class CorruptCheckpoint(FlameSightError):
    """Checkpoint file fails magic/version/layout validation."""


# --- losses and prototypes ---------------------------------------------------

class NonFinite(FlameSightError):
    """Input vector contains NaN or infinity."""


class EmptyBatch(FlameSightError):
    """Loss requested on an empty batch."""


class DegenerateBatch(FlameSightError):
    """Batch cannot support the requested operation (e.g. one class only)."""


class ZeroNormVector(FlameSightError):
    """Cosine-style loss received a vector with (near-)zero norm."""


class InconsistentBatch(FlameSightError):
    """Loss components were computed on differently sized batches."""


class NonFiniteDelta(FlameSightError):
    """Prototype update delta is NaN or infinite."""


# --- dataset / training ------------------------------------------------------

class PairMismatch(FlameSightError):
    """RGB and thermal path lists do not align one-to-one."""


class SingleClassDataset(FlameSightError):
    """Dataset or batch contains only one class where two are required."""


class DivergenceDetected(FlameSightError):
    """Training produced a non-finite loss."""


class InvalidSpec(FlameSightError):
    """Synthetic corpus specification is self-contradictory."""


# --- evaluation --------------------------------------------------------------

class LengthMismatch(FlameSightError):
    """Aligned label lists have different lengths."""


class EmptyMatrix(FlameSightError):
    """Confusion matrix has no entries."""


class EmptyClass(FlameSightError):
    """Per-class statistic requested for a class with no samples."""


class GridMismatch(FlameSightError):
    """Prediction list does not cover the patch grid."""
