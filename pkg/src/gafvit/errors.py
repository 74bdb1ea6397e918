"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: DataError subclasses map to exit code 2,
NumericError subclasses to exit code 3, bad usage to exit code 1.
"""


class GafVitError(Exception):
    """Base class for everything raised on purpose by this package."""


class DataError(GafVitError):
    """Invalid or unusable input data."""


class NumericError(GafVitError):
    """Numerical failure during computation (non-finite values, bad graphs)."""


# -- data-side failures ------------------------------------------------------

class DegenerateSeries(DataError):
    """Constant series: min == max, normalization undefined."""


class NonFiniteInput(DataError):
    """NaN or infinity found where finite values are required."""


class OutOfRange(DataError):
    """Value outside its documented domain beyond tolerance."""


class ChannelOutOfBounds(DataError):
    """Channel index not present in the image."""


class DimensionMismatch(DataError):
    """Array dimensions incompatible with the configured model."""


class IndivisibleImage(DataError):
    """Image size not divisible by the patch size."""


class LabelOutOfRange(DataError):
    """Class label outside [0, num_classes)."""


class TooFewSamples(DataError):
    """Dataset too small for the requested operation."""


class ZeroVector(DataError):
    """Zero-norm vector where a direction is required."""


class SchemaError(DataError):
    """CSV file missing required columns or malformed rows."""


class NonMonotonicTime(DataError):
    """Timestamps within a trip are not strictly increasing."""


class EmptyInput(DataError):
    """Empty file, matrix, or sequence where content is required."""


class TooShort(DataError):
    """Sequence shorter than the minimum length for the operation."""


class LengthMismatch(DataError):
    """Paired sequences of different lengths."""


# -- numeric-side failures ---------------------------------------------------

class NonFiniteGradient(NumericError):
    """NaN or infinity appeared in a gradient."""


class GraphCycle(NumericError):
    """Backward pass found a cycle in the computation graph."""


class ShapeMismatch(NumericError):
    """Gradient shape disagrees with its parameter."""


# -- warnings ----------------------------------------------------------------

class DegenerateCurve(UserWarning):
    """Cluster-count curve carries no elbow information."""
