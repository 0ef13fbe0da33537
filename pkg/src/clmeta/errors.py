"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: validation errors -> 2, numeric
failures -> 3, IO -> 4, compatibility -> 5.
"""


class ClmetaError(Exception):
    """Base class for all package errors."""


class ValidationError(ClmetaError):
    """Bad arguments, shapes, or configuration."""


class DimensionError(ValidationError):
    """Operand shapes are incompatible for an operation."""


class InvalidInputError(ValidationError):
    """Structurally valid but semantically unusable input (e.g. all-masked row)."""


class RangeError(ValidationError):
    """Index or step outside its documented range."""


class GraphError(ValidationError):
    """Autodiff contract violation (e.g. non-scalar backward root)."""


class NumericError(ClmetaError):
    """Non-finite values where finite ones are required."""


class SchemaError(ValidationError):
    """Corpus file does not match the expected column schema."""


class RowError(ValidationError):
    """A specific corpus row is malformed; message carries the row number."""


class LabelError(ValidationError):
    """Label outside the (fixed) label mapping."""


class SamplingError(ValidationError):
    """Not enough data to sample an episode; message names the class."""


class EpisodeAbortError(NumericError):
    """Inner-loop adaptation diverged; the episode is discarded."""


class CompatibilityError(ClmetaError):
    """Checkpoint and corpus/vocab do not belong together."""
