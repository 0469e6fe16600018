"""Exception types shared across the package.

Each error class maps to one failure contract; the CLI translates them
into its exit-code taxonomy.
"""


class CxrPrepError(Exception):
    """Base class for all package errors."""


# image i/o
class UnsupportedFormatError(CxrPrepError):
    """Raster is multi-channel, wrong bit depth, or an unknown format."""


class CorruptDataError(CxrPrepError):
    """File exists but cannot be decoded."""


# clahe
class ImageTooSmallError(CxrPrepError):
    """Image smaller than the tile grid."""


# mask ops
class DimensionMismatchError(CxrPrepError):
    """Mask and image dimensions differ."""


class EmptyMaskError(CxrPrepError):
    """Mask has no set pixel; the record is unusable."""


class OutOfBoundsError(CxrPrepError):
    """Box exceeds image bounds."""


# manifest
class SchemaMismatchError(CxrPrepError):
    """Metadata CSV lacks required columns or has a malformed header."""


class DuplicateRecordIdError(CxrPrepError):
    """Same record_id ingested twice."""


class OverlapViolationError(CxrPrepError):
    """A patient appears in more than one split (internal assertion)."""


# metrics
class DegenerateLabelsError(CxrPrepError):
    """AUROC undefined: only one class present."""


class MissingRaceScoresError(CxrPrepError):
    """Prediction file carries no race score columns."""


class NoValidCellsError(CxrPrepError):
    """No (label, group-pair) cell was computable."""


class DuplicateRunError(CxrPrepError):
    """Two runs share (method, seed, dataset)."""


class EmptyRunSetError(CxrPrepError):
    """Report requested over zero runs."""


# probe
class SingleGroupError(CxrPrepError):
    """Probe training needs at least two groups."""


# batch execution
class FailureThresholdError(CxrPrepError):
    """Per-record failure rate exceeded the configured threshold."""


class InternalInvariantError(CxrPrepError):
    """A should-never-happen condition; indicates a bug, not bad input."""
