"""Error taxonomy for the harness.

`HarnessError` is the base for everything this package raises on
expected failure paths; nothing here subclasses ValueError, keeping
usage errors and data errors distinct for the CLI's exit-code mapping.
"""


class HarnessError(Exception):
    """Base class for all harness failures."""


class SchemaViolationError(HarnessError):
    """An input or output file does not match its documented layout."""


class CorruptImageError(HarnessError):
    """An image file exists but cannot be decoded."""


class EmptySplitError(HarnessError):
    """A requested manifest split has no usable records."""


class DegenerateTargetsError(HarnessError):
    """Training targets carry no signal (single class everywhere)."""


class FrozenEncoderViolation(HarnessError):
    """The encoder's parameters changed while they were meant to be frozen."""
