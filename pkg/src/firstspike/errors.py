"""Exception types raised across the package.

Everything derives from FirstSpikeError so callers can catch the whole
family with one clause. The CLI maps the three broad groups (config,
IO, data) to distinct exit codes.
"""


class FirstSpikeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FirstSpikeError):
    """Invalid configuration value or malformed config file."""


class TruncatedRecordError(FirstSpikeError):
    """Binary event payload length is not a whole number of records."""


class OutOfBoundsError(FirstSpikeError):
    """Event coordinates fall outside the sensor geometry."""


class ParseError(FirstSpikeError):
    """Malformed text event record; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class GeometryMismatchError(FirstSpikeError):
    """Two streams or a stream and a model disagree on sensor geometry."""


class EmptyStreamError(FirstSpikeError):
    """Operation requires at least one event."""


class OutOfOrderEventError(FirstSpikeError):
    """Event timestamp precedes the last processed timestamp."""


class TimestampRangeError(FirstSpikeError):
    """Timestamp does not fit the serialized field width."""


class LengthMismatchError(FirstSpikeError):
    """Weight and input sequences differ in length."""


class NonFiniteWeightError(FirstSpikeError):
    """Weights must be finite real numbers."""


class NegativeTimeError(FirstSpikeError):
    """Spike times are non-negative by convention."""


class StaleCacheError(FirstSpikeError):
    """Forward cache does not match the layer it is applied to."""


class NonFiniteInputError(FirstSpikeError):
    """Loss inputs must be finite (no-decision samples are handled upstream)."""


class ShapeMismatchError(FirstSpikeError):
    """Gradient and weight arrays disagree in shape."""


class EmptyDatasetError(FirstSpikeError):
    """Dataset must contain at least one sample."""


class UnlabeledEventError(FirstSpikeError):
    """Denoising metrics require every input event to carry a label."""


class NotASubsetError(FirstSpikeError):
    """Retained events must all occur in the reference stream."""


class CheckpointError(FirstSpikeError):
    """Checkpoint file is malformed or does not match the configured network."""
