"""Event data types, dataset IO, and synthetic stream generators.

An event stream is stored as parallel numpy arrays (one entry per event)
plus the sensor geometry. Streams are immutable after construction and
always time-sorted; every generator and parser in this module returns a
validated stream.

Labels: each event optionally carries a signal/noise tag used by the
denoising benchmark. Unlabeled events carry UNLABELED.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .errors import (
    ConfigError,
    EmptyStreamError,
    GeometryMismatchError,
    OutOfBoundsError,
    ParseError,
    TimestampRangeError,
    TruncatedRecordError,
)

UNLABELED = -1
NOISE = 0
SIGNAL = 1

# 23-bit timestamp field in the packed binary record format
MAX_BINARY_TIMESTAMP = (1 << 23) - 1

_LABEL_TEXT = {SIGNAL: "signal", NOISE: "noise"}
_TEXT_LABEL = {"signal": SIGNAL, "noise": NOISE, "": UNLABELED}


@dataclass(frozen=True)
class Event:
    """One address event: time (µs or normalized), pixel address, polarity."""

    t: float
    x: int
    y: int
    p: int
    label: int = UNLABELED

    def key(self) -> tuple:
        """Identity of the event for subset/equality checks (label excluded)."""
        return (self.t, self.x, self.y, self.p)


class EventStream:
    """Time-sorted sequence of events on a fixed sensor geometry.

    Arrays are read-only views; build new streams instead of mutating.
    """

    __slots__ = ("t", "x", "y", "p", "label", "width", "height")

    def __init__(self, t, x, y, p, label=None, *, width: int, height: int):
        t = np.asarray(t)
        if t.dtype.kind == "f":
            t = t.astype(np.float64)
        else:
            t = t.astype(np.int64)
        x = np.asarray(x, dtype=np.int32)
        y = np.asarray(y, dtype=np.int32)
        p = np.asarray(p, dtype=np.int8)
        if label is None:
            label = np.full(t.shape, UNLABELED, dtype=np.int8)
        else:
            label = np.asarray(label, dtype=np.int8)
        if not (t.shape == x.shape == y.shape == p.shape == label.shape):
            raise ValueError("event arrays must have equal lengths")
        if width <= 0 or height <= 0:
            raise ValueError(f"invalid geometry {width}x{height}")
        if t.size:
            if np.any(np.diff(t) < 0):
                raise ValueError("events must be sorted by timestamp")
            if t[0] < 0:
                raise ValueError("timestamps must be non-negative")
            if np.any((x < 0) | (x >= width) | (y < 0) | (y >= height)):
                raise OutOfBoundsError(
                    f"event coordinates outside {width}x{height} sensor"
                )
            if np.any((p != 1) & (p != -1)):
                raise ValueError("polarity must be +1 or -1")
        for arr in (t, x, y, p, label):
            arr.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "height", height)

    def __setattr__(self, name, value):
        raise AttributeError("EventStream is immutable")

    def __len__(self) -> int:
        return int(self.t.size)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self.event(i)

    def event(self, i: int) -> Event:
        t = self.t[i]
        t = float(t) if self.t.dtype.kind == "f" else int(t)
        return Event(t, int(self.x[i]), int(self.y[i]), int(self.p[i]),
                     int(self.label[i]))

    @property
    def duration_us(self) -> float:
        """Span of the recording (0 for empty or single-event streams)."""
        if len(self) == 0:
            return 0
        return self.t[-1] - self.t[0]

    @property
    def labeled(self) -> bool:
        return len(self) > 0 and bool(np.all(self.label != UNLABELED))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and len(self) == len(other)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
            and np.array_equal(self.label, other.label)
        )

    def __repr__(self) -> str:
        return (f"EventStream({len(self)} events, {self.width}x{self.height}, "
                f"span={self.duration_us})")

    @staticmethod
    def empty(width: int, height: int) -> "EventStream":
        return EventStream([], [], [], [], width=width, height=height)

    @staticmethod
    def from_unsorted(t, x, y, p, label=None, *, width: int,
                      height: int) -> "EventStream":
        """Build a stream from arrays in arbitrary order (stable time sort)."""
        t = np.asarray(t)
        order = np.argsort(t, kind="stable")
        label = None if label is None else np.asarray(label)[order]
        return EventStream(
            t[order], np.asarray(x)[order], np.asarray(y)[order],
            np.asarray(p)[order], label, width=width, height=height,
        )


@dataclass(frozen=True)
class Sample:
    """One labeled recording for training/evaluation."""

    stream: EventStream
    class_label: int

    def __post_init__(self):
        if self.class_label < 0:
            raise ValueError("class_label must be non-negative")


# ---------------------------------------------------------------------------
# Binary dataset format (5-byte packed records)
# ---------------------------------------------------------------------------

def read_nmnist(data: bytes, width: int, height: int) -> EventStream:
    """Decode 5-byte packed address-event records.

    Record layout: byte0 = x, byte1 = y, byte2 bit 7 = polarity
    (1 -> +1, 0 -> -1), byte2 bits 6..0 + byte3 + byte4 = 23-bit
    timestamp in microseconds, big-endian.
    """
    if len(data) % 5 != 0:
        raise TruncatedRecordError(
            f"payload of {len(data)} bytes is not a multiple of 5"
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 5).astype(np.int64)
    x = raw[:, 0]
    y = raw[:, 1]
    p = np.where(raw[:, 2] & 0x80, 1, -1)
    t = ((raw[:, 2] & 0x7F) << 16) | (raw[:, 3] << 8) | raw[:, 4]
    if raw.shape[0] and (x.max() >= width or y.max() >= height):
        bad = int(np.argmax((x >= width) | (y >= height)))
        raise OutOfBoundsError(
            f"record {bad}: ({x[bad]},{y[bad]}) outside {width}x{height}"
        )
    return EventStream.from_unsorted(t, x, y, p, width=width, height=height)


def write_nmnist(stream: EventStream) -> bytes:
    """Encode a stream into the 5-byte packed record format (bit-exact).

    Timestamps must be integral and fit in 23 bits; anything larger is an
    error rather than a silent wraparound.
    """
    t = stream.t
    if t.dtype.kind == "f":
        if not np.all(t == np.floor(t)):
            raise TimestampRangeError("binary format requires integer µs timestamps")
        t = t.astype(np.int64)
    if len(stream) and t.max() > MAX_BINARY_TIMESTAMP:
        raise TimestampRangeError(
            f"timestamp {int(t.max())} exceeds 23-bit range "
            f"({MAX_BINARY_TIMESTAMP})"
        )
    if stream.width > 256 or stream.height > 256:
        raise TimestampRangeError("geometry exceeds one-byte coordinate range")
    out = np.empty((len(stream), 5), dtype=np.uint8)
    out[:, 0] = stream.x
    out[:, 1] = stream.y
    out[:, 2] = ((stream.p == 1).astype(np.uint8) << 7) | ((t >> 16) & 0x7F)
    out[:, 3] = (t >> 8) & 0xFF
    out[:, 4] = t & 0xFF
    return out.tobytes()


# ---------------------------------------------------------------------------
# CSV event format: t,x,y,p[,label]
# ---------------------------------------------------------------------------

def write_csv_events(stream: EventStream) -> str:
    """Serialize a stream as CSV, one event per line.

    A leading comment carries the geometry so the round trip is exact;
    the label column appears only when at least one event is labeled.
    """
    with_labels = bool(np.any(stream.label != UNLABELED))
    lines = [f"# width={stream.width} height={stream.height}"]
    lines.append("t,x,y,p,label" if with_labels else "t,x,y,p")
    t_is_float = stream.t.dtype.kind == "f"
    for i in range(len(stream)):
        t = repr(float(stream.t[i])) if t_is_float else str(int(stream.t[i]))
        row = f"{t},{stream.x[i]},{stream.y[i]},{stream.p[i]}"
        if with_labels:
            row += "," + _LABEL_TEXT.get(int(stream.label[i]), "")
        lines.append(row)
    return "\n".join(lines) + "\n"


def read_csv_events(text: str, width: Optional[int] = None,
                    height: Optional[int] = None) -> EventStream:
    """Parse CSV events (`t,x,y,p[,label]`, optional header line).

    Geometry comes from an explicit argument, a `# width=.. height=..`
    comment, or is inferred from the maximum coordinates.
    """
    ts, xs, ys, ps, labels = [], [], [], [], []
    header_seen = False
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            fields = dict(
                part.split("=", 1) for part in line[1:].split() if "=" in part
            )
            if width is None and "width" in fields:
                width = int(fields["width"])
            if height is None and "height" in fields:
                height = int(fields["height"])
            continue
        cols = [c.strip() for c in line.split(",")]
        if not header_seen and cols[0].lower() == "t":
            header_seen = True
            continue
        header_seen = True
        if len(cols) not in (4, 5):
            raise ParseError(line_no, f"expected 4 or 5 fields, got {len(cols)}")
        try:
            t_text = cols[0]
            t = float(t_text) if ("." in t_text or "e" in t_text.lower()) \
                else int(t_text)
            x, y, p = int(cols[1]), int(cols[2]), int(cols[3])
        except ValueError as exc:
            raise ParseError(line_no, str(exc)) from None
        if p not in (-1, 1):
            raise ParseError(line_no, f"polarity must be -1 or 1, got {p}")
        if t < 0:
            raise ParseError(line_no, f"negative timestamp {t}")
        label = UNLABELED
        if len(cols) == 5:
            if cols[4].lower() not in _TEXT_LABEL:
                raise ParseError(line_no, f"unknown label {cols[4]!r}")
            label = _TEXT_LABEL[cols[4].lower()]
        ts.append(t)
        xs.append(x)
        ys.append(y)
        ps.append(p)
        labels.append(label)
    any_float = any(isinstance(t, float) for t in ts)
    t_arr = np.array(ts, dtype=np.float64 if any_float else np.int64)
    if width is None:
        width = int(max(xs) + 1) if xs else 1
    if height is None:
        height = int(max(ys) + 1) if ys else 1
    return EventStream.from_unsorted(
        t_arr, np.array(xs, dtype=np.int32), np.array(ys, dtype=np.int32),
        np.array(ps, dtype=np.int8), np.array(labels, dtype=np.int8),
        width=width, height=height,
    )


# ---------------------------------------------------------------------------
# Synthetic streams
# ---------------------------------------------------------------------------

def synth_signal(pattern: str, width: int, height: int, duration_us: int,
                 event_rate: float, rng_seed: int,
                 blob_radius: float = 2.5) -> EventStream:
    """Generate signal events along a moving pattern's leading edge.

    `pattern` is "moving_bar" (vertical bar sweeping left to right) or
    "moving_blob" (disk moving corner to corner). Events fire when the
    edge reaches a pixel, with jitter smaller than the edge dwell time,
    so every event is spatiotemporally supported by its neighbors.
    `event_rate` is events per second over the whole sensor; rates above
    one event per swept pixel yield repeated events per pixel.
    """
    if event_rate <= 0:
        raise ConfigError(f"event_rate must be positive, got {event_rate}")
    if duration_us <= 0:
        raise ConfigError("duration_us must be positive")
    rng = np.random.default_rng(rng_seed)
    total_target = event_rate * duration_us / 1e6

    if pattern == "moving_bar":
        # pixel (c, y) is crossed while the bar occupies column c; the
        # integer-µs window [lo, hi] stays strictly inside that interval
        dwell = duration_us / width
        cols, rows = np.meshgrid(np.arange(width), np.arange(height),
                                 indexing="ij")
        c = cols.ravel()
        lo = np.ceil(c * dwell).astype(np.int64)
        hi = np.ceil((c + 1) * dwell).astype(np.int64) - 1
        px = c.astype(np.int32)
        py = rows.ravel().astype(np.int32)
    elif pattern == "moving_blob":
        px, py, entry, exit_ = _blob_crossings(
            width, height, duration_us, blob_radius
        )
        if px.size == 0:
            raise ConfigError("blob trajectory sweeps no pixels; enlarge sensor")
        # jitter window capped at the one-pixel travel time (leading edge)
        one_px = duration_us / _blob_path_length(width, height, blob_radius)
        lo = np.ceil(entry).astype(np.int64)
        hi = np.floor(np.minimum(entry + one_px, exit_)).astype(np.int64)
    else:
        raise ConfigError(f"unknown signal pattern {pattern!r}")

    hi = np.minimum(hi, duration_us - 1)
    ok = hi >= lo
    px, py, lo, hi = px[ok], py[ok], lo[ok], hi[ok]
    n_pixels = px.size
    per_pixel = total_target / n_pixels
    base = int(per_pixel)
    extra = rng.random(n_pixels) < (per_pixel - base)
    counts = np.full(n_pixels, base, dtype=np.int64) + extra
    reps = np.repeat(np.arange(n_pixels), counts)
    t = rng.integers(lo[reps], hi[reps] + 1)
    p = rng.choice(np.array([-1, 1], dtype=np.int8), size=reps.size)
    label = np.full(reps.size, SIGNAL, dtype=np.int8)
    return EventStream.from_unsorted(
        t, px[reps], py[reps], p, label, width=width, height=height,
    )


def _blob_path_length(width, height, radius):
    margin = radius + 1
    return float(np.hypot(width - 1 - 2 * margin, height - 1 - 2 * margin))


def _blob_crossings(width, height, duration_us, radius):
    """Entry/exit times of the moving disk for every pixel it sweeps."""
    margin = radius + 1
    start = np.array([margin, margin])
    end = np.array([width - 1 - margin, height - 1 - margin])
    if np.any(end <= start):
        return (np.array([], dtype=np.int32),) * 2 + (np.array([]),) * 2
    path = end - start
    xs, ys = np.meshgrid(np.arange(width), np.arange(height), indexing="ij")
    pix = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    # distance from pixel to the moving center at parameter s in [0, 1]:
    # |pix - start - s*path|^2 <= r^2, a quadratic in s
    d = pix - start
    a = path @ path
    b = -2.0 * (d @ path)
    c = np.sum(d * d, axis=1) - radius**2
    disc = b * b - 4 * a * c
    hit = disc >= 0
    sqrt_disc = np.sqrt(np.maximum(disc, 0.0))
    s_in = (-b - sqrt_disc) / (2 * a)
    s_out = (-b + sqrt_disc) / (2 * a)
    hit &= (s_out >= 0) & (s_in <= 1)
    s_in = np.clip(s_in, 0.0, 1.0)
    s_out = np.clip(s_out, 0.0, 1.0)
    hit &= s_out > s_in
    return (
        pix[hit, 0].astype(np.int32), pix[hit, 1].astype(np.int32),
        s_in[hit] * duration_us, s_out[hit] * duration_us,
    )


def blob_center(width: int, height: int, duration_us: int, t,
                blob_radius: float = 2.5):
    """Center of the moving_blob pattern at time t (for geometric checks)."""
    margin = blob_radius + 1
    start = np.array([margin, margin])
    end = np.array([width - 1 - margin, height - 1 - margin])
    s = np.clip(np.asarray(t, dtype=np.float64) / duration_us, 0.0, 1.0)
    return start + np.multiply.outer(s, end - start)


def bar_column(width: int, duration_us: int, t):
    """Column occupied by the moving_bar pattern at time t."""
    dwell = duration_us / width
    return np.minimum(
        (np.asarray(t, dtype=np.float64) // dwell).astype(np.int64), width - 1
    )


def synth_noise(kind: str, width: int, height: int, duration_us: int,
                rate: float, rng_seed: int, *, refractory_us: int = 10_000,
                burst_len: int = 4, burst_gap_us: int = 2_000,
                burst_separation: int = 3) -> EventStream:
    """Generate noise events of the two canonical kinds.

    "type1": spatiotemporally uniform events with no self-correlation
    (no pixel receives two events within `refractory_us`; violating
    draws are rejected and redrawn).
    "type2": bursts of `burst_len` >= 3 events at isolated pixels with
    inter-event gaps below `burst_gap_us`, placed at least
    `burst_separation` pixels apart so bursts get no neighbor support.
    """
    if rate <= 0:
        raise ConfigError(f"rate must be positive, got {rate}")
    if duration_us <= 0:
        raise ConfigError("duration_us must be positive")
    rng = np.random.default_rng(rng_seed)
    n_total = max(1, round(rate * duration_us / 1e6))

    if kind == "type1":
        x = rng.integers(0, width, size=n_total)
        y = rng.integers(0, height, size=n_total)
        t = rng.integers(0, duration_us, size=n_total)
        for _ in range(200):
            bad = _self_correlated(x, y, t, refractory_us)
            if not bad.any():
                break
            n_bad = int(bad.sum())
            x[bad] = rng.integers(0, width, size=n_bad)
            y[bad] = rng.integers(0, height, size=n_bad)
            t[bad] = rng.integers(0, duration_us, size=n_bad)
        else:
            keep = ~_self_correlated(x, y, t, refractory_us)
            x, y, t = x[keep], y[keep], t[keep]
        p = rng.choice(np.array([-1, 1], dtype=np.int8), size=x.size)
        label = np.full(x.size, NOISE, dtype=np.int8)
        return EventStream.from_unsorted(t, x, y, p, label,
                                         width=width, height=height)

    if kind == "type2":
        if burst_len < 3:
            raise ConfigError("burst_len must be at least 3")
        n_bursts = max(1, round(n_total / burst_len))
        placed: list[tuple[int, int]] = []
        xs, ys, ts = [], [], []
        for _ in range(n_bursts):
            for _attempt in range(1000):
                bx = int(rng.integers(0, width))
                by = int(rng.integers(0, height))
                if all(max(abs(bx - ox), abs(by - oy)) >= burst_separation
                       for ox, oy in placed):
                    break
            else:
                raise ConfigError(
                    "cannot place isolated bursts; lower the rate or "
                    "enlarge the sensor"
                )
            placed.append((bx, by))
            gaps = rng.integers(1, burst_gap_us, size=burst_len - 1)
            start = int(rng.integers(0, max(1, duration_us - int(gaps.sum()))))
            times = start + np.concatenate([[0], np.cumsum(gaps)])
            xs.extend([bx] * burst_len)
            ys.extend([by] * burst_len)
            ts.extend(times.tolist())
        p = rng.choice(np.array([-1, 1], dtype=np.int8), size=len(xs))
        label = np.full(len(xs), NOISE, dtype=np.int8)
        return EventStream.from_unsorted(
            np.array(ts, dtype=np.int64), np.array(xs), np.array(ys), p,
            label, width=width, height=height,
        )

    raise ConfigError(f"unknown noise kind {kind!r}")


def _self_correlated(x, y, t, refractory_us):
    """Mark the later event of every same-pixel pair closer than the window."""
    flat = y.astype(np.int64) * (x.max() + 1 if x.size else 1) + x
    order = np.lexsort((t, flat))
    fs, ts_ = flat[order], t[order]
    close = np.zeros(x.size, dtype=bool)
    same = (fs[1:] == fs[:-1]) & (ts_[1:] - ts_[:-1] < refractory_us)
    close[order[1:][same]] = True
    return close


def mix_streams(signal: EventStream, noise: EventStream):
    """Merge a signal stream with a noise stream; returns (stream, snr).

    snr = |signal| / (|signal| + |noise|), the fraction of events that
    are signal (1.0 when no noise is present).
    """
    if (signal.width, signal.height) != (noise.width, noise.height):
        raise GeometryMismatchError(
            f"{signal.width}x{signal.height} vs {noise.width}x{noise.height}"
        )
    total = len(signal) + len(noise)
    snr = len(signal) / total if total else 1.0
    t = np.concatenate([signal.t, noise.t])
    mixed = EventStream.from_unsorted(
        t,
        np.concatenate([signal.x, noise.x]),
        np.concatenate([signal.y, noise.y]),
        np.concatenate([signal.p, noise.p]),
        np.concatenate([signal.label, noise.label]),
        width=signal.width, height=signal.height,
    )
    return mixed, snr


def normalize_timestamps(stream: EventStream,
                         t_max_norm: float = 1.0) -> EventStream:
    """Affinely map timestamps onto [0, t_max_norm].

    The first event maps to 0 and the last to t_max_norm; a single-event
    (zero-span) stream maps to 0.
    """
    if len(stream) == 0:
        raise EmptyStreamError("cannot normalize an empty stream")
    t = stream.t.astype(np.float64)
    span = t[-1] - t[0]
    if span > 0:
        t = (t - t[0]) * (t_max_norm / span)
        t[-1] = t_max_norm  # guard rounding at the top end
    else:
        t = np.zeros_like(t)
    return EventStream(t, stream.x, stream.y, stream.p, stream.label,
                       width=stream.width, height=stream.height)
