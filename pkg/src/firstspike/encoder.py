"""Per-pixel leaky integrate-and-fire filter bank for event streams.

Each pixel owns a LIF membrane. An incoming event excites the membranes
of its spatial neighbors (positive weight) and penalizes its own pixel
(negative weight), both decaying exponentially with time constant
tau_c. A pixel may emit only at the instant one of its own events
arrives, when its membrane has been driven over threshold by earlier
neighbor activity, and at most `max_spikes_per_pixel` times per stream:
isolated events (no neighbor support) never fire, and repeated
same-pixel bursts talk themselves down through the self penalty.

Membranes decay lazily: a pixel's value is brought forward to the
current event time only when the pixel is touched, so each event costs
O(neighborhood), never a full-grid sweep.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, OutOfBoundsError, OutOfOrderEventError
from .events import Event, EventStream


@dataclass(frozen=True)
class EncoderConfig:
    """Filter bank parameters.

    tau_c_us: membrane leak time constant in microseconds.
    beta: neighborhood half-width; pixels j with |xj-x| < beta and
        |yj-y| < beta (j != event pixel) receive the neighbor weight.
    theta: firing threshold in membrane units.
    w_neigh / w_self: weights applied per neighbor / same-pixel event.
    max_spikes_per_pixel: emission cap per pixel per stream (1 by
        default; 2 gives the two-spike encoding variant).
    """

    tau_c_us: float = 10_000.0
    beta: int = 2
    theta: float = 2.0
    w_neigh: float = 1.0
    w_self: float = -1.0
    max_spikes_per_pixel: int = 1

    def __post_init__(self):
        if self.tau_c_us <= 0:
            raise ConfigError(f"tau_c_us must be positive, got {self.tau_c_us}")
        if self.beta < 1:
            raise ConfigError(f"beta must be at least 1, got {self.beta}")
        if self.theta <= 0:
            raise ConfigError(f"theta must be positive, got {self.theta}")
        if self.w_neigh <= 0:
            raise ConfigError(f"w_neigh must be positive, got {self.w_neigh}")
        if self.w_self > 0:
            raise ConfigError(f"w_self must be <= 0, got {self.w_self}")
        if self.max_spikes_per_pixel < 1:
            raise ConfigError("max_spikes_per_pixel must be at least 1")


class EncoderState:
    """Mutable per-pixel membrane grid; single-writer, events in time order."""

    __slots__ = ("membrane", "last_update", "fired_count", "width", "height",
                 "last_t")

    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.membrane = np.zeros((height, width))
        self.last_update = np.zeros((height, width))
        self.fired_count = np.zeros((height, width), dtype=np.int32)
        self.last_t = -np.inf


def new_state(config: EncoderConfig, width: int, height: int) -> EncoderState:
    """Fresh all-zero state for the given sensor geometry."""
    if width <= 0 or height <= 0:
        raise ConfigError(f"invalid geometry {width}x{height}")
    _ = config  # validated at construction
    return EncoderState(width, height)


def reset(state: EncoderState) -> None:
    """Re-arm the filter bank between samples (equivalent to a new state)."""
    state.membrane[:] = 0.0
    state.last_update[:] = 0.0
    state.fired_count[:] = 0
    state.last_t = -np.inf


def _apply_event(state: EncoderState, config: EncoderConfig,
                 x: int, y: int, t: float) -> bool:
    """Core update for one event; returns True when the pixel emits.

    Order matters: decay to t, test the threshold (before the self
    penalty, so an event never taxes itself), then deposit weights.
    """
    b = config.beta
    y0, y1 = max(0, y - b + 1), min(state.height, y + b)
    x0, x1 = max(0, x - b + 1), min(state.width, x + b)
    win_v = state.membrane[y0:y1, x0:x1]
    win_t = state.last_update[y0:y1, x0:x1]
    win_v *= np.exp((win_t - t) / config.tau_c_us)
    win_t[:] = t

    emitted = False
    if (state.fired_count[y, x] < config.max_spikes_per_pixel
            and state.membrane[y, x] >= config.theta):
        state.fired_count[y, x] += 1
        emitted = True

    win_v += config.w_neigh
    state.membrane[y, x] += config.w_self - config.w_neigh
    return emitted


def process_event(state: EncoderState, config: EncoderConfig,
                  event: Event) -> Optional[Event]:
    """Feed one event through the filter bank.

    Returns a copy of the event when its pixel fires, else None. Events
    must arrive in non-decreasing time order.
    """
    if event.t < state.last_t:
        raise OutOfOrderEventError(
            f"event at t={event.t} after t={state.last_t}"
        )
    if not (0 <= event.x < state.width and 0 <= event.y < state.height):
        raise OutOfBoundsError(
            f"({event.x},{event.y}) outside {state.width}x{state.height}"
        )
    state.last_t = event.t
    if _apply_event(state, config, event.x, event.y, event.t):
        return Event(event.t, event.x, event.y, event.p, event.label)
    return None


def encode_stream(config: EncoderConfig, stream: EventStream) -> EventStream:
    """Run the filter bank over a whole stream on a fresh state.

    The output is the emitted subset of the input: same timestamps,
    addresses, polarities and labels, at most `max_spikes_per_pixel`
    events per pixel.
    """
    state = new_state(config, stream.width, stream.height)
    keep = np.zeros(len(stream), dtype=bool)
    xs, ys, ts = stream.x, stream.y, stream.t
    for i in range(len(stream)):
        keep[i] = _apply_event(state, config, int(xs[i]), int(ys[i]),
                               float(ts[i]))
    return EventStream(
        stream.t[keep], stream.x[keep], stream.y[keep], stream.p[keep],
        stream.label[keep], width=stream.width, height=stream.height,
    )
