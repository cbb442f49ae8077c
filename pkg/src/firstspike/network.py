"""First-to-spike layers with closed-form spike times and exact gradients.

Neurons are non-leaky integrators driven by exponentially decaying
synaptic kernels (unit time constant in normalized units, threshold 1).
Working in the transformed domain z = exp(t), the first output spike
time of a neuron solves

    z_out = sum_{i in C} w_i * z_i / (sum_{i in C} w_i - 1)

where C is the causal set: the shortest prefix of inputs, in firing
order, whose weighted sum crosses 1 and whose predicted crossing lands
before the next input arrives. The relation is algebraic in z, so the
backward pass is exact:

    dz_out/dw_i = (z_i - z_out) / (S - 1),   dz_out/dz_i = w_i / (S - 1)

for i in C (zero otherwise), with S the causal weight sum. Neurons
whose inputs never drive them across threshold return NO_SPIKE and
contribute zero gradient. Each neuron spikes at most once per forward
pass by construction.

Spike maps between layers ("z-maps") are float arrays of shape
(channels, height, width) holding z values, NO_SPIKE where a neuron
stayed silent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    GeometryMismatchError,
    LengthMismatchError,
    NegativeTimeError,
    NonFiniteWeightError,
    ShapeMismatchError,
    StaleCacheError,
)
from .events import EventStream, normalize_timestamps

NO_SPIKE = np.inf


# ---------------------------------------------------------------------------
# Time transform
# ---------------------------------------------------------------------------

def to_z(t_norm):
    """Map normalized spike times to the z = exp(t) domain."""
    t = np.asarray(t_norm, dtype=np.float64)
    if np.any(t < 0):
        raise NegativeTimeError("normalized spike times must be >= 0")
    return np.exp(t) if t.ndim else float(np.exp(t))


def from_z(z):
    """Inverse transform: t = ln(z); NO_SPIKE maps to infinity."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(z < 1):
        raise NegativeTimeError("z values below 1 correspond to negative times")
    return np.log(z) if z.ndim else float(np.log(z))


def zmap_from_stream(stream: EventStream, t_max_norm: float = 1.0) -> np.ndarray:
    """Build a one-channel z-map from a stream's earliest spike per pixel.

    Timestamps are normalized to [0, t_max_norm] first; pixels without
    events hold NO_SPIKE.
    """
    zmap = np.full((1, stream.height, stream.width), NO_SPIKE)
    if len(stream) == 0:
        return zmap
    norm = normalize_timestamps(stream, t_max_norm)
    z = np.exp(norm.t)
    np.minimum.at(zmap, (0, norm.y, norm.x), z)
    return zmap


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    """Geometry of one layer: convolutional (shared weights over a
    kernel sliding with a stride) or dense (all-to-all)."""

    kind: str  # "conv" or "dense"
    in_channels: int
    out_channels: int
    in_height: int = 1
    in_width: int = 1
    kernel: int = 0
    stride: int = 1

    def __post_init__(self):
        if self.kind not in ("conv", "dense"):
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if min(self.in_channels, self.out_channels) < 1:
            raise ConfigError("channel counts must be positive")
        if self.kind == "conv":
            if self.kernel < 1 or self.stride < 1:
                raise ConfigError("conv needs kernel >= 1 and stride >= 1")
            if self.out_height < 1 or self.out_width < 1:
                raise ConfigError(
                    f"conv output geometry is empty for input "
                    f"{self.in_height}x{self.in_width}, kernel {self.kernel}, "
                    f"stride {self.stride}"
                )

    @property
    def out_height(self) -> int:
        if self.kind == "dense":
            return 1
        return (self.in_height - self.kernel) // self.stride + 1

    @property
    def out_width(self) -> int:
        if self.kind == "dense":
            return 1
        return (self.in_width - self.kernel) // self.stride + 1

    @property
    def fan_in(self) -> int:
        if self.kind == "dense":
            return self.in_channels
        return self.in_channels * self.kernel * self.kernel

    @property
    def n_positions(self) -> int:
        return self.out_height * self.out_width

    @property
    def weight_shape(self) -> tuple:
        if self.kind == "dense":
            return (self.out_channels, self.in_channels)
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    @property
    def in_size(self) -> int:
        return self.in_channels * self.in_height * self.in_width

    @property
    def out_shape(self) -> tuple:
        return (self.out_channels, self.out_height, self.out_width)


def _patch_indices(spec: LayerSpec) -> np.ndarray:
    """Flat input indices of each output position's receptive field.

    Shape (positions, fan_in); row ordering matches the flattened
    weight layout (channel-major, then kernel row, then column).
    """
    h, w, k, s = spec.in_height, spec.in_width, spec.kernel, spec.stride
    cell = (
        np.arange(spec.in_channels)[:, None, None] * (h * w)
        + np.arange(k)[None, :, None] * w
        + np.arange(k)[None, None, :]
    ).ravel()
    oy, ox = np.meshgrid(np.arange(spec.out_height),
                         np.arange(spec.out_width), indexing="ij")
    start = (oy * s * w + ox * s).ravel()
    return start[:, None] + cell[None, :]


@dataclass
class ForwardCache:
    """Everything the backward pass needs from one layer's forward."""

    spec: LayerSpec
    order: np.ndarray        # (P, M) argsort of each receptive field
    z_sorted: np.ndarray     # (P, M) inputs in firing order
    w_sorted: np.ndarray     # (C_out, P, M) weights in that order
    prefix_end: np.ndarray   # (C_out, P) index of the last causal input
    spiked: np.ndarray       # (C_out, P)
    causal_sum: np.ndarray   # (C_out, P) S = sum of causal weights
    z_out: np.ndarray        # (C_out, P)
    patch_idx: Optional[np.ndarray] = None  # (P, M), conv only
    causal_mask: np.ndarray = field(init=False)

    def __post_init__(self):
        m = self.z_sorted.shape[1]
        mask = np.arange(m)[None, None, :] <= self.prefix_end[..., None]
        self.causal_mask = mask & self.spiked[..., None]


def layer_forward(spec: LayerSpec, weights: np.ndarray,
                  zmap: np.ndarray) -> tuple:
    """Closed-form first-spike forward pass for one layer.

    Returns (output z-map of shape spec.out_shape, ForwardCache). Every
    output neuron is evaluated once: the earliest threshold crossing of
    its receptive field, or NO_SPIKE.
    """
    zmap = np.asarray(zmap, dtype=np.float64)
    if zmap.shape != (spec.in_channels, spec.in_height, spec.in_width):
        raise GeometryMismatchError(
            f"input {zmap.shape} does not match layer expecting "
            f"{(spec.in_channels, spec.in_height, spec.in_width)}"
        )
    if weights.shape != spec.weight_shape:
        raise ShapeMismatchError(
            f"weights {weights.shape} != {spec.weight_shape}"
        )
    flat = zmap.ravel()
    if spec.kind == "conv":
        patch_idx = _patch_indices(spec)
        z_patch = flat[patch_idx]                      # (P, M)
    else:
        patch_idx = None
        z_patch = flat[None, :]                        # (1, M)
    w_flat = weights.reshape(spec.out_channels, -1)    # (C_out, M)

    order = np.argsort(z_patch, axis=1, kind="stable")
    z_sorted = np.take_along_axis(z_patch, order, axis=1)
    w_sorted = w_flat[:, order]                        # (C_out, P, M)
    finite = np.isfinite(z_sorted)                     # (P, M)

    w_eff = np.where(finite[None], w_sorted, 0.0)
    z_safe = np.where(finite, z_sorted, 0.0)
    s_cum = np.cumsum(w_eff, axis=2)
    a_cum = np.cumsum(w_eff * z_safe[None], axis=2)
    denom = s_cum - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        cand = a_cum / denom
    z_next = np.concatenate(
        [z_sorted[:, 1:], np.full((z_sorted.shape[0], 1), np.inf)], axis=1
    )
    valid = (
        (denom > 0.0)
        & np.isfinite(cand)
        & (cand >= z_sorted[None])
        & (cand <= z_next[None])
    )
    prefix_end = valid.argmax(axis=2)                  # (C_out, P)
    spiked = valid.any(axis=2)
    z_out = np.where(
        spiked,
        np.take_along_axis(cand, prefix_end[..., None], 2)[..., 0],
        NO_SPIKE,
    )
    causal_sum = np.take_along_axis(s_cum, prefix_end[..., None], 2)[..., 0]
    cache = ForwardCache(spec, order, z_sorted, w_sorted, prefix_end, spiked,
                         causal_sum, z_out, patch_idx)
    return z_out.reshape(spec.out_shape), cache


def layer_backward(cache: ForwardCache, upstream: np.ndarray) -> tuple:
    """Exact gradients of one layer given dL/dz_out.

    Returns (dL/dweights in the layer's weight shape, dL/dz_in as a flat
    array over the layer input). Convolutional weight gradients
    accumulate over all spatial positions sharing the kernel.
    """
    spec = cache.spec
    upstream = np.asarray(upstream, dtype=np.float64)
    expected = (spec.out_channels, spec.n_positions)
    if upstream.shape == spec.out_shape:
        upstream = upstream.reshape(expected)
    if upstream.shape != expected:
        raise StaleCacheError(
            f"upstream {upstream.shape} does not match cache {expected}"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(cache.spiked, upstream / (cache.causal_sum - 1.0), 0.0)
    mask = cache.causal_mask
    gap = np.where(mask, cache.z_sorted[None] - cache.z_out[..., None], 0.0)
    dw_sorted = g[..., None] * gap
    dz_sorted = np.where(mask, g[..., None] * cache.w_sorted, 0.0)

    inv_order = np.argsort(cache.order, axis=1)
    dw = np.take_along_axis(dw_sorted, inv_order[None], axis=2).sum(axis=1)
    dz_patch = np.take_along_axis(dz_sorted, inv_order[None], axis=2).sum(axis=0)

    dz_in = np.zeros(spec.in_size)
    if spec.kind == "conv":
        np.add.at(dz_in, cache.patch_idx, dz_patch)
    else:
        dz_in += dz_patch[0]
    return dw.reshape(spec.weight_shape), dz_in


def neuron_first_spike(weights: Sequence[float],
                       inputs: Sequence[float]) -> tuple:
    """Reference single-neuron scan (readable counterpart of layer_forward).

    Walks the inputs in firing order, growing the causal prefix until a
    crossing is admissible: weighted sum above 1, predicted output not
    earlier than the last input consumed and not later than the next
    one. Returns (z_out, causal indices in firing order); a neuron whose
    prefix never crosses returns (NO_SPIKE, ()).
    """
    w = np.asarray(weights, dtype=np.float64)
    z = np.asarray(inputs, dtype=np.float64)
    if w.shape != z.shape or w.ndim != 1:
        raise LengthMismatchError(f"weights {w.shape} vs inputs {z.shape}")
    if not np.all(np.isfinite(w)):
        raise NonFiniteWeightError("weights must be finite")
    order = np.argsort(z, kind="stable")
    causal: list[int] = []
    s = 0.0
    a = 0.0
    for pos, idx in enumerate(order):
        if not np.isfinite(z[idx]):
            break
        causal.append(int(idx))
        s += w[idx]
        a += w[idx] * z[idx]
        if s > 1.0:
            cand = a / (s - 1.0)
            z_next = z[order[pos + 1]] if pos + 1 < len(order) else np.inf
            if np.isfinite(cand) and z[idx] <= cand <= z_next:
                return float(cand), tuple(causal)
    return NO_SPIKE, ()


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------

class Network:
    """A feed-forward stack of first-to-spike layers.

    `weights[i]` has shape `specs[i].weight_shape`; consecutive specs
    must chain geometrically (a dense layer consumes the flattened
    output of its predecessor).
    """

    def __init__(self, specs: Sequence[LayerSpec],
                 weights: Optional[Sequence[np.ndarray]] = None):
        specs = list(specs)
        if not specs:
            raise ConfigError("network needs at least one layer")
        for prev, cur in zip(specs, specs[1:]):
            out_c, out_h, out_w = prev.out_shape
            if cur.kind == "dense":
                if cur.in_channels != out_c * out_h * out_w:
                    raise ConfigError(
                        f"dense layer expects {cur.in_channels} inputs but "
                        f"predecessor emits {out_c * out_h * out_w}"
                    )
            else:
                if (cur.in_channels, cur.in_height, cur.in_width) != prev.out_shape:
                    raise ConfigError(
                        f"conv layer input {cur.in_channels}x{cur.in_height}"
                        f"x{cur.in_width} != predecessor output {prev.out_shape}"
                    )
        self.specs = specs
        if weights is None:
            weights = [np.zeros(s.weight_shape) for s in specs]
        weights = [np.asarray(w, dtype=np.float64) for w in weights]
        for spec, w in zip(specs, weights):
            if w.shape != spec.weight_shape:
                raise ShapeMismatchError(
                    f"layer weights {w.shape} != {spec.weight_shape}"
                )
            if not np.all(np.isfinite(w)):
                raise NonFiniteWeightError("layer weights must be finite")
        self.weights = weights

    @property
    def n_classes(self) -> int:
        c, h, w = self.specs[-1].out_shape
        return c * h * w

    def copy(self) -> "Network":
        return Network(self.specs, [w.copy() for w in self.weights])


def network_forward(net: Network, zmap: np.ndarray) -> tuple:
    """Forward through all layers; returns (class z-vector, caches)."""
    spec0 = net.specs[0]
    zmap = np.asarray(zmap, dtype=np.float64)
    if zmap.size == spec0.in_size and zmap.shape != (
            spec0.in_channels, spec0.in_height, spec0.in_width):
        zmap = zmap.reshape(spec0.in_channels, spec0.in_height, spec0.in_width)
    caches = []
    current = zmap
    for spec, w in zip(net.specs, net.weights):
        if spec.kind == "dense":
            if current.size != spec.in_channels:
                raise GeometryMismatchError(
                    f"dense layer expects {spec.in_channels} inputs, "
                    f"got {current.size}"
                )
            current = current.reshape(spec.in_channels, 1, 1)
        current, cache = layer_forward(spec, w, current)
        caches.append(cache)
    return current.ravel(), caches


def network_backward(net: Network, caches: Sequence[ForwardCache],
                     dloss_dz: np.ndarray) -> list:
    """Backpropagate dL/dz over the class vector; returns per-layer dW."""
    if len(caches) != len(net.specs):
        raise StaleCacheError("cache count does not match network depth")
    grads = [None] * len(net.specs)
    upstream = np.asarray(dloss_dz, dtype=np.float64).ravel()
    for i in range(len(net.specs) - 1, -1, -1):
        spec = net.specs[i]
        upstream = upstream.reshape(spec.out_channels, spec.n_positions)
        grads[i], dz_in = layer_backward(caches[i], upstream)
        upstream = dz_in
    return grads


def weight_sum_penalty(net: Network, coeff: float) -> tuple:
    """Hinge penalty keeping each neuron's incoming weight sum above 1.

    Each distinct weight vector (dense unit or conv filter) contributes
    coeff * max(0, 1 - sum(w)); the subgradient is -coeff on every
    weight of a vector whose hinge is active (0 at the kink). Returns
    (scalar penalty, per-layer gradient arrays).
    """
    if coeff < 0:
        raise ConfigError("penalty coefficient must be >= 0")
    total = 0.0
    grads = []
    for spec, w in zip(net.specs, net.weights):
        flat = w.reshape(spec.out_channels, -1)
        sums = flat.sum(axis=1)
        active = sums < 1.0
        total += coeff * np.maximum(0.0, 1.0 - sums).sum()
        g = np.zeros_like(flat)
        g[active] = -coeff
        grads.append(g.reshape(spec.weight_shape))
    return float(total), grads
