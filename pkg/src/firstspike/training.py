"""Temporal cross-entropy loss and the gradient-descent training loop.

The network is trained so the correct class neuron fires earliest:
the loss is cross-entropy over softmax(-z), which rewards driving the
true class's z (and hence its spike time) below the others. Inference
is argmin over the class z-vector; a sample on which no output neuron
spikes is a "no decision" and is skipped during training (counted) and
scored as incorrect during evaluation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    EmptyDatasetError,
    NonFiniteInputError,
    ShapeMismatchError,
)
from .network import Network, network_backward, network_forward, \
    weight_sum_penalty


@dataclass(frozen=True)
class TrainConfig:
    """Two-phase plain-SGD schedule; defaults follow the evaluation
    protocol (1e-2 for the first 50 of 100 epochs, then 1e-3)."""

    epochs_total: int = 100
    lr_phase1: float = 1e-2
    lr_phase2: float = 1e-3
    phase1_epochs: int = 50
    batch_size: int = 32
    penalty_coeff: float = 100.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.epochs_total < 1:
            raise ConfigError("epochs_total must be at least 1")
        if self.lr_phase1 < 0 or self.lr_phase2 < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.phase1_epochs < 0:
            raise ConfigError("phase1_epochs must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.penalty_coeff < 0:
            raise ConfigError("penalty_coeff must be >= 0")

    def lr_at(self, epoch: int) -> float:
        return self.lr_phase1 if epoch < self.phase1_epochs else self.lr_phase2


@dataclass
class TrainReport:
    """Per-epoch trajectory of one training run."""

    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    test_accuracy: list = field(default_factory=list)
    no_decision: list = field(default_factory=list)
    wall_time_s: list = field(default_factory=list)
    epoch_offset: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)


def loss(z, label: int) -> float:
    """Cross-entropy of softmax(-z) against the true class.

    Computed with max-shift stabilization; always >= 0.
    """
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteInputError("loss requires finite spike outputs")
    if not 0 <= label < z.size:
        raise ConfigError(f"label {label} out of range for {z.size} classes")
    neg = -z
    m = neg.max()
    lse = m + np.log(np.exp(neg - m).sum())
    return float(lse - neg[label])


def loss_grad(z, label: int) -> np.ndarray:
    """dL/dz: softmax(-z) with 1 subtracted at the true class, negated.

    Components always sum to zero.
    """
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteInputError("loss requires finite spike outputs")
    if not 0 <= label < z.size:
        raise ConfigError(f"label {label} out of range for {z.size} classes")
    neg = -z
    e = np.exp(neg - neg.max())
    p = e / e.sum()
    g = -p
    g[label] += 1.0
    return g


def sgd_step(weights, grads, lr: float) -> None:
    """In-place w <- w - lr * g over an array or a sequence of arrays."""
    if isinstance(weights, np.ndarray):
        weights, grads = [weights], [grads]
    if len(weights) != len(grads):
        raise ShapeMismatchError("weights and grads differ in length")
    for w, g in zip(weights, grads):
        g = np.asarray(g)
        if w.shape != g.shape:
            raise ShapeMismatchError(f"weight {w.shape} vs grad {g.shape}")
        w -= lr * g


def init_weights(net: Network, seed: int, target_sum: float = 1.5,
                 spread: float = 1.0) -> Network:
    """Seeded normal init with per-neuron expected weight sum `target_sum`.

    Keeping the expected sum above the unit threshold makes most neurons
    spike on typical inputs from the start, so gradients flow. The
    spread scales the standard deviation of each neuron's weight sum.
    """
    rng = np.random.default_rng(seed)
    for spec, w in zip(net.specs, net.weights):
        fan_in = spec.fan_in
        w[...] = rng.normal(target_sum / fan_in, spread / np.sqrt(fan_in),
                            size=spec.weight_shape)
    return net


def predict(net: Network, zmap: np.ndarray) -> Optional[int]:
    """Earliest-firing class, or None when no output neuron spikes."""
    z, _ = network_forward(net, zmap)
    if not np.isfinite(z).any():
        return None
    return int(np.argmin(z))


def evaluate_accuracy(net: Network, dataset: Sequence[tuple]) -> float:
    """Fraction of (zmap, label) pairs predicted correctly; abstentions
    count as incorrect."""
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot evaluate on an empty dataset")
    hits = sum(1 for zmap, label in dataset if predict(net, zmap) == label)
    return hits / len(dataset)


def train(net: Network, dataset: Sequence[tuple], config: TrainConfig,
          test_dataset: Optional[Sequence[tuple]] = None,
          epoch_offset: int = 0) -> tuple:
    """Train in place over (zmap, label) pairs; returns (net, TrainReport).

    Each step: forward, cross-entropy + weight-sum penalty, analytic
    backward, plain SGD with the two-phase learning rate. Samples on
    which no output neuron spikes are counted and skipped. Shuffling is
    seeded, so a fixed config yields an identical run.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.rng_seed + epoch_offset)
    report = TrainReport(epoch_offset=epoch_offset)
    n = len(dataset)
    for epoch in range(epoch_offset, config.epochs_total):
        t0 = time.perf_counter()
        lr = config.lr_at(epoch)
        order = rng.permutation(n)
        epoch_loss = 0.0
        epoch_hits = 0
        epoch_skips = 0
        decided = 0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            accum = [np.zeros_like(w) for w in net.weights]
            batch_decided = 0
            for idx in batch:
                zmap, label = dataset[idx]
                z, caches = network_forward(net, zmap)
                finite = np.isfinite(z)
                if not finite.any():
                    epoch_skips += 1
                    continue
                if finite.all():
                    sample_loss = loss(z, label)
                    dz = loss_grad(z, label)
                else:
                    # silent output neurons are maximally late: they get
                    # softmax weight 0 and zero gradient
                    z_f = z[finite]
                    labels_f = np.flatnonzero(finite)
                    if not finite[label]:
                        epoch_skips += 1
                        continue
                    sub_label = int(np.searchsorted(labels_f, label))
                    sample_loss = loss(z_f, sub_label)
                    dz = np.zeros_like(z)
                    dz[finite] = loss_grad(z_f, sub_label)
                epoch_loss += sample_loss
                if np.argmin(z) == label:
                    epoch_hits += 1
                batch_decided += 1
                for acc, g in zip(accum, network_backward(net, caches, dz)):
                    acc += g
            decided += batch_decided
            if batch_decided:
                for acc in accum:
                    acc /= batch_decided
            if config.penalty_coeff > 0:
                _, pen_grads = weight_sum_penalty(net, config.penalty_coeff)
                for acc, pg in zip(accum, pen_grads):
                    acc += pg
            sgd_step(net.weights, accum, lr)
        report.train_loss.append(epoch_loss / decided if decided else np.nan)
        report.train_accuracy.append(epoch_hits / n)
        report.no_decision.append(epoch_skips)
        if test_dataset:
            report.test_accuracy.append(evaluate_accuracy(net, test_dataset))
        else:
            report.test_accuracy.append(np.nan)
        report.wall_time_s.append(time.perf_counter() - t0)
    return net, report
