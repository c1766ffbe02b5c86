"""Adam training loop with categorical cross-entropy and just-in-time augmentation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .augment import AugmentSpec, augment
from .errors import DivergenceError, DomainError, NumericError, SplitError
from .model import ModelGraph
from .tensor import DTYPE, Tensor

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    rng_seed: int = 0
    augmentation: AugmentSpec = field(default_factory=AugmentSpec)

    def __post_init__(self):
        if not self.learning_rate >= 0:
            # lr == 0 is allowed for frozen-parameter sanity runs
            raise DomainError("learning_rate must be non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise DomainError("Adam betas must lie in [0, 1)")
        if self.adam_epsilon <= 0:
            raise DomainError("adam_epsilon must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise DomainError("batch_size must be >= 1 and epochs >= 0")


# -- loss ------------------------------------------------------------------------


def cross_entropy(probs: Tensor, target) -> tuple[float, Tensor]:
    """Loss ``-log p[target]`` and its gradient w.r.t. the pre-softmax logits.

    For a batch (``N x K`` probabilities, ``N`` targets) the loss is the
    batch mean and the returned gradient is scaled by ``1/N`` accordingly.
    """
    probs = np.asarray(probs, dtype=DTYPE)
    single = probs.ndim == 1
    p = probs[None] if single else probs
    t = np.atleast_1d(np.asarray(target))
    n, k = p.shape
    if t.shape != (n,) or not np.issubdtype(t.dtype, np.integer) or t.min() < 0 or t.max() >= k:
        raise DomainError(f"invalid target {target!r} for {k} classes")
    picked = p[np.arange(n), t]
    losses = -np.log(np.maximum(picked, PROB_FLOOR))
    grad = p.copy()
    grad[np.arange(n), t] -= 1.0
    if single:
        return float(losses[0]), grad[0]
    return float(losses.mean()), grad / n


# -- Adam --------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, Tensor] = field(default_factory=dict)
    v: dict[str, Tensor] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, Tensor], grads: dict[str, Tensor], state: AdamState,
              config: TrainConfig) -> AdamState:
    """Update ``params`` in place with one bias-corrected Adam step."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name}")
        if g.shape != params[name].shape:
            raise DomainError(f"gradient shape {g.shape} differs from parameter {name} {params[name].shape}")
    b1, b2 = config.adam_beta1, config.adam_beta2
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_epsilon)
    return state


def flat_grads(grads: dict[str, tuple[Tensor, Tensor]]) -> dict[str, Tensor]:
    out = {}
    for layer, (gw, gb) in grads.items():
        out[f"{layer}.weight"] = gw
        out[f"{layer}.bias"] = gb
    return out


# -- data split --------------------------------------------------------------------


def split_counts(n: int, ratios: Sequence[float]) -> tuple[int, ...]:
    """Floor allocation for all but the last part, which takes the remainder."""
    head = [int(math.floor(n * r + 1e-9)) for r in ratios[:-1]]
    return (*head, n - sum(head))


def split_dataset(labels: Sequence[int], ratios: Sequence[float] = (0.8, 0.1, 0.1), rng_seed: int = 0,
                  num_classes: Optional[int] = None) -> tuple[list[int], ...]:
    """Stratified split of sample indices into ``len(ratios)`` disjoint parts.

    Within each class the samples are shuffled with ``rng_seed`` and
    allocated by :func:`split_counts`. Each part lists indices in ascending
    order.
    """
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise SplitError(f"ratios must be non-negative and sum to 1, got {ratios}")
    labels = np.asarray(labels, dtype=np.int64)
    k = num_classes if num_classes is not None else (int(labels.max()) + 1 if labels.size else 0)
    if k == 0:
        raise SplitError("nothing to split")
    rng = np.random.default_rng(rng_seed)
    parts: list[list[int]] = [[] for _ in ratios]
    for c in range(k):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            raise SplitError(f"class {c} has no samples")
        members = rng.permutation(members)
        start = 0
        for part, count in zip(parts, split_counts(members.size, ratios)):
            part.extend(members[start : start + count].tolist())
            start += count
    return tuple(sorted(p) for p in parts)


# -- training loop -------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float = float("nan")
    val_acc: float = float("nan")


@dataclass
class TrainingReport:
    epochs: list[EpochStats] = field(default_factory=list)

    FIELDS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.FIELDS)
            for e in self.epochs:
                writer.writerow([e.epoch] + [repr(float(getattr(e, f))) for f in self.FIELDS[1:]])


def evaluate_loss_acc(model: ModelGraph, images: Tensor, labels: Tensor, batch_size: int = 32):
    probs = model.predict_proba(images, batch_size)
    loss, _ = cross_entropy(probs, labels)
    return loss, float(np.mean(probs.argmax(axis=1) == labels))


def train(model: ModelGraph, train_data: tuple[Tensor, Tensor], config: TrainConfig,
          val_data: Optional[tuple[Tensor, Tensor]] = None,
          callbacks: Iterable[Callable[[int, ModelGraph, EpochStats], None]] = ()) -> TrainingReport:
    """Mini-batch Adam over ``train_data = (images N x C x H x W, labels N)``.

    Training accuracy and loss are accumulated over the epoch's augmented,
    dropout-active batches. Validation runs in infer mode on untouched
    images after each epoch.
    """
    images, labels = train_data
    images = np.asarray(images, dtype=DTYPE)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise DomainError("training split is empty")
    callbacks = list(callbacks)
    shuffle_ss, aug_ss, drop_ss = np.random.SeedSequence(config.rng_seed).spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    aug_rng = np.random.default_rng(aug_ss)
    drop_rng = np.random.default_rng(drop_ss)

    params = model.named_arrays()
    state = AdamState()
    report = TrainingReport()
    n = len(images)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size), start=1):
            idx = order[start : start + config.batch_size]
            x = np.stack([augment(img, config.augmentation, aug_rng) for img in images[idx]])
            y = labels[idx]
            probs, tape = model.forward(x, mode="train", rng=drop_rng)
            loss, grad_logits = cross_entropy(probs, y)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, b, loss)
            grads = model.backward(tape, grad_logits)
            adam_step(params, flat_grads(grads), state, config)
            loss_sum += loss * len(idx)
            correct += int(np.sum(probs.argmax(axis=1) == y))
        stats = EpochStats(epoch, loss_sum / n, correct / n)
        if val_data is not None and len(val_data[0]):
            stats.val_loss, stats.val_acc = evaluate_loss_acc(model, val_data[0], np.asarray(val_data[1]),
                                                              config.batch_size)
        report.epochs.append(stats)
        log.info("epoch %d: loss %.4f acc %.4f val_loss %.4f val_acc %.4f", epoch, stats.train_loss,
                 stats.train_acc, stats.val_loss, stats.val_acc)
        for cb in callbacks:
            cb(epoch, model, stats)
    return report
