"""Class-balanced mini-batch sampling and pair construction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import InputError

WITHIN_SOURCE = "within_source"
WITHIN_TARGET = "within_target"
CROSS_DOMAIN = "cross_domain"


@dataclass(frozen=True)
class SamplePair:
    first: int
    second: int
    kind: str


def class_weights(labels, num_classes: int | None = None) -> np.ndarray:
    """Per-sample draw probabilities proportional to 1 / class count."""
    labels = np.asarray(labels)
    if labels.size == 0 or np.any(labels < 1):
        raise InputError("class-weighted sampling needs labeled samples")
    if num_classes is None:
        num_classes = int(labels.max())
    if num_classes < 2:
        raise InputError("class-weighted sampling needs at least two classes")
    counts = np.bincount(labels, minlength=num_classes + 1)[1:]
    missing = [k + 1 for k in range(num_classes) if counts[k] == 0]
    if missing:
        raise InputError(f"classes {missing} have no samples")
    if labels.max() > num_classes:
        raise InputError(f"label {labels.max()} exceeds num_classes={num_classes}")
    w = 1.0 / counts[labels - 1]
    return w / w.sum()


def class_weighted_batches(labels, batch_size: int, seed, num_classes: int | None = None
                           ) -> Iterator[np.ndarray]:
    """Endless stream of index batches drawn with replacement, balanced by class."""
    if batch_size < 2:
        raise InputError(f"batch_size must be >= 2, got {batch_size}")
    p = class_weights(labels, num_classes)
    rng = np.random.default_rng(seed)
    n = len(p)
    while True:
        yield rng.choice(n, size=batch_size, replace=True, p=p)


def make_pairs_within(batch, seed, kind: str = WITHIN_SOURCE) -> list[SamplePair]:
    """Shuffle the batch and pair consecutive elements; an odd element is dropped.

    ``batch`` is a sequence of sample references (typically row indices).
    """
    batch = list(batch)
    if len(batch) < 2:
        raise InputError(f"need at least two samples to pair, got {len(batch)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(batch))
    return [SamplePair(batch[order[i]], batch[order[i + 1]], kind)
            for i in range(0, len(order) - 1, 2)]


def make_pairs_cross(source_batch, target_batch, seed, all_pairs: bool = False) -> list[SamplePair]:
    """Pair source with target references one-to-one after shuffling both.

    With ``all_pairs`` every source element is paired with every target
    element instead.
    """
    source_batch, target_batch = list(source_batch), list(target_batch)
    if not source_batch or not target_batch:
        raise InputError("cross-domain pairing needs non-empty source and target batches")
    rng = np.random.default_rng(seed)
    s = [source_batch[i] for i in rng.permutation(len(source_batch))]
    t = [target_batch[i] for i in rng.permutation(len(target_batch))]
    if all_pairs:
        return [SamplePair(a, b, CROSS_DOMAIN) for a in s for b in t]
    return [SamplePair(a, b, CROSS_DOMAIN) for a, b in zip(s, t)]


def pair_array(pairs: list[SamplePair]) -> np.ndarray:
    return np.array([(p.first, p.second) for p in pairs], dtype=np.int64).reshape(-1, 2)
