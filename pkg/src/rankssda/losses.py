"""Pairwise ranking, classification and rank-alignment losses.

Class labels are ordinal integers in 1..C; -1 marks an unlabeled sample.
The scalar functions mirror the per-sample definitions, while
:func:`total_loss` evaluates the whole mini-batch objective and, on
request, its gradient with respect to the classifier logits and the rank
scores (feed those into :func:`rankssda.model.backward`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ProtocolError, ShapeError

LOG_FLOOR = 1e-12
DEFAULT_LAMBDA = 1e-5


def relative_label(y_i: int, y_j: int, num_classes: int | None = None) -> float:
    """Target for the pair (i, j): 1 if i is more severe, 0 if less, 0.5 on ties."""
    for y in (y_i, y_j):
        if int(y) != y or y < 1 or (num_classes is not None and y > num_classes):
            raise InputError(f"class label {y!r} out of range")
    if y_i > y_j:
        return 1.0
    if y_i < y_j:
        return 0.0
    return 0.5


def relative_labels(y_i: np.ndarray, y_j: np.ndarray) -> np.ndarray:
    return 0.5 * (np.sign(np.asarray(y_i) - np.asarray(y_j)) + 1.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _ranking_terms(diff, o):
    # 1 - h(d) is evaluated as h(-d) to avoid cancellation
    h = sigmoid(diff)
    h_neg = sigmoid(-diff)
    loss = -o * np.log(np.maximum(h, LOG_FLOOR)) - (1.0 - o) * np.log(np.maximum(h_neg, LOG_FLOOR))
    dloss = -o * h_neg * (h > LOG_FLOOR) + (1.0 - o) * h * (h_neg > LOG_FLOOR)
    return loss, dloss


def ranking_loss(r_i, r_j, o):
    """Logistic pairwise loss on the score difference ``r_i - r_j``.

    Accepts scalars or arrays; returns a float for scalar input.
    """
    diff = np.asarray(r_i, dtype=np.float64) - np.asarray(r_j, dtype=np.float64)
    if not np.all(np.isfinite(diff)):
        raise InputError("ranking_loss needs finite scores")
    loss, _ = _ranking_terms(np.atleast_1d(diff), np.atleast_1d(np.asarray(o, dtype=np.float64)))
    return float(loss[0]) if np.ndim(diff) == 0 and np.ndim(o) == 0 else loss


def ranking_loss_grad(r_i, r_j, o):
    """Derivative of :func:`ranking_loss` with respect to ``r_i`` (minus that for ``r_j``)."""
    diff = np.atleast_1d(np.asarray(r_i, dtype=np.float64) - np.asarray(r_j, dtype=np.float64))
    _, d = _ranking_terms(diff, np.atleast_1d(np.asarray(o, dtype=np.float64)))
    return float(d[0]) if d.size == 1 and np.ndim(r_i) == 0 else d


def cross_entropy(class_probs, y: int) -> float:
    p = np.asarray(class_probs, dtype=np.float64)
    if int(y) != y or not 1 <= y <= p.shape[-1]:
        raise InputError(f"class {y!r} out of range 1..{p.shape[-1]}")
    return float(-np.log(max(p[int(y) - 1], LOG_FLOOR)))


def cda_loss(r: float, w, mu) -> float:
    """Soft-label weighted squared distance of a rank score to the class prototypes."""
    w = np.asarray(w, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if w.shape != mu.shape:
        raise ShapeError(f"soft label shape {w.shape} != prototype shape {mu.shape}")
    return float(np.sum(w * (r - mu) ** 2))


@dataclass(frozen=True)
class LossTerms:
    classification: float
    ranking: float
    alignment: float
    total: float

    def to_dict(self) -> dict:
        return {
            "classification": self.classification,
            "ranking": self.ranking,
            "alignment": self.alignment,
            "total": self.total,
        }


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels - 1] = 1.0
    return out


def total_loss(probs, scores, labels, pairs, soft_labels, mu, lam, *, return_grads=False):
    """Mini-batch objective: pairwise (CE + CE + ranking) plus lam * alignment.

    probs: (n, C) class probabilities; scores: (n,) rank scores;
    labels: (n,) classes in 1..C or -1; pairs: (m, 2) row indices of labeled
    pairs; soft_labels: (n, C) alignment weights or None to drop the
    alignment term; mu: (C,) prototypes.

    Each sum is replaced by the batch mean of its terms.  With
    ``return_grads`` also returns gradients w.r.t. the logits and the
    scores; soft labels and prototypes are treated as constants.
    """
    probs = np.asarray(probs, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    n, C = probs.shape
    if scores.shape != (n,) or labels.shape != (n,):
        raise ShapeError("probs, scores and labels disagree on batch size")
    if lam < 0:
        raise InputError(f"lambda must be >= 0, got {lam}")

    dlogits = np.zeros((n, C))
    dscores = np.zeros(n)
    cls = rank = align = 0.0

    m = len(pairs)
    if m:
        yi, yj = labels[pairs[:, 0]], labels[pairs[:, 1]]
        if np.any(yi < 1) or np.any(yj < 1):
            raise ProtocolError("ranking pair contains an unlabeled sample")
        # cross-entropy of both members, once per pair membership
        members = pairs.reshape(-1)
        y = labels[members] - 1
        p_true = probs[members, y]
        cls = float(np.sum(-np.log(np.maximum(p_true, LOG_FLOOR)))) / m
        g = probs[members].copy()
        g[np.arange(members.size), y] -= 1.0
        g[p_true < LOG_FLOOR] = 0.0
        np.add.at(dlogits, members, g / m)

        o = relative_labels(yi, yj)
        lr, dlr = _ranking_terms(scores[pairs[:, 0]] - scores[pairs[:, 1]], o)
        rank = float(lr.sum()) / m
        np.add.at(dscores, pairs[:, 0], dlr / m)
        np.add.at(dscores, pairs[:, 1], -dlr / m)

    if soft_labels is not None and n:
        w = np.asarray(soft_labels, dtype=np.float64)
        mu = np.asarray(mu, dtype=np.float64)
        if w.shape != (n, C) or mu.shape != (C,):
            raise ShapeError(f"soft labels {w.shape} / prototypes {mu.shape} do not match ({n}, {C})")
        diff = scores[:, None] - mu[None, :]
        align = float(np.sum(w * diff**2)) / n
        dscores += lam * 2.0 * np.sum(w * diff, axis=1) / n

    terms = LossTerms(cls, rank, align, cls + rank + lam * align)
    if return_grads:
        return terms, dlogits, dscores
    return terms
