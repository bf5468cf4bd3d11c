"""Classification metrics and rank-score distribution statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError


def confusion(preds, labels, num_classes: int) -> np.ndarray:
    """C x C counts; rows are true classes, columns predicted classes (both 1..C)."""
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.shape != labels.shape:
        raise InputError(f"{preds.size} predictions for {labels.size} labels")
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < 1 or arr.max() > num_classes):
            raise InputError(f"{name} outside 1..{num_classes}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels - 1, preds - 1), 1)
    return cm


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def per_class_metrics(cm) -> dict[str, np.ndarray]:
    cm = np.asarray(cm)
    tp = np.diag(cm).astype(np.float64)
    precision = _safe_div(tp, cm.sum(axis=0))
    recall = _safe_div(tp, cm.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return {"precision": precision, "recall": recall, "f1": f1, "support": cm.sum(axis=1)}


def macro_metrics(cm) -> dict[str, float]:
    """Accuracy plus unweighted class means of precision, recall and F1.

    Undefined ratios (0/0) count as 0.
    """
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise InputError("confusion matrix is empty")
    pc = per_class_metrics(cm)
    return {
        "accuracy": float(np.trace(cm) / total),
        "mP": float(pc["precision"].mean()),
        "mR": float(pc["recall"].mean()),
        "mF1": float(pc["f1"].mean()),
    }


def evaluate(preds, labels, num_classes: int) -> dict:
    cm = confusion(preds, labels, num_classes)
    report = macro_metrics(cm)
    report["confusion"] = cm.tolist()
    return report


@dataclass(frozen=True)
class RankStats:
    count: int
    mean: float
    std: float
    bin_edges: np.ndarray
    counts: np.ndarray

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "std": self.std,
                "bin_edges": self.bin_edges.tolist(), "counts": self.counts.tolist()}


def shared_bin_edges(scores, bins: int = 40, pad: float = 0.01) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return np.linspace(0.0, 1.0, bins + 1)
    lo, hi = float(scores.min()), float(scores.max())
    width = hi - lo if hi > lo else 1.0
    return np.linspace(lo - pad * width, hi + pad * width, bins + 1)


def rank_distribution_from_scores(scores, domains, labels, bins: int = 40
                                  ) -> dict[tuple[str, int], RankStats]:
    """Per (domain, class) statistics with histograms on shared bin edges.

    Groups without samples are simply absent.
    """
    if bins < 1:
        raise InputError(f"bins must be >= 1, got {bins}")
    scores = np.asarray(scores, dtype=np.float64)
    domains = np.asarray(domains, dtype=object)
    labels = np.asarray(labels, dtype=np.int64)
    edges = shared_bin_edges(scores, bins)
    out = {}
    for domain in sorted(set(domains.tolist())):
        for label in sorted(set(labels[domains == domain].tolist())):
            s = scores[(domains == domain) & (labels == label)]
            counts, _ = np.histogram(s, bins=edges)
            out[domain, int(label)] = RankStats(int(s.size), float(s.mean()), float(s.std()),
                                                edges, counts)
    return out


def rank_distribution(params, samples, bins: int = 40) -> dict[tuple[str, int], RankStats]:
    """Rank-score distribution of ``samples`` (a DatasetBundle) under ``params``."""
    from .model import rank_scores

    if len(samples) == 0:
        return {}
    scores = rank_scores(params, samples.features)
    return rank_distribution_from_scores(scores, samples.domains, samples.labels, bins)


def alignment_gap(dist: dict[tuple[str, int], RankStats], mu, domain: str = "target") -> float:
    """Mean over classes of |class-mean rank score in ``domain`` - prototype|."""
    mu = np.asarray(mu, dtype=np.float64)
    gaps = [abs(dist[domain, k + 1].mean - mu[k]) for k in range(len(mu)) if (domain, k + 1) in dist]
    if not gaps:
        raise InputError(f"no labeled {domain} samples to measure alignment")
    return float(np.mean(gaps))
