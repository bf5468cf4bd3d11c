"""Seeded ablation over the two adaptation components."""

from __future__ import annotations

import logging

import numpy as np

from .data import DatasetBundle
from .errors import RankSSDAError
from .metrics import alignment_gap, evaluate, rank_distribution
from .model import predict
from .trainer import TrainConfig, adapt, compute_prototypes, pretrain

log = logging.getLogger(__name__)

# (name, use_cdr, use_cda); the baseline arm also runs with lambda = 0
ARMS = (
    ("S+T", False, False),
    ("CDR", True, False),
    ("CDA", False, True),
    ("CDR+CDA", True, True),
)
METRICS = ("accuracy", "mP", "mR", "mF1")


def arm_config(config: TrainConfig, use_cdr: bool, use_cda: bool) -> TrainConfig:
    return config.replace(use_cdr=use_cdr, use_cda=use_cda, lam=config.lam if use_cda else 0.0)


def split_metrics(params, bundle: DatasetBundle, domain: str = "target") -> dict:
    test = bundle.select(domain, "test", labeled=True)
    report = evaluate(predict(params, test.features), test.labels, bundle.num_classes)
    report["domain"], report["split"] = domain, "test"
    return report


def target_alignment(params, bundle: DatasetBundle) -> float:
    """Mean |target-test class-mean rank score - source prototype| under ``params``."""
    protos = compute_prototypes(params, bundle.select("source", "train", labeled=True))
    dist = rank_distribution(params, bundle.select("target", "test", labeled=True))
    return alignment_gap(dist, protos.mu)


def run_seed(bundle: DatasetBundle, config: TrainConfig, seed: int, arms=ARMS) -> dict:
    """Pretrain once for ``seed`` and adapt every arm from that checkpoint."""
    cfg = config.replace(seed=seed)
    pre = pretrain(bundle, cfg)
    out = {
        "seed": seed,
        "pretrained": {
            "best_val_mf1": pre.report.best_val_mf1,
            "stopping_epoch": pre.report.stopping_epoch,
            "target_test": split_metrics(pre.params, bundle),
            "alignment_gap": target_alignment(pre.params, bundle),
        },
        "arms": {},
    }
    for name, use_cdr, use_cda in arms:
        try:
            res = adapt(pre.params, bundle, arm_config(cfg, use_cdr, use_cda))
        except RankSSDAError as exc:
            log.warning("seed %d arm %s failed: %s", seed, name, exc)
            out["arms"][name] = {"failed": True, "error": str(exc)}
            continue
        out["arms"][name] = {
            "failed": False,
            "use_cdr": use_cdr,
            "use_cda": use_cda,
            "best_val_mf1": res.report.best_val_mf1,
            "best_epoch": res.report.best_epoch,
            "stopping_epoch": res.report.stopping_epoch,
            "target_test": split_metrics(res.params, bundle),
            "alignment_gap": target_alignment(res.params, bundle),
        }
        log.info("seed %d arm %s: mF1 %.4f", seed, name, out["arms"][name]["target_test"]["mF1"])
    return out


def summarize(runs: list[dict], arms=ARMS) -> list[dict]:
    """Rows mirroring an ablation table: CDR, CDA, then mean/sd of each metric."""
    rows = []
    for name, use_cdr, use_cda in arms:
        ok = [r["arms"][name] for r in runs if not r["arms"][name]["failed"]]
        row = {"arm": name, "CDR": use_cdr, "CDA": use_cda, "runs": len(ok),
               "failed": len(runs) - len(ok)}
        for m in METRICS:
            vals = np.array([a["target_test"][m] for a in ok])
            row[m] = {"mean": float(vals.mean()) if len(vals) else None,
                      "sd": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
        gaps = np.array([a["alignment_gap"] for a in ok])
        row["alignment_gap"] = float(gaps.mean()) if len(gaps) else None
        rows.append(row)
    return rows


def run_ablation(bundle: DatasetBundle, config: TrainConfig, seeds, arms=ARMS) -> dict:
    runs = [run_seed(bundle, config, int(s), arms) for s in seeds]
    pre_gaps = [r["pretrained"]["alignment_gap"] for r in runs]
    return {
        "seeds": [int(s) for s in seeds],
        "config": config.to_dict(),
        "runs": runs,
        "table": summarize(runs, arms),
        "pretrained_alignment_gap": float(np.mean(pre_gaps)),
    }
