"""Two-stage training: source pretraining, then ranking-guided adaptation.

Pretraining fits the classifier and ranking head on labeled source pairs.
Adaptation continues from that checkpoint on labeled source + labeled
target pairs (optionally cross-domain ones) and pulls every rank score,
labeled or not, toward the per-class source prototypes.  Unlabeled target
samples are soft-assigned to classes by a mixture fitted to their rank
scores.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gmm as gmm_mod
from .data import DatasetBundle
from .errors import ConfigError, ProtocolError, TrainingError
from .losses import DEFAULT_LAMBDA, LossTerms, one_hot, total_loss
from .metrics import evaluate
from .model import (Adam, ModelConfig, ModelParams, backward, checkpoint_dict, forward_batch,
                    init_model, predict, rank_scores)
from .sampling import (WITHIN_SOURCE, WITHIN_TARGET, class_weighted_batches, make_pairs_cross,
                       make_pairs_within, pair_array)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    hidden_dims: tuple[int, ...] = (32, 16)
    lr: float = 1e-3
    batch_size: int = 32  # labeled batch; split evenly between domains when adapting
    unlabeled_batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    lam: float = DEFAULT_LAMBDA
    gmm_refit_period: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    use_cdr: bool = True
    use_cda: bool = True
    within_source: bool = True
    within_target: bool = True
    cross_all_pairs: bool = False
    steps_per_epoch: int | None = None
    gmm_max_iters: int = 200
    gmm_tol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        problems = []
        if self.patience < 1:
            problems.append("patience must be >= 1")
        if self.lam < 0:
            problems.append("lam must be >= 0")
        if self.gmm_refit_period < 1:
            problems.append("gmm_refit_period must be >= 1")
        if self.max_epochs < 1:
            problems.append("max_epochs must be >= 1")
        if self.batch_size < 4 or self.unlabeled_batch_size < 1:
            problems.append("batch_size must be >= 4 and unlabeled_batch_size >= 1")
        if not self.lr > 0:
            problems.append("lr must be > 0")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            problems.append("steps_per_epoch must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown TrainConfig fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Prototypes:
    mu: np.ndarray
    counts: np.ndarray

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "counts": self.counts.tolist()}


def prototypes_from_scores(scores, labels, num_classes: int) -> Prototypes:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    counts = np.bincount(labels[labels >= 1], minlength=num_classes + 1)[1:num_classes + 1]
    if np.any(counts == 0):
        missing = [k + 1 for k in range(num_classes) if counts[k] == 0]
        raise ProtocolError(f"no source samples for classes {missing}")
    mu = np.array([scores[labels == k].mean() for k in range(1, num_classes + 1)])
    return Prototypes(mu, counts)


def compute_prototypes(params: ModelParams, source: DatasetBundle) -> Prototypes:
    """Mean rank score of the labeled source samples of each class."""
    labeled = source.labels >= 1
    scores = rank_scores(params, source.features[labeled]) if labeled.any() else np.zeros(0)
    return prototypes_from_scores(scores, source.labels[labeled], source.num_classes)


@dataclass
class TrainReport:
    stage: str
    seed: int
    config: dict
    epochs: list[dict] = field(default_factory=list)
    best_val_mf1: float = -1.0
    best_epoch: int = 0
    stopping_epoch: int = 0
    checkpoint: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


@dataclass
class TrainResult:
    params: ModelParams
    report: TrainReport
    prototypes: Prototypes | None = None
    gmm: gmm_mod.Gmm1d | None = None

    def checkpoint(self) -> dict:
        extra = {"val_macro_f1": self.report.best_val_mf1, "best_epoch": self.report.best_epoch}
        if self.prototypes is not None:
            extra["prototypes"] = self.prototypes.to_dict()
        if self.gmm is not None:
            extra["gmm"] = self.gmm.to_dict()
        return checkpoint_dict(self.params, self.report.stage, self.report.seed, extra)

    def save(self, path) -> None:
        path = Path(path)
        self.report.checkpoint = str(path)
        path.write_text(json.dumps(self.checkpoint()) + "\n")


def validation_mf1(params: ModelParams, val: DatasetBundle) -> dict:
    report = evaluate(predict(params, val.features), val.labels, val.num_classes)
    report.pop("confusion")
    return report


def _streams(seed: int, n: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _mean_terms(terms: list[LossTerms]) -> dict:
    if not terms:
        return {"classification": 0.0, "ranking": 0.0, "alignment": 0.0, "total": 0.0}
    return {k: float(np.mean([getattr(t, k) for t in terms])) for k in terms[0].to_dict()}


def _check_finite(terms: LossTerms, epoch: int):
    if not math.isfinite(terms.total):
        raise TrainingError(f"non-finite loss {terms.total}", epoch=epoch)


def objective_step(params, x, labels, pairs, soft_labels, mu, lam):
    """Loss terms and parameter gradients for one assembled batch."""
    probs, scores, cache = forward_batch(params, x)
    terms, dlogits, dscores = total_loss(probs, scores, labels, pairs, soft_labels, mu, lam,
                                         return_grads=True)
    return terms, backward(params, cache, dlogits, dscores)


class _EarlyStopper:
    def __init__(self, patience):
        self.patience = patience
        self.best = -1.0
        self.best_epoch = 0
        self.best_params = None
        self.bad = 0

    def update(self, epoch, score, params) -> bool:
        """Record an epoch; returns True when training should stop."""
        if score > self.best:
            self.best, self.best_epoch, self.best_params = score, epoch, params.copy()
            self.bad = 0
        else:
            self.bad += 1
        return self.bad >= self.patience


def pretrain(bundle: DatasetBundle, config: TrainConfig, params: ModelParams | None = None,
             epoch_log=None) -> TrainResult:
    """Fit on labeled source pairs (cross-entropy + within-domain ranking).

    Early-stops on source validation macro F1.  ``epoch_log`` (optional)
    receives one dict per epoch.
    """
    train = bundle.select("source", "train", labeled=True)
    val = bundle.select("source", "val", labeled=True)
    if len(train) == 0 or len(val) == 0:
        raise ProtocolError("pretraining needs labeled source train and val samples")
    C = bundle.num_classes
    if params is None:
        params = init_model(ModelConfig(bundle.input_dim, config.hidden_dims, C, config.seed))

    batch_rng, pair_rng = _streams(config.seed, 2)
    batches = class_weighted_batches(train.labels, config.batch_size, batch_rng, C)
    steps = config.steps_per_epoch or math.ceil(len(train) / config.batch_size)
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.eps)
    report = TrainReport("pretrained", config.seed, config.to_dict())
    stopper = _EarlyStopper(config.patience)

    for epoch in range(1, config.max_epochs + 1):
        epoch_terms = []
        for _ in range(steps):
            idx = next(batches)
            pairs = pair_array(make_pairs_within(range(len(idx)), pair_rng, WITHIN_SOURCE))
            terms, grads = objective_step(params, train.features[idx], train.labels[idx], pairs,
                                          None, None, 0.0)
            _check_finite(terms, epoch)
            opt.step(params, grads)
            epoch_terms.append(terms)
        val_metrics = validation_mf1(params, val)
        entry = {"epoch": epoch, "loss": _mean_terms(epoch_terms), "val": val_metrics}
        report.epochs.append(entry)
        if epoch_log is not None:
            epoch_log(entry)
        log.debug("pretrain epoch %d: %s", epoch, entry)
        if stopper.update(epoch, val_metrics["mF1"], params):
            break

    report.best_val_mf1 = stopper.best
    report.best_epoch = stopper.best_epoch
    report.stopping_epoch = epoch
    best = stopper.best_params
    return TrainResult(best, report, prototypes=compute_prototypes(best, train))


def _soft_labels(labels, scores, gmm, C):
    soft = np.zeros((len(labels), C))
    lab = labels >= 1
    soft[lab] = one_hot(labels[lab], C)
    if (~lab).any():
        soft[~lab] = gmm_mod.responsibilities(gmm, scores[~lab])
    return soft


def adapt(params: ModelParams, bundle: DatasetBundle, config: TrainConfig,
          epoch_log=None) -> TrainResult:
    """Continue training ``params`` on both domains.

    Each epoch refreshes the source prototypes and (every
    ``gmm_refit_period`` epochs) the mixture over unlabeled target rank
    scores, then takes gradient steps on class-balanced labeled batches
    from both domains plus an unlabeled target batch.  Early-stops on
    target validation macro F1.
    """
    C = bundle.num_classes
    src = bundle.select("source", "train", labeled=True)
    tgt = bundle.select("target", "train", labeled=True)
    unl = bundle.select("target", "train", labeled=False)
    val = bundle.select("target", "val", labeled=True)
    if len(src) == 0 or len(tgt) == 0:
        raise ProtocolError("adaptation needs labeled source and labeled target samples")
    if len(val) == 0:
        raise ProtocolError("adaptation needs labeled target validation samples")
    use_cda = config.use_cda
    if use_cda and len(unl) < C:
        raise ProtocolError(f"CDA needs at least {C} unlabeled target samples, got {len(unl)}")

    params = params.copy()
    ns = config.batch_size // 2
    nt = config.batch_size - ns
    nu = min(config.unlabeled_batch_size, len(unl))
    src_rng, tgt_rng, unl_rng, pair_rng, gmm_seed_rng = _streams(config.seed, 5)
    src_batches = class_weighted_batches(src.labels, ns, src_rng, C)
    tgt_batches = class_weighted_batches(tgt.labels, nt, tgt_rng, C)
    steps = config.steps_per_epoch or math.ceil(max(len(unl), len(tgt)) / config.unlabeled_batch_size)
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.eps)
    report = TrainReport("adapted", config.seed, config.to_dict())
    stopper = _EarlyStopper(config.patience)
    protos = compute_prototypes(params, src)
    mixture = None
    best_state = (protos, mixture)

    src_rows = np.arange(ns)
    tgt_rows = np.arange(ns, ns + nt)
    unl_order = np.zeros(0, dtype=np.int64)
    for epoch in range(1, config.max_epochs + 1):
        refit = (epoch - 1) % config.gmm_refit_period == 0
        if refit:
            protos = compute_prototypes(params, src)
            if use_cda:
                mixture = gmm_mod.fit_gmm(rank_scores(params, unl.features), C, config.gmm_max_iters,
                                          config.gmm_tol, int(gmm_seed_rng.integers(2**32)))
        epoch_terms = []
        for _ in range(steps):
            s_idx, t_idx = next(src_batches), next(tgt_batches)
            parts_x = [src.features[s_idx], tgt.features[t_idx]]
            parts_y = [src.labels[s_idx], tgt.labels[t_idx]]
            if use_cda:
                if unl_order.size < nu:
                    unl_order = np.concatenate([unl_order, unl_rng.permutation(len(unl))])
                u_idx, unl_order = unl_order[:nu], unl_order[nu:]
                parts_x.append(unl.features[u_idx])
                parts_y.append(unl.labels[u_idx])
            x = np.concatenate(parts_x)
            labels = np.concatenate(parts_y)

            pairs = []
            if config.within_source:
                pairs += make_pairs_within(src_rows, pair_rng, WITHIN_SOURCE)
            if config.within_target:
                pairs += make_pairs_within(tgt_rows, pair_rng, WITHIN_TARGET)
            if config.use_cdr:
                pairs += make_pairs_cross(src_rows, tgt_rows, pair_rng, config.cross_all_pairs)
            pairs = pair_array(pairs)

            probs, scores, cache = forward_batch(params, x)
            soft = _soft_labels(labels, scores, mixture, C) if use_cda else None
            terms, dlogits, dscores = total_loss(probs, scores, labels, pairs, soft, protos.mu,
                                                 config.lam, return_grads=True)
            _check_finite(terms, epoch)
            opt.step(params, backward(params, cache, dlogits, dscores))
            epoch_terms.append(terms)

        val_metrics = validation_mf1(params, val)
        entry = {"epoch": epoch, "loss": _mean_terms(epoch_terms), "val": val_metrics,
                 "prototypes": protos.mu.tolist()}
        if use_cda and refit:
            entry["gmm_log_likelihood"] = mixture.log_likelihood
        report.epochs.append(entry)
        if epoch_log is not None:
            epoch_log(entry)
        log.debug("adapt epoch %d: %s", epoch, entry)
        improved_before = stopper.best_epoch
        stop = stopper.update(epoch, val_metrics["mF1"], params)
        if stopper.best_epoch != improved_before:
            best_state = (protos, mixture)
        if stop:
            break

    report.best_val_mf1 = stopper.best
    report.best_epoch = stopper.best_epoch
    report.stopping_epoch = epoch
    return TrainResult(stopper.best_params, report, prototypes=best_state[0], gmm=best_state[1])
