"""Shared-trunk network with a classifier head and a scalar ranking head.

The trunk is a ReLU multilayer perceptron.  Both heads are linear layers on
top of the trunk output: the classifier produces softmax class
probabilities, the ranking head a single unbounded rank score.  Everything
runs in float64 and gradients are computed by hand-written backprop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, InputError, NumericalError, ShapeError

FORMAT_VERSION = 1
STAGES = ("pretrained", "adapted")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if int(self.input_dim) < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden_dims must be non-empty and positive, got {self.hidden_dims}")
        if int(self.num_classes) < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def to_dict(self) -> dict:
        return {
            "input_dim": int(self.input_dim),
            "hidden_dims": list(self.hidden_dims),
            "num_classes": int(self.num_classes),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(d["input_dim"], tuple(d["hidden_dims"]), d["num_classes"], d.get("seed", 0))


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical (ordered) parameter names and shapes for a config."""
    shapes = {}
    fan_in = config.input_dim
    for i, width in enumerate(config.hidden_dims):
        shapes[f"hidden{i}.weight"] = (fan_in, width)
        shapes[f"hidden{i}.bias"] = (width,)
        fan_in = width
    shapes["classifier.weight"] = (fan_in, config.num_classes)
    shapes["classifier.bias"] = (config.num_classes,)
    shapes["ranker.weight"] = (fan_in, 1)
    shapes["ranker.bias"] = (1,)
    return shapes


@dataclass
class ModelParams:
    """Weights of the trunk and both heads, keyed by canonical name."""

    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        expected = param_shapes(self.config)
        if list(self.tensors) != list(expected):
            raise ShapeError(f"parameter names {list(self.tensors)} != {list(expected)}")
        for name, shape in expected.items():
            t = self.tensors[name]
            if t.shape != shape:
                raise ShapeError(f"{name}: shape {t.shape} != {shape}")
            if not np.all(np.isfinite(t)):
                raise NumericalError(f"{name} has non-finite entries")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def num_hidden(self) -> int:
        return len(self.config.hidden_dims)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def to_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(v).tobytes() for v in self.tensors.values())

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_model(config: ModelConfig) -> ModelParams:
    """Glorot-uniform weights, zero biases, seeded by ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(config, tensors)


@dataclass(frozen=True)
class ForwardOutput:
    class_probs: np.ndarray
    rank_score: float


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each hidden layer
    pre: list[np.ndarray]  # pre-activations of each hidden layer
    features: np.ndarray
    logits: np.ndarray


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_inputs(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.config.input_dim:
        raise ShapeError(f"expected inputs of shape (n, {params.config.input_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("inputs contain non-finite values")
    return x


def forward_batch(params: ModelParams, x: np.ndarray):
    """Run a batch through the network.

    Returns ``(probs, scores, cache)`` with probs of shape (n, C), scores of
    shape (n,) and a cache for :func:`backward`.
    """
    h = _check_inputs(params, x)
    inputs, pre = [], []
    for i in range(params.num_hidden):
        inputs.append(h)
        a = h @ params[f"hidden{i}.weight"] + params[f"hidden{i}.bias"]
        pre.append(a)
        h = np.maximum(a, 0.0)
    logits = h @ params["classifier.weight"] + params["classifier.bias"]
    scores = (h @ params["ranker.weight"])[:, 0] + params["ranker.bias"][0]
    return softmax(logits), scores, ForwardCache(inputs, pre, h, logits)


def forward(params: ModelParams, x) -> ForwardOutput:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a single feature vector, got shape {x.shape}")
    probs, scores, _ = forward_batch(params, x[None, :])
    return ForwardOutput(probs[0], float(scores[0]))


def predict(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Class predictions in 1..C (argmax of the class probabilities)."""
    probs, _, _ = forward_batch(params, x)
    return probs.argmax(axis=1) + 1


def rank_scores(params: ModelParams, x: np.ndarray) -> np.ndarray:
    return forward_batch(params, x)[1]


def backward(params: ModelParams, cache: ForwardCache, dlogits: np.ndarray,
             dscores: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given loss gradients w.r.t. logits and scores."""
    h = cache.features
    grads = {
        "classifier.weight": h.T @ dlogits,
        "classifier.bias": dlogits.sum(axis=0),
        "ranker.weight": h.T @ dscores[:, None],
        "ranker.bias": np.array([dscores.sum()]),
    }
    # both heads feed the shared trunk
    dh = dlogits @ params["classifier.weight"].T + dscores[:, None] @ params["ranker.weight"].T
    for i in reversed(range(params.num_hidden)):
        da = dh * (cache.pre[i] > 0)
        grads[f"hidden{i}.weight"] = cache.inputs[i].T @ da
        grads[f"hidden{i}.bias"] = da.sum(axis=0)
        if i > 0:
            dh = da @ params[f"hidden{i}.weight"].T
    return {name: grads[name] for name in params.tensors}


LossEvaluator = Callable[[ModelParams], "tuple[float, dict[str, np.ndarray]]"]


def grad_check(params: ModelParams, loss_evaluator: LossEvaluator, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_evaluator(params)`` must return ``(loss, grads)``.  The relative
    error of each entry uses the denominator max(|analytic|, |numeric|, 1e-8).
    """
    if not 1e-7 < step < 1e-3:
        raise InputError(f"step must lie in (1e-7, 1e-3), got {step}")
    loss, analytic = loss_evaluator(params)
    if not np.isfinite(loss):
        raise NumericalError(f"loss is not finite: {loss}")
    work = params.copy()
    worst = 0.0
    for name, tensor in work.tensors.items():
        flat = tensor.reshape(-1)
        a_flat = np.asarray(analytic[name]).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss_evaluator(work)[0]
            flat[j] = orig - step
            down = loss_evaluator(work)[0]
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericalError(f"loss is not finite while perturbing {name}[{j}]")
            numeric = (up - down) / (2.0 * step)
            denom = max(abs(a_flat[j]), abs(numeric), 1e-8)
            worst = max(worst, abs(a_flat[j] - numeric) / denom)
    return worst


class Adam:
    """Adaptive moment estimation; updates parameters in place."""

    def __init__(self, params: ModelParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in params.tensors.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- checkpoints -------------------------------------------------------------

def checkpoint_dict(params: ModelParams, stage: str, seed: int, extra: dict | None = None) -> dict:
    if stage not in STAGES:
        raise ConfigError(f"training_stage must be one of {STAGES}, got {stage!r}")
    doc = {
        "format_version": FORMAT_VERSION,
        "model_config": params.config.to_dict(),
        "training_stage": stage,
        "seed": int(seed),
        "params": {
            name: {"shape": list(t.shape), "data": t.reshape(-1).tolist()}
            for name, t in params.tensors.items()
        },
    }
    if extra:
        doc.update(extra)
    return doc


def params_from_checkpoint(doc: dict) -> ModelParams:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    config = ModelConfig.from_dict(doc["model_config"])
    tensors = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    return ModelParams(config, tensors)


def save_checkpoint(path, params: ModelParams, stage: str, seed: int, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(params, stage, seed, extra)) + "\n")


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    doc = json.loads(Path(path).read_text())
    return params_from_checkpoint(doc), doc
