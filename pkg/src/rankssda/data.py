"""Synthetic ordinal domain-shift datasets and their CSV format.

Each sample carries a severity class in 1..C (or -1 when unlabeled), a
domain (``source`` or ``target``) and a split (``train``, ``val``,
``test``).  Unlabeled samples only exist in the target training split.

The generator draws a latent severity around ordered class centers,
embeds it (plus nuisance factors) in feature space and, for the target
domain, pushes the clean features through an affine shift.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, ParseError

DOMAINS = ("source", "target")
SPLITS = ("train", "val", "test")
UNLABELED = -1


@dataclass(frozen=True)
class Sample:
    id: int
    features: np.ndarray
    label: int | None
    domain: str
    split: str


@dataclass
class DatasetBundle:
    ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    splits: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.domains = np.asarray(self.domains, dtype=object)
        self.splits = np.asarray(self.splits, dtype=object)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            self.features = self.features.reshape(len(self.ids), -1)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def mask(self, domain=None, split=None, labeled=None) -> np.ndarray:
        m = np.ones(len(self), dtype=bool)
        if domain is not None:
            m &= self.domains == domain
        if split is not None:
            m &= self.splits == split
        if labeled is not None:
            m &= (self.labels != UNLABELED) == labeled
        return m

    def subset(self, mask) -> "DatasetBundle":
        return DatasetBundle(self.ids[mask], self.features[mask], self.labels[mask],
                             self.domains[mask], self.splits[mask], self.num_classes)

    def select(self, domain=None, split=None, labeled=None) -> "DatasetBundle":
        return self.subset(self.mask(domain, split, labeled))

    def samples(self):
        for i in range(len(self)):
            label = int(self.labels[i])
            yield Sample(int(self.ids[i]), self.features[i], None if label == UNLABELED else label,
                         str(self.domains[i]), str(self.splits[i]))

    def equals(self, other: "DatasetBundle") -> bool:
        return (self.num_classes == other.num_classes
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)
                and list(self.domains) == list(other.domains)
                and list(self.splits) == list(other.splits))

    def validate(self) -> None:
        if len(set(self.ids.tolist())) != len(self):
            raise ConfigError("sample ids are not unique")
        for i in range(len(self)):
            _check_row(self.domains[i], self.splits[i], int(self.labels[i]), self.num_classes)


def _check_row(domain, split, label, num_classes):
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    if label == UNLABELED:
        if (domain, split) != ("target", "train"):
            raise ValueError(f"unlabeled sample in {domain}/{split}; only target/train may be unlabeled")
    elif not 1 <= label <= num_classes:
        raise ValueError(f"label {label} outside 1..{num_classes}")


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 4
    input_dim: int = 16
    source_per_class: int = 400
    source_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    target_labeled_per_class: int = 10
    target_unlabeled: int = 2000
    target_val_per_class: int = 10
    target_test_per_class: int = 100
    spacing: float = 1.0
    spread: float = 0.6
    nuisance_dims: int = 3
    nuisance_scale: float = 1.0
    shift_angle: float = 0.8
    shift_offset_norm: float = 1.5
    shift_matrix: tuple | None = None
    shift_offset: tuple | None = None
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        errors = []
        if self.num_classes < 2:
            errors.append("num_classes must be >= 2")
        if self.input_dim < 1:
            errors.append("input_dim must be >= 1")
        if self.nuisance_dims < 0 or self.nuisance_dims >= self.input_dim:
            errors.append("nuisance_dims must lie in [0, input_dim)")
        for name in ("source_per_class", "target_labeled_per_class", "target_val_per_class",
                     "target_test_per_class"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if self.target_unlabeled < 0:
            errors.append("target_unlabeled must be >= 0")
        if len(self.source_fractions) != 3 or min(self.source_fractions) < 0 \
                or abs(sum(self.source_fractions) - 1.0) > 1e-9:
            errors.append("source_fractions must be three non-negative numbers summing to 1")
        if not self.spacing > 0:
            errors.append("spacing must be > 0")
        if self.spread < 0 or self.noise < 0 or self.nuisance_scale < 0 or self.shift_offset_norm < 0:
            errors.append("spread, noise, nuisance_scale and shift_offset_norm must be >= 0")
        if self.shift_matrix is not None:
            a = np.asarray(self.shift_matrix, dtype=float)
            if a.shape != (self.input_dim, self.input_dim):
                errors.append(f"shift_matrix must be {self.input_dim}x{self.input_dim}")
            elif not np.isfinite(np.linalg.cond(a)) or np.linalg.cond(a) >= 100:
                errors.append("shift_matrix condition number must be < 100")
        if self.shift_offset is not None and len(self.shift_offset) != self.input_dim:
            errors.append(f"shift_offset must have {self.input_dim} entries")
        if errors:
            raise ConfigError("; ".join(errors))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["source_fractions"] = list(self.source_fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown SynthConfig fields: {sorted(unknown)}")
        d = dict(d)
        if "source_fractions" in d:
            d["source_fractions"] = tuple(d["source_fractions"])
        for key in ("shift_matrix", "shift_offset"):
            if d.get(key) is not None:
                d[key] = tuple(tuple(r) if isinstance(r, list) else r for r in d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(d)


@dataclass(frozen=True)
class Geometry:
    """Fixed generative geometry drawn from the config seed."""

    severity_dir: np.ndarray
    nuisance_dirs: np.ndarray
    shift_matrix: np.ndarray
    shift_offset: np.ndarray
    centers: np.ndarray = field(repr=False)


def class_centers(config: SynthConfig) -> np.ndarray:
    return config.spacing * np.arange(1, config.num_classes + 1, dtype=np.float64)


def make_geometry(config: SynthConfig, rng: np.random.Generator) -> Geometry:
    d, m = config.input_dim, config.nuisance_dims
    q, _ = np.linalg.qr(rng.standard_normal((d, m + 1)))
    severity_dir, nuisance_dirs = q[:, 0], q[:, 1:]

    if config.shift_matrix is not None:
        shift = np.asarray(config.shift_matrix, dtype=np.float64)
    else:
        # rotation by at most shift_angle radians in every invariant plane
        k = rng.standard_normal((d, d))
        k = k - k.T
        k *= config.shift_angle / np.linalg.norm(k, 2)
        shift = expm(k)
    if config.shift_offset is not None:
        offset = np.asarray(config.shift_offset, dtype=np.float64)
    else:
        v = rng.standard_normal(d)
        offset = config.shift_offset_norm * v / np.linalg.norm(v)

    centers = class_centers(config)
    assert np.all(np.diff(centers) > 0), "class centers must increase with class index"
    return Geometry(severity_dir, nuisance_dirs, shift, offset, centers)


def _clean_features(config, geom, labels, rng):
    latent = geom.centers[labels - 1] + config.spread * rng.standard_normal(len(labels))
    x = latent[:, None] * geom.severity_dir[None, :]
    if config.nuisance_dims:
        v = config.nuisance_scale * rng.standard_normal((len(labels), config.nuisance_dims))
        x = x + v @ geom.nuisance_dirs.T
    return x


def generate_synthetic(config: SynthConfig) -> DatasetBundle:
    """Draw a full source/target bundle; identical config gives identical output."""
    rng = np.random.default_rng(config.seed)
    geom = make_geometry(config, rng)
    C = config.num_classes
    parts = []  # (features, labels, hidden_labels, domain, split)

    def source_part(split, per_class):
        labels = np.repeat(np.arange(1, C + 1), per_class)
        x = _clean_features(config, geom, labels, rng)
        x = x + config.noise * rng.standard_normal(x.shape)
        parts.append((x, labels, "source", split))

    def target_part(split, labels, hide=False):
        x = _clean_features(config, geom, labels, rng) @ geom.shift_matrix.T + geom.shift_offset
        x = x + config.noise * rng.standard_normal(x.shape)
        parts.append((x, np.full(len(labels), UNLABELED) if hide else labels, "target", split))

    counts = np.floor(np.array(config.source_fractions) * config.source_per_class).astype(int)
    counts[0] = config.source_per_class - counts[1:].sum()
    for split, n in zip(SPLITS, counts):
        if n:
            source_part(split, n)

    target_part("train", np.repeat(np.arange(1, C + 1), config.target_labeled_per_class))
    if config.target_unlabeled:
        target_part("train", rng.integers(1, C + 1, size=config.target_unlabeled), hide=True)
    target_part("val", np.repeat(np.arange(1, C + 1), config.target_val_per_class))
    target_part("test", np.repeat(np.arange(1, C + 1), config.target_test_per_class))

    features = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    domains = np.concatenate([[p[2]] * len(p[1]) for p in parts])
    splits = np.concatenate([[p[3]] * len(p[1]) for p in parts])
    return DatasetBundle(np.arange(len(labels)), features, labels, domains, splits, C)


# -- file format -------------------------------------------------------------

def header(input_dim: int) -> list[str]:
    return ["id", "domain", "split", "label"] + [f"f{i}" for i in range(input_dim)]


def write_dataset(bundle: DatasetBundle, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header(bundle.input_dim))
        for i in range(len(bundle)):
            writer.writerow([int(bundle.ids[i]), bundle.domains[i], bundle.splits[i], int(bundle.labels[i])]
                            + [repr(float(v)) for v in bundle.features[i]])


def load_dataset(path, num_classes: int | None = None) -> DatasetBundle:
    """Read a dataset CSV, validating every row.

    Without ``num_classes`` the class count is taken as the largest label.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head is None:
            raise ParseError("empty file (missing header)", line=1)
        input_dim = len(head) - 4
        if input_dim < 1 or head != header(input_dim):
            raise ParseError(f"bad header {head!r}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(head):
                raise ParseError(f"expected {len(head)} fields, got {len(row)}", line=lineno)
            try:
                ident, label = int(row[0]), int(row[3])
                feats = [float(v) for v in row[4:]]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            if not np.all(np.isfinite(feats)):
                raise ParseError("non-finite feature value", line=lineno)
            rows.append((lineno, ident, row[1], row[2], label, feats))

    if num_classes is None:
        labels = [r[4] for r in rows if r[4] != UNLABELED]
        num_classes = max(max(labels, default=2), 2)
    seen = {}
    for lineno, ident, domain, split, label, _ in rows:
        try:
            _check_row(domain, split, label, num_classes)
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
        if ident in seen:
            raise ParseError(f"duplicate id {ident} (first on line {seen[ident]})", line=lineno)
        seen[ident] = lineno

    return DatasetBundle(
        [r[1] for r in rows],
        np.array([r[5] for r in rows], dtype=np.float64).reshape(len(rows), input_dim),
        [r[4] for r in rows], [r[2] for r in rows], [r[3] for r in rows], num_classes,
    )


def split_summary(bundle: DatasetBundle) -> dict[tuple[str, str, bool], int]:
    """Sample counts for every (domain, split, labeled) combination."""
    return {
        (domain, split, labeled): int(bundle.mask(domain, split, labeled).sum())
        for domain, split, labeled in product(DOMAINS, SPLITS, (True, False))
    }


def expected_summary(config: SynthConfig) -> dict[tuple[str, str, bool], int]:
    counts = {key: 0 for key in product(DOMAINS, SPLITS, (True, False))}
    n = np.floor(np.array(config.source_fractions) * config.source_per_class).astype(int)
    n[0] = config.source_per_class - n[1:].sum()
    for split, k in zip(SPLITS, n):
        counts["source", split, True] = int(k) * config.num_classes
    C = config.num_classes
    counts["target", "train", True] = config.target_labeled_per_class * C
    counts["target", "train", False] = config.target_unlabeled
    counts["target", "val", True] = config.target_val_per_class * C
    counts["target", "test", True] = config.target_test_per_class * C
    return counts
