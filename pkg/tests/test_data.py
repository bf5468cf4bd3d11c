import hashlib
import json

import numpy as np
import pytest

from rankssda.data import (DatasetBundle, SynthConfig, class_centers, expected_summary,
                           generate_synthetic, load_dataset, split_summary, write_dataset)
from rankssda.errors import ConfigError, ParseError


@pytest.fixture(scope="module")
def small_config():
    return SynthConfig(source_per_class=50, target_unlabeled=100, target_test_per_class=20, seed=5)


@pytest.fixture(scope="module")
def small_bundle(small_config):
    return generate_synthetic(small_config)


def test_labeled_target_count():
    cfg = SynthConfig(num_classes=4, target_labeled_per_class=10, source_per_class=20,
                      target_unlabeled=10, target_test_per_class=5)
    b = generate_synthetic(cfg)
    assert b.mask("target", "train", labeled=True).sum() == 40


def test_summary_matches_config(small_config, small_bundle):
    assert split_summary(small_bundle) == expected_summary(small_config)


def test_default_summary():
    cfg = SynthConfig()
    counts = split_summary(generate_synthetic(cfg))
    assert counts == expected_summary(cfg)
    assert counts["target", "train", False] == 2000
    assert counts["target", "val", True] == 40
    assert counts["source", "train", True] == 960


def test_identity_shift_preserves_class_means():
    d = 6
    cfg = SynthConfig(input_dim=d, spread=0.0, noise=0.0, nuisance_dims=0, shift_matrix=np.eye(d).tolist(),
                      shift_offset=[0.0] * d, source_per_class=500, target_test_per_class=500,
                      target_unlabeled=0)
    b = generate_synthetic(cfg)
    for k in range(1, 5):
        src = b.features[b.mask("source", labeled=True) & (b.labels == k)].mean(axis=0)
        tgt = b.features[b.mask("target", labeled=True) & (b.labels == k)].mean(axis=0)
        np.testing.assert_allclose(src, tgt, atol=1e-9)


def test_class_centers_increase():
    assert np.all(np.diff(class_centers(SynthConfig(num_classes=6, spacing=0.5))) > 0)


def test_unlabeled_only_in_target_train(small_bundle):
    unl = small_bundle.labels == -1
    assert unl.any()
    assert set(small_bundle.domains[unl]) == {"target"}
    assert set(small_bundle.splits[unl]) == {"train"}


def test_test_ids_disjoint_from_train(small_bundle):
    test_ids = set(small_bundle.ids[small_bundle.splits == "test"].tolist())
    train_ids = set(small_bundle.ids[small_bundle.splits != "test"].tolist())
    assert not test_ids & train_ids
    assert len(set(small_bundle.ids.tolist())) == len(small_bundle)


def test_round_trip(tmp_path, small_bundle):
    path = tmp_path / "data.csv"
    write_dataset(small_bundle, path)
    loaded = load_dataset(path)
    assert loaded.equals(small_bundle)
    assert len(loaded) == len(small_bundle)


def test_generation_is_byte_identical(tmp_path, small_config):
    digests = []
    for name in ("a.csv", "b.csv"):
        write_dataset(generate_synthetic(small_config), tmp_path / name)
        digests.append(hashlib.sha256((tmp_path / name).read_bytes()).hexdigest())
    assert digests[0] == digests[1]


def test_seed_changes_data(small_config):
    a = generate_synthetic(small_config)
    b = generate_synthetic(SynthConfig(**{**small_config.to_dict(), "seed": 6,
                                          "source_fractions": small_config.source_fractions}))
    assert not np.array_equal(a.features, b.features)


def _write(tmp_path, rows, d=2):
    path = tmp_path / "bad.csv"
    head = "id,domain,split,label," + ",".join(f"f{i}" for i in range(d))
    path.write_text("\n".join([head] + rows) + "\n")
    return path


def test_label_out_of_range_names_line(tmp_path):
    path = _write(tmp_path, ["0,source,train,1,0.0,1.0", "1,target,test,7,0.5,0.5"])
    with pytest.raises(ParseError, match="line 3") as exc:
        load_dataset(path, num_classes=4)
    assert exc.value.line == 3


def test_unlabeled_test_row_rejected(tmp_path):
    path = _write(tmp_path, ["0,source,train,2,0.0,1.0", "1,target,test,-1,0.5,0.5"])
    with pytest.raises(ParseError, match="line 3"):
        load_dataset(path, num_classes=4)


@pytest.mark.parametrize("row", ["0,elsewhere,train,1,0,0", "0,source,holdout,1,0,0",
                                 "0,source,train,1,0", "x,source,train,1,0,0", "0,source,train,1,nan,0"])
def test_malformed_rows(tmp_path, row):
    with pytest.raises(ParseError, match="line 2"):
        load_dataset(_write(tmp_path, [row]), num_classes=4)


def test_bad_header(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("id,label,domain,split,f0\n")
    with pytest.raises(ParseError, match="line 1"):
        load_dataset(path)


def test_empty_and_source_only_summaries():
    empty = DatasetBundle([], np.zeros((0, 3)), [], [], [], 4)
    assert set(split_summary(empty).values()) == {0}
    src = generate_synthetic(SynthConfig(source_per_class=10, target_unlabeled=5,
                                         target_test_per_class=2)).select("source")
    counts = split_summary(src)
    assert all(v == 0 for (dom, _, _), v in counts.items() if dom == "target")
    assert sum(counts.values()) == 40


@pytest.mark.parametrize("override", [
    {"num_classes": 1}, {"spacing": 0.0}, {"target_labeled_per_class": 0},
    {"shift_matrix": (np.diag([1.0] * 15 + [1e-3])).tolist()}, {"bogus": 1},
])
def test_invalid_synth_config(override):
    with pytest.raises(ConfigError):
        SynthConfig.from_dict(override)


def test_config_json_round_trip(tmp_path):
    cfg = SynthConfig(seed=42, spread=0.5)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert SynthConfig.from_json(path) == cfg
