import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from darkres.dataset import (PPS_REFERENCE_SCORES, FeatureSchema, FlowDataset, SynthSpec, apply_normalize,
                             fit_normalize, load_csv, split_indices, stratified_split, synth_generate, write_csv)
from darkres.errors import CategoryTooSmall, ConfigError, EmptyDataset, LabelOutOfRange, MissingColumn

from conftest import nearest_centroid_accuracy

SMALL = FeatureSchema(("a", "b"), "Label", ((0, "benign"), (1, "darknet")))


def write(tmp_path, text, name="flows.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_default_schema_shape():
    schema = FeatureSchema()
    assert schema.n_features == 61
    assert schema.n_categories == 11
    assert set(PPS_REFERENCE_SCORES) <= set(schema.names)


@pytest.mark.parametrize("names,cats", [
    (("a", "a"), ((0, "x"),)),
    (("a", ""), ((0, "x"),)),
    (("a",), ((0, "x"), (2, "y"))),
])
def test_schema_invariants(names, cats):
    with pytest.raises(ConfigError):
        FeatureSchema(names, "Label", cats)


def test_load_valid_csv(tmp_path):
    p = write(tmp_path, "b,extra,a,Label\n1,z,2,0\n3,z,4,1\n5,z,6,darknet\n7,z,8,Benign\n")
    ds, report = load_csv(p, SMALL)
    assert len(ds) == 4 and report.dropped_rows == 0
    # columns matched by header name, not position
    np.testing.assert_array_equal(ds.X[:, 0], [2, 4, 6, 8])
    np.testing.assert_array_equal(ds.y, [0, 1, 1, 0])


def test_load_drops_infinite_row(tmp_path):
    p = write(tmp_path, "a,b,Label\n1,2,0\nInfinity,2,0\n3,4,1\n5,6,1\n")
    ds, report = load_csv(p, SMALL, "drop-row")
    assert len(ds) == 3
    assert report.dropped_rows == 1
    assert "dropped_rows: 1" in report.summary()


def test_load_imputes_median(tmp_path):
    p = write(tmp_path, "a,b,Label\n1,0,0\n2,0,0\n3,0,1\n,0,1\n")
    ds, report = load_csv(p, SMALL, "impute-median")
    assert ds.X[3, 0] == 2.0
    assert report.imputed_cells == 1


def test_load_errors(tmp_path):
    with pytest.raises(MissingColumn, match="Label"):
        load_csv(write(tmp_path, "a,b\n1,2\n"), SMALL)
    with pytest.raises(EmptyDataset):
        load_csv(write(tmp_path, "a,b,Label\nnan,2,0\n"), SMALL)
    with pytest.raises(LabelOutOfRange) as info:
        load_csv(write(tmp_path, "a,b,Label\n1,2,0\n1,2,7\n"), SMALL)
    assert info.value.row == 3


def test_csv_round_trip(tmp_path):
    ds = synth_generate(SynthSpec(5, 4, 2, 2, 3.0, seed=2))
    normalized, _ = fit_normalize(ds)
    path = tmp_path / "n.csv"
    write_csv(normalized, path)
    back, _ = load_csv(path, normalized.schema)
    assert np.array_equal(back.X, normalized.X)
    assert np.array_equal(back.y, normalized.y)


def test_normalize_hand_example():
    ds = FlowDataset(SMALL, np.array([[2.0, 5.0], [4.0, 5.0]]), [0, 1])
    out, stats = fit_normalize(ds)
    np.testing.assert_array_equal(out.X[:, 0], [-1.0, 1.0])
    assert stats.mean[0] == 3.0 and stats.std[0] == 1.0
    # constant column: std treated as 1, values only centred
    np.testing.assert_array_equal(out.X[:, 1], [0.0, 0.0])
    assert stats.std[1] == 1.0


def test_normalize_reuse_is_bit_exact(blobs):
    _, train, _, _ = blobs
    raw = FlowDataset(train.schema, train.norm_stats.invert(train.X), train.y)
    normalized, stats = fit_normalize(raw)
    assert np.array_equal(apply_normalize(raw, stats).X, normalized.X)
    mu = normalized.X.mean(axis=0)
    sd = normalized.X.std(axis=0)
    assert np.all(np.abs(mu) < 1e-9)
    assert np.all(np.abs(sd - 1) < 1e-9)


def test_split_sizes_single_category():
    ds = FlowDataset(SMALL, np.zeros((100, 2)), np.zeros(100, dtype=int))
    parts = stratified_split(ds, (0.8, 0.1, 0.1), seed=0)
    assert [len(p) for p in parts] == [80, 10, 10]


def test_split_deterministic():
    y = np.repeat([0, 1], 50)
    a = split_indices(y, (0.7, 0.15, 0.15), 7)
    b = split_indices(y, (0.7, 0.15, 0.15), 7)
    assert all(np.array_equal(p, q) for p, q in zip(a, b))


def test_split_per_category_counts():
    y = np.repeat([0, 1], 10)
    parts = split_indices(y, (0.5, 0.25, 0.25), 3)
    counts = [[int(np.sum(y[p] == c)) for c in (0, 1)] for p in parts]
    # 10 * 0.25 = 2.5 for val and test; one remainder seat goes to the earlier split
    assert counts == [[5, 5], [3, 3], [2, 2]]


def test_split_category_too_small():
    with pytest.raises(CategoryTooSmall):
        split_indices(np.array([0, 0, 0, 1, 1]), (0.7, 0.15, 0.15), 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=12, max_size=80), st.integers(0, 2 ** 16))
def test_split_partitions_input(labels, seed):
    y = np.array(labels)
    counts = np.bincount(y, minlength=4)
    y = y[np.isin(y, np.flatnonzero(counts >= 3))]
    if y.size == 0:
        return
    parts = split_indices(y, (0.7, 0.15, 0.15), seed, 4)
    joined = np.concatenate(parts)
    assert np.array_equal(np.sort(joined), np.arange(y.size))


def test_synth_label_histogram():
    ds = synth_generate(SynthSpec(n_per_class=10, n_features=6, n_informative=2, class_count=3, seed=4))
    assert ds.label_counts() == {0: 10, 1: 10, 2: 10}


def test_synth_zero_separation_indistinguishable():
    spec = SynthSpec(n_per_class=2000, n_features=4, n_informative=4, class_count=2, separation=0.0, seed=5)
    ds = synth_generate(spec)
    diff = ds.X[ds.y == 0].mean(axis=0) - ds.X[ds.y == 1].mean(axis=0)
    # two-sample standard error of a difference of unit-variance means
    assert np.all(np.abs(diff) < 4 * math.sqrt(2 / 2000))


def test_synth_separable_by_centroids():
    spec = SynthSpec(n_per_class=200, n_features=20, n_informative=5, class_count=3, separation=10.0, seed=6)
    train, _, test = stratified_split(synth_generate(spec), (0.7, 0.15, 0.15), 0)
    assert nearest_centroid_accuracy(train, test) > 0.99


def test_synth_is_pure():
    spec = SynthSpec(n_per_class=7, n_features=5, n_informative=3, class_count=4, seed=9)
    a, b = synth_generate(spec), synth_generate(spec)
    assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()


def test_pipeline_stays_finite(tmp_path):
    p = write(tmp_path, "a,b,Label\n" + "".join(f"{i},{'inf' if i == 3 else i * i},{i % 2}\n" for i in range(12)))
    ds, _ = load_csv(p, SMALL, "drop-row")
    parts = stratified_split(fit_normalize(ds)[0], (0.5, 0.25, 0.25), 0)
    assert all(np.all(np.isfinite(part.X)) for part in parts)
