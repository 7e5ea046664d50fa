import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.model_selection import KFold

from darkres.dataset import PPS_REFERENCE_SCORES, FeatureSchema, FlowDataset
from darkres.errors import ConstantInput, EmptySelection
from darkres.pps import (PpsConfig, f_score, mae, pearson_r, pps_matrix, pps_score, score_from_metrics,
                         select_features, weighted_f1)


def make(columns: dict, y=None, k=2):
    names = tuple(columns)
    X = np.column_stack([np.asarray(columns[n], float) for n in names])
    y = np.zeros(X.shape[0], int) if y is None else np.asarray(y)
    schema = FeatureSchema(names, "Label", tuple((c, f"c{c}") for c in range(k)))
    return FlowDataset(schema, X, y)


def nearest_neighbour_pps(x, y, folds, seed):
    """With distinct x an unpruned regression tree predicts the y of the nearest training x
    (split thresholds sit at midpoints; an exact midpoint goes left)."""
    model, base = [], []
    for tr, te in KFold(folds, shuffle=True, random_state=seed).split(x):
        order = np.argsort(x[tr])
        xs, ys = x[tr][order], y[tr][order]
        preds = []
        for v in x[te]:
            j = np.searchsorted(xs, v)
            if j == 0:
                preds.append(ys[0])
            elif j == xs.size:
                preds.append(ys[-1])
            else:
                preds.append(ys[j - 1] if v <= (xs[j - 1] + xs[j]) / 2 else ys[j])
        model.append(np.mean(np.abs(np.array(preds) - y[te])))
        base.append(np.mean(np.abs(np.median(y[tr]) - y[te])))
    return max(0.0, 1 - np.mean(model) / np.mean(base))


@pytest.fixture(scope="module")
def parabola():
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, 600)
    return make({"x": x, "y": x ** 2})


def test_pearson_hand_values():
    assert pearson_r([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson_r([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    # dx = (-1, 0, 1), dy = (-1, 2, -1): covariance 0
    assert pearson_r([1, 2, 3], [1, 4, 1]) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ConstantInput):
        pearson_r([1, 1, 1], [1, 2, 3])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=30), st.integers(0, 1000))
def test_pearson_symmetric(xs, seed):
    x = np.array(xs)
    y = np.random.default_rng(seed).normal(size=x.size)
    if np.ptp(x) < 1e-6:
        return
    assert pearson_r(x, y) == pytest.approx(pearson_r(y, x), abs=1e-12)
    assert -1.0 <= pearson_r(x, y) <= 1.0


def test_metric_helpers():
    assert mae([1, 2], [2, 4]) == 1.5
    assert f_score(0.0, 0.0) == 0.0
    assert f_score(0.5, 1.0) == pytest.approx(2 / 3)
    # class 0: P=2/3 R=1 F=0.8 (support 2); class 1: P=1 R=1/2 F=2/3 (support 2)
    assert weighted_f1([0, 0, 1, 1], [0, 0, 0, 1]) == pytest.approx((0.8 * 2 + (2 / 3) * 2) / 4)
    assert score_from_metrics("regression", 0.2, 0.8) == pytest.approx(0.75)
    assert score_from_metrics("regression", 1.2, 0.8) == 0.0
    assert score_from_metrics("classification", 0.9, 0.6) == pytest.approx(0.75)
    assert score_from_metrics("classification", 0.9, 1.0) == 0.0


def test_regression_matches_nearest_neighbour_oracle(parabola):
    for f, t in (("x", "y"), ("y", "x")):
        r = pps_score(parabola, f, t, PpsConfig(seed=3))
        assert r.score == pytest.approx(nearest_neighbour_pps(parabola.column(f), parabola.column(t), 4, 3), abs=1e-12)


def test_asymmetry(parabola):
    forward = pps_score(parabola, "x", "y").score
    backward = pps_score(parabola, "y", "x").score
    assert forward > 0.5 > 0.2 > backward


def test_copy_scores_high():
    # out-of-fold error on a continuous copy is a nearest-neighbour gap, shrinking like 1/n
    rng = np.random.default_rng(1)
    v = rng.normal(size=2000)
    ds = make({"a": v, "b": v.copy()})
    assert pps_score(ds, "a", "b").score >= 0.99
    labels = rng.integers(0, 3, 2000)
    ds = make({"a": labels.astype(float), "b": v}, labels, k=3)
    r = pps_score(ds, "a", "Label")
    assert r.task_kind == "classification" and r.score >= 0.99


def test_noise_scores_low():
    rng = np.random.default_rng(13)
    ds = make({"a": rng.normal(size=1000), "b": rng.normal(size=1000)})
    assert pps_score(ds, "a", "b").score <= 0.05


def test_constant_feature_scores_zero():
    rng = np.random.default_rng(2)
    ds = make({"a": np.full(100, 4.0), "b": rng.normal(size=100)}, rng.integers(0, 2, 100))
    assert pps_score(ds, "a", "b").score == 0.0
    assert pps_score(ds, "a", "Label").score == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_score_bounded_and_deterministic(seed):
    rng = np.random.default_rng(seed)
    n = 40
    y = rng.integers(0, 3, n)
    ds = make({"a": rng.normal(size=n) + y * rng.random(), "b": rng.integers(0, 4, n).astype(float)}, y, k=3)
    for f, t in (("a", "b"), ("b", "a"), ("a", "Label"), ("b", "Label")):
        r1 = pps_score(ds, f, t, PpsConfig(seed=seed))
        r2 = pps_score(ds, f, t, PpsConfig(seed=seed))
        assert 0.0 <= r1.score <= 1.0
        assert r1 == r2


def test_matrix(parabola):
    m = pps_matrix(parabola, ["x", "y"])
    s = m.scores()
    assert s[0, 0] == 1.0 and s[1, 1] == 1.0
    assert s[0, 1] > 0.5 > s[1, 0]
    assert m.to_csv().splitlines()[0] == "feature,x,y"
    assert set(m.target_scores("y")) == {"x"}


def test_reference_replay_selects_19():
    chosen = select_features(PPS_REFERENCE_SCORES, 0.3)
    assert len(chosen) == 19
    assert chosen[0] == "Idle_Max"
    assert chosen[-1] == "Fwd_Packet_Length_Mean"


def test_select_ordering_and_strictness():
    assert select_features({"b": 0.5, "a": 0.5, "c": 0.3, "d": 0.9}) == ["d", "a", "b"]
    with pytest.raises(EmptySelection):
        select_features({"a": 0.3, "b": 0.1})


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=4), st.floats(0, 1), min_size=1, max_size=15))
def test_select_is_sorted_subset(scores):
    try:
        out = select_features(scores, 0.3)
    except EmptySelection:
        assert all(v <= 0.3 for v in scores.values())
        return
    assert set(out) <= set(scores)
    keys = [(-scores[n], n) for n in out]
    assert keys == sorted(keys)
