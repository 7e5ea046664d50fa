"""Shapley-value attributions of a model's class probability.

A feature outside the coalition takes its value from each background sample
in turn and the model output is averaged over the background (marginal
expectation). Features not listed as active are always held at the
instance's value.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import TooManyFeatures, WrongCardinality

EXACT_LIMIT = 15

ProbaFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class BackgroundSet:
    samples: np.ndarray
    origin: str = ""

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if s.shape[0] < 1:
            raise ValueError("background needs at least one sample")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @classmethod
    def sample(cls, X, size: int, seed: int) -> "BackgroundSet":
        X = np.asarray(X, dtype=float)
        size = min(size, X.shape[0])
        idx = np.sort(np.random.default_rng(seed).choice(X.shape[0], size=size, replace=False))
        return cls(X[idx], f"{size} rows sampled without replacement, seed {seed}")


@dataclass
class ShapleyExplanation:
    instance: np.ndarray
    target_category: int
    phi: np.ndarray
    base_value: float
    prediction: float
    n_evaluations: int
    feature_names: tuple[str, ...] = ()
    active: tuple[int, ...] = ()
    method: str = "exact"
    seed: int | None = None
    background_origin: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def names(self) -> tuple[str, ...]:
        if self.feature_names:
            return tuple(self.feature_names[i] for i in self.active)
        return tuple(f"x{i}" for i in self.active)

    @property
    def values(self) -> np.ndarray:
        return self.instance[list(self.active)]

    def efficiency_gap(self) -> float:
        return float(abs(self.phi.sum() - (self.prediction - self.base_value)))


def _hybrids(x: np.ndarray, background: np.ndarray, masks: np.ndarray, active: Sequence[int]) -> np.ndarray:
    """Stack one hybrid block per coalition mask (rows: mask-major, then background)."""
    n_b = background.shape[0]
    out = np.repeat(background[None, :, :], masks.shape[0], axis=0)
    inactive = np.setdiff1d(np.arange(x.size), active)
    out[:, :, inactive] = x[inactive]
    act = np.asarray(active)
    for m, mask in enumerate(masks):
        cols = act[mask]
        out[m][:, cols] = x[cols]
    return out.reshape(masks.shape[0] * n_b, x.size)


def _coalition_values(model: ProbaFn, x, background, masks, active, target) -> np.ndarray:
    n_b = background.shape[0]
    probs = np.asarray(model(_hybrids(x, background, masks, active)))[:, target]
    return probs.reshape(masks.shape[0], n_b).mean(axis=1)


def coalition_value(model: ProbaFn, x, S: Sequence[int], background: BackgroundSet, target: int,
                    active: Sequence[int] | None = None) -> float:
    x = np.asarray(x, dtype=float)
    active = list(range(x.size)) if active is None else list(active)
    S = set(S)
    mask = np.array([[i in S for i in active]])
    return float(_coalition_values(model, x, background.samples, mask, active, target)[0])


def _resolve(model, x, target, active):
    x = np.asarray(x, dtype=float)
    active = tuple(range(x.size)) if active is None else tuple(int(i) for i in active)
    if target is None:
        target = int(np.argmax(np.asarray(model(x[None, :]))[0]))
    return x, int(target), active


def exact_shapley(model: ProbaFn, x, background: BackgroundSet, target: int | None = None,
                  active_features: Sequence[int] | None = None, feature_names: Sequence[str] = ()) -> ShapleyExplanation:
    """Enumerate every coalition and weight marginal contributions by |S|!(M-|S|-1)!/M!."""
    x, target, active = _resolve(model, x, target, active_features)
    m = len(active)
    if m > EXACT_LIMIT:
        raise TooManyFeatures(m, EXACT_LIMIT)
    codes = np.arange(2 ** m)
    masks = ((codes[:, None] >> np.arange(m)) & 1).astype(bool)
    v = _coalition_values(model, x, background.samples, masks, active, target)
    sizes = masks.sum(axis=1)
    weights = np.array([math.factorial(s) * math.factorial(m - s - 1) / math.factorial(m) if s < m else 0.0
                        for s in range(m + 1)])
    phi = np.zeros(m)
    for i in range(m):
        without = codes[~masks[:, i]]
        terms = weights[sizes[without]] * (v[without | (1 << i)] - v[without])
        phi[i] = math.fsum(terms)
    return ShapleyExplanation(x, target, phi, float(v[0]), float(v[-1]), int(2 ** m * len(background)),
                              tuple(feature_names), active, "exact", None, background.origin)


def permutations_for_draws(draws: int, n_features: int) -> int:
    """Number of feature orderings needed to spend ``draws`` marginal evaluations."""
    return max(1, math.ceil(draws / max(1, n_features)))


def sampled_shapley(model: ProbaFn, x, background: BackgroundSet, target: int | None = None,
                    n_permutations: int = 100, seed: int = 0, active_features: Sequence[int] | None = None,
                    feature_names: Sequence[str] = ()) -> ShapleyExplanation:
    """Monte-Carlo permutation estimate.

    Each ordering walks from the empty coalition to the full one, crediting
    every feature with the change in coalition value when it joins. When
    ``n_permutations`` reaches M! all orderings are enumerated once instead
    of sampled, which makes the estimate exact.
    """
    x, target, active = _resolve(model, x, target, active_features)
    m = len(active)
    if n_permutations < 1:
        raise ValueError("n_permutations must be at least 1")
    if m <= 10 and n_permutations >= math.factorial(m):
        orders = [np.array(p) for p in itertools.permutations(range(m))]
    else:
        orders = [np.random.default_rng([seed, p]).permutation(m) for p in range(n_permutations)]

    contributions = np.zeros((len(orders), m))
    steps = np.tril(np.ones((m + 1, m), dtype=bool), k=-1)  # row r: first r positions present
    for p, order in enumerate(orders):
        masks = np.zeros((m + 1, m), dtype=bool)
        masks[:, order] = steps
        v = _coalition_values(model, x, background.samples, masks, active, target)
        contributions[p, order] = np.diff(v)
    phi = np.array([math.fsum(contributions[:, i]) / len(orders) for i in range(m)])

    empty = np.zeros((1, m), dtype=bool)
    base = float(_coalition_values(model, x, background.samples, empty, active, target)[0])
    full = float(_coalition_values(model, x, background.samples, ~empty, active, target)[0])
    return ShapleyExplanation(x, target, phi, base, full, int(len(orders) * m * len(background)),
                              tuple(feature_names), active, "sampled", seed, background.origin,
                              {"n_permutations": len(orders)})


def global_importance(explanations: Sequence[ShapleyExplanation]) -> list[tuple[str, float]]:
    """Mean |phi| per feature, descending, ties broken by name."""
    if not explanations:
        raise ValueError("no explanations to aggregate")
    names = explanations[0].names
    if any(e.names != names for e in explanations):
        raise ValueError("explanations cover different feature sets")
    mean_abs = np.mean([np.abs(e.phi) for e in explanations], axis=0)
    return sorted(zip(names, mean_abs.tolist()), key=lambda t: (-t[1], t[0]))


def export_plot_data(explanations: Sequence[ShapleyExplanation], kind: str) -> dict:
    """Tabular data behind bar, beeswarm and force plots (no rendering)."""
    if kind == "bar":
        return {"columns": ["feature", "mean_abs_phi"], "rows": [list(r) for r in global_importance(explanations)]}
    if kind == "beeswarm":
        rows = []
        for n, e in enumerate(explanations):
            for name, value, phi in zip(e.names, e.values, e.phi):
                rows.append([n, name, float(value), float(phi)])
        return {"columns": ["explanation", "feature", "feature_value", "phi"], "rows": rows}
    if kind == "force":
        if len(explanations) != 1:
            raise WrongCardinality(f"force export needs exactly one explanation, got {len(explanations)}")
        e = explanations[0]
        order = sorted(range(len(e.phi)), key=lambda i: (-abs(e.phi[i]), e.names[i]))
        return {
            "base_value": e.base_value,
            "prediction": e.prediction,
            "target_category": e.target_category,
            "columns": ["feature", "feature_value", "phi"],
            "rows": [[e.names[i], float(e.values[i]), float(e.phi[i])] for i in order],
        }
    raise ValueError(f"unknown export kind {kind!r}")


def plot_data_csv(export: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    columns = list(export["columns"])
    tail: list = []
    if "base_value" in export:
        columns += ["base_value", "prediction"]
        tail = [float(export["base_value"]), float(export["prediction"])]
    w.writerow(columns)
    for row in export["rows"]:
        w.writerow([repr(v) if isinstance(v, float) else v for v in [*row, *tail]])
    return buf.getvalue()
