"""Pearson correlation and Predictive Power Score (PPS) feature selection."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from sklearn.model_selection import KFold
from sklearn.tree import DecisionTreeClassifier, DecisionTreeRegressor

from .dataset import FlowDataset
from .errors import ConstantInput, EmptySelection, InsufficientRows


@dataclass(frozen=True)
class PpsConfig:
    folds: int = 4
    # None grows the tree until leaves are pure
    tree_depth: int | None = None
    seed: int = 0


@dataclass(frozen=True)
class PpsResult:
    feature: str
    target: str
    score: float
    task_kind: str
    model_metric: float
    baseline_metric: float


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("pearson_r needs two equal-length vectors of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.mean(dx * dx))
    sy = np.sqrt(np.mean(dy * dy))
    if sx == 0 or sy == 0:
        raise ConstantInput("pearson_r is undefined for a constant vector")
    r = np.mean(dx * dy) / (sx * sy)
    return float(np.clip(r, -1.0, 1.0))


def mae(pred, actual) -> float:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or pred.size == 0:
        raise ValueError("mae needs two equal, non-zero length vectors")
    return float(np.mean(np.abs(pred - actual)))


def f_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * recall * precision / (recall + precision)


def weighted_f1(actual, pred) -> float:
    """Support-weighted mean of per-class F-scores over the classes present in ``actual``."""
    actual = np.asarray(actual)
    pred = np.asarray(pred)
    total = 0.0
    for c in np.unique(actual):
        tp = np.sum((pred == c) & (actual == c))
        n_pred = np.sum(pred == c)
        support = np.sum(actual == c)
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / support
        total += support * f_score(precision, recall)
    return float(total / actual.size)


def _clamp(v: float) -> float:
    return float(min(1.0, max(0.0, v)))


def score_from_metrics(task_kind: str, model_metric: float, baseline_metric: float) -> float:
    if task_kind == "regression":
        if baseline_metric <= 0:
            return 0.0
        return _clamp(1.0 - model_metric / baseline_metric)
    if baseline_metric >= 1:
        return 0.0
    return _clamp((model_metric - baseline_metric) / (1.0 - baseline_metric))


def pps_score(dataset: FlowDataset, feature: str, target: str, config: PpsConfig = PpsConfig()) -> PpsResult:
    """Cross-validated single-feature tree score of how well ``feature`` predicts ``target``.

    The label column is treated as categorical (weighted F1 against a
    most-frequent-class baseline); every other column as numeric (MAE against
    a median baseline).
    """
    if feature == target:
        raise ValueError("feature and target must differ")
    if len(dataset) < 2 * config.folds:
        raise InsufficientRows(f"PPS needs at least {2 * config.folds} rows, got {len(dataset)}")
    x = dataset.column(feature).reshape(-1, 1)
    classification = target == dataset.schema.label_name
    kind = "classification" if classification else "regression"
    y = dataset.y if classification else dataset.column(target)

    folds = KFold(n_splits=config.folds, shuffle=True, random_state=config.seed)
    model_scores, base_scores = [], []
    for train_idx, test_idx in folds.split(x):
        y_tr, y_te = y[train_idx], y[test_idx]
        if classification:
            tree = DecisionTreeClassifier(max_depth=config.tree_depth, random_state=config.seed)
            counts = np.bincount(y_tr)
            baseline = np.full(y_te.shape, int(np.argmax(counts)))
            tree.fit(x[train_idx], y_tr)
            model_scores.append(weighted_f1(y_te, tree.predict(x[test_idx])))
            base_scores.append(weighted_f1(y_te, baseline))
        else:
            tree = DecisionTreeRegressor(max_depth=config.tree_depth, random_state=config.seed)
            tree.fit(x[train_idx], y_tr)
            model_scores.append(mae(tree.predict(x[test_idx]), y_te))
            base_scores.append(mae(np.full(y_te.shape, np.median(y_tr)), y_te))

    model_metric = float(np.mean(model_scores))
    baseline_metric = float(np.mean(base_scores))
    if np.ptp(x) == 0:
        # a constant feature carries no information; the tree degenerates to a constant predictor
        score = 0.0
    else:
        score = score_from_metrics(kind, model_metric, baseline_metric)
    return PpsResult(feature, target, score, kind, model_metric, baseline_metric)


@dataclass
class PpsMatrix:
    features: list[str]
    targets: list[str]
    cells: list[list[PpsResult | None]]

    def scores(self) -> np.ndarray:
        out = np.ones((len(self.features), len(self.targets)))
        for i, row in enumerate(self.cells):
            for j, cell in enumerate(row):
                if cell is not None:
                    out[i, j] = cell.score
        return out

    def target_scores(self, target: str) -> dict[str, float]:
        j = self.targets.index(target)
        return {f: float(s) for f, s in zip(self.features, self.scores()[:, j]) if f != target}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", *self.targets])
        for f, row in zip(self.features, self.scores()):
            w.writerow([f, *(f"{v:.6f}" for v in row)])
        return buf.getvalue()


def cell_seed(seed: int, i: int, j: int) -> int:
    return int(np.random.SeedSequence([seed, i, j]).generate_state(1)[0])


def pps_matrix(dataset: FlowDataset, targets: Sequence[str], config: PpsConfig = PpsConfig(),
               features: Sequence[str] | None = None) -> PpsMatrix:
    features = list(features) if features is not None else list(dataset.schema.names)
    cells: list[list[PpsResult | None]] = []
    for i, f in enumerate(features):
        row: list[PpsResult | None] = []
        for j, t in enumerate(targets):
            if f == t:
                row.append(None)
                continue
            cfg = PpsConfig(config.folds, config.tree_depth, cell_seed(config.seed, i, j))
            row.append(pps_score(dataset, f, t, cfg))
        cells.append(row)
    return PpsMatrix(features, list(targets), cells)


def select_features(scores: Mapping[str, float], threshold: float = 0.3) -> list[str]:
    if not scores:
        raise ValueError("no scores to select from")
    kept = [name for name, s in scores.items() if s > threshold]
    if not kept:
        best = max(scores.values())
        raise EmptySelection(f"no feature scores above {threshold} (best is {best:.3f}); lower the threshold")
    return sorted(kept, key=lambda n: (-scores[n], n))
