"""Multiclass evaluation: confusion matrix, macro precision/recall/F1/AUC,
Cohen's kappa and Matthews correlation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DimensionMismatch, LabelOutOfRange

REPORT_COLUMNS = ("Classifier", "Accuracy", "AUC", "Recall", "Precision", "F1", "Kappa", "MCC", "TT (Sec)")
KAPPA_RELIABLE = 0.70


def confusion_matrix(true_labels, predicted_labels, k: int) -> np.ndarray:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise DimensionMismatch("true and predicted label vectors differ in length")
    for arr in (t, p):
        bad = np.flatnonzero((arr < 0) | (arr >= k))
        if bad.size:
            raise LabelOutOfRange(int(bad[0]), int(arr[bad[0]]))
    C = np.zeros((k, k), dtype=np.int64)
    np.add.at(C, (t, p), 1)
    return C


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros_like(num, dtype=float), where=den > 0)


def binary_auc(scores, positives) -> float:
    """Rank-sum AUC; ties contribute one half through midranks."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    ranks = rankdata(scores)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def cohen_kappa(C: np.ndarray) -> float:
    C = np.asarray(C, dtype=float)
    n = C.sum()
    p_o = np.trace(C) / n
    p_e = float(np.sum(C.sum(axis=1) * C.sum(axis=0))) / (n * n)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def matthews_corrcoef(C: np.ndarray) -> float:
    C = np.asarray(C, dtype=float)
    s = C.sum()
    c = np.trace(C)
    t = C.sum(axis=1)
    p = C.sum(axis=0)
    cov_tp = c * s - t @ p
    cov_pp = s * s - p @ p
    cov_tt = s * s - t @ t
    den = np.sqrt(cov_pp * cov_tt)
    return float(cov_tp / den) if den > 0 else 0.0


@dataclass
class EvalReport:
    confusion: np.ndarray
    accuracy: float
    auc_macro: float
    recall_macro: float
    precision_macro: float
    f1_macro: float
    kappa: float
    mcc: float
    train_time_s: float = 0.0
    flags: list[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def row(self, name: str = "Reservoir") -> list[str]:
        vals = (self.accuracy, self.auc_macro, self.recall_macro, self.precision_macro,
                self.f1_macro, self.kappa, self.mcc)
        return [name, *(f"{v:.4f}" for v in vals), f"{self.train_time_s:.2f}"]

    def to_csv(self, name: str = "Reservoir") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerow(self.row(name))
        return buf.getvalue()

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        k = self.confusion.shape[0]
        w.writerow(["true\\pred", *range(k)])
        for i, r in enumerate(self.confusion):
            w.writerow([i, *(int(v) for v in r)])
        return buf.getvalue()

    def describe(self) -> str:
        verdict = "high reliability" if self.kappa >= KAPPA_RELIABLE else "below the 0.70 reliability bar"
        lines = [
            f"records: {self.total}",
            f"accuracy: {self.accuracy:.4f}",
            f"auc (macro, one-vs-rest): {self.auc_macro:.4f}",
            f"recall / precision / f1 (macro): {self.recall_macro:.4f} / {self.precision_macro:.4f} / {self.f1_macro:.4f}",
            f"kappa: {self.kappa:.4f} ({verdict})",
            f"mcc: {self.mcc:.4f}",
            f"train time: {self.train_time_s:.2f} s",
        ]
        lines += [f"note: {f}" for f in self.flags]
        return "\n".join(lines) + "\n"


def summary(confusion, scores, true_labels, train_time_s: float = 0.0) -> EvalReport:
    C = np.asarray(confusion, dtype=np.int64)
    k = C.shape[0]
    scores = np.asarray(scores, dtype=float)
    true_labels = np.asarray(true_labels, dtype=np.int64)
    if scores.shape != (true_labels.size, k) or C.sum() != true_labels.size:
        raise DimensionMismatch("confusion, score matrix and labels are inconsistent")
    if not np.allclose(scores.sum(axis=1), 1.0, atol=1e-6, rtol=0):
        raise DimensionMismatch("score rows must sum to 1")

    flags: list[str] = []
    tp = np.diag(C).astype(float)
    support = C.sum(axis=1).astype(float)
    predicted = C.sum(axis=0).astype(float)
    recall = _ratio(tp, support)
    precision = _ratio(tp, predicted)
    f1 = _ratio(2 * precision * recall, precision + recall)
    for c in range(k):
        if support[c] == 0:
            flags.append(f"category {c}: recall undefined (no true records), counted as 0")
        if predicted[c] == 0:
            flags.append(f"category {c}: precision undefined (never predicted), counted as 0")

    aucs = []
    for c in range(k):
        pos = true_labels == c
        if pos.all() or not pos.any():
            flags.append(f"category {c}: AUC degenerate (one-vs-rest needs both classes), skipped")
            continue
        aucs.append(binary_auc(scores[:, c], pos))

    return EvalReport(
        confusion=C,
        accuracy=float(np.trace(C) / C.sum()),
        auc_macro=float(np.mean(aucs)) if aucs else float("nan"),
        recall_macro=float(recall.mean()),
        precision_macro=float(precision.mean()),
        f1_macro=float(f1.mean()),
        kappa=cohen_kappa(C),
        mcc=matthews_corrcoef(C),
        train_time_s=float(train_time_s),
        flags=flags,
    )


def evaluate_predictions(true_labels, probabilities, train_time_s: float = 0.0) -> EvalReport:
    probabilities = np.asarray(probabilities, dtype=float)
    pred = np.argmax(probabilities, axis=1)
    C = confusion_matrix(true_labels, pred, probabilities.shape[1])
    return summary(C, probabilities, true_labels, train_time_s)
