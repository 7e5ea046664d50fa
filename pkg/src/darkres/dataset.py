"""Flow-feature datasets: schema, CSV ingestion, z-score normalization,
stratified splitting and a Gaussian-blob generator for desk-scale runs."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import CategoryTooSmall, ConfigError, EmptyDataset, LabelOutOfRange, MissingColumn

# The 19 features retained by PPS selection on CICDarknet2020, with their scores.
PPS_REFERENCE_SCORES: dict[str, float] = {
    "Idle_Max": 0.471,
    "Idle_Mean": 0.444,
    "Idle_Min": 0.430,
    "Packet_Length_Max": 0.399,
    "Packet_Length_Mean": 0.383,
    "Average_Packet_Size": 0.379,
    "Flow_IAT_Max": 0.372,
    "Fwd_IAT_Max": 0.363,
    "Bwd_Packet_Length_Max": 0.349,
    "Fwd_Packet_Length_Max": 0.345,
    "Total_Length_of_Bwd_Packet": 0.340,
    "Bwd_Packet_Length_Mean": 0.338,
    "Bwd_Segment_Size_Avg": 0.338,
    "Total_Length_of_Fwd_Packet": 0.338,
    "Packet_Length_Std": 0.330,
    "Packet_Length_Variance": 0.330,
    "Fwd_Header_Length": 0.328,
    "Subflow_Bwd_Bytes": 0.320,
    "Fwd_Packet_Length_Mean": 0.313,
}

# CICFlowMeter statistics, 61 columns once identifiers/timestamps are dropped.
DEFAULT_FEATURES: tuple[str, ...] = (
    "Flow_Duration", "Total_Fwd_Packet", "Total_Bwd_packets",
    "Total_Length_of_Fwd_Packet", "Total_Length_of_Bwd_Packet",
    "Fwd_Packet_Length_Max", "Fwd_Packet_Length_Min", "Fwd_Packet_Length_Mean", "Fwd_Packet_Length_Std",
    "Bwd_Packet_Length_Max", "Bwd_Packet_Length_Min", "Bwd_Packet_Length_Mean", "Bwd_Packet_Length_Std",
    "Flow_Bytes/s", "Flow_Packets/s",
    "Flow_IAT_Mean", "Flow_IAT_Std", "Flow_IAT_Max", "Flow_IAT_Min",
    "Fwd_IAT_Total", "Fwd_IAT_Mean", "Fwd_IAT_Std", "Fwd_IAT_Max", "Fwd_IAT_Min",
    "Bwd_IAT_Total", "Bwd_IAT_Mean", "Bwd_IAT_Std", "Bwd_IAT_Max", "Bwd_IAT_Min",
    "Fwd_Header_Length", "Bwd_Header_Length", "Fwd_Packets/s", "Bwd_Packets/s",
    "Packet_Length_Min", "Packet_Length_Max", "Packet_Length_Mean", "Packet_Length_Std", "Packet_Length_Variance",
    "FIN_Flag_Count", "SYN_Flag_Count", "PSH_Flag_Count", "ACK_Flag_Count",
    "Down/Up_Ratio", "Average_Packet_Size", "Fwd_Segment_Size_Avg", "Bwd_Segment_Size_Avg",
    "Subflow_Fwd_Packets", "Subflow_Fwd_Bytes", "Subflow_Bwd_Packets", "Subflow_Bwd_Bytes",
    "FWD_Init_Win_Bytes", "Bwd_Init_Win_Bytes", "Fwd_Seg_Size_Min",
    "Active_Mean", "Active_Std", "Active_Max", "Active_Min",
    "Idle_Mean", "Idle_Std", "Idle_Max", "Idle_Min",
)

DEFAULT_CATEGORIES: tuple[tuple[int, str], ...] = (
    (0, "Audio-Stream"),
    (1, "Audio-Stream (crypto)"),
    (2, "Browsing"),
    (3, "Chat"),
    (4, "Email"),
    (5, "P2P"),
    (6, "File-Transfer"),
    (7, "File-Transfer (crypto)"),
    (8, "Video-Stream"),
    (9, "Video-Stream (crypto)"),
    (10, "VOIP"),
)

MISSING_POLICIES = ("drop-row", "impute-median")


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple[str, ...] = DEFAULT_FEATURES
    label_name: str = "Label"
    categories: tuple[tuple[int, str], ...] = DEFAULT_CATEGORIES

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "categories", tuple((int(i), str(n)) for i, n in self.categories))
        if any(not n for n in self.names):
            raise ConfigError("feature names must be non-empty")
        if len(set(self.names)) != len(self.names):
            raise ConfigError("feature names must be unique")
        ids = [i for i, _ in self.categories]
        if ids != list(range(len(ids))) or not ids:
            raise ConfigError("category ids must be exactly 0..K-1 in order")

    @property
    def n_features(self) -> int:
        return len(self.names)

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise MissingColumn(name) from None

    def select(self, names: Sequence[str]) -> "FeatureSchema":
        for n in names:
            self.index(n)
        return FeatureSchema(tuple(names), self.label_name, self.categories)

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "label_name": self.label_name,
            "categories": [[i, n] for i, n in self.categories],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(tuple(d["names"]), d.get("label_name", "Label"),
                   tuple(tuple(c) for c in d.get("categories", DEFAULT_CATEGORIES)))

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class FlowRecord:
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def invert(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.std + self.mean

    def select(self, idx) -> "NormStats":
        return NormStats(self.mean[idx].copy(), self.std[idx].copy())

    def to_dict(self, names: Sequence[str]) -> dict:
        return {"features": list(names), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FlowDataset:
    """Feature matrix ``X`` (n x D) and category ids ``y``. Immutable."""

    schema: FeatureSchema
    X: np.ndarray
    y: np.ndarray
    norm_stats: NormStats | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.schema.n_features:
            raise ConfigError(f"feature matrix shape {X.shape} does not match schema width {self.schema.n_features}")
        y = np.asarray(self.y, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise ConfigError("label vector length differs from row count")
        if y.size and (y.min() < 0 or y.max() >= self.schema.n_categories):
            bad = int(np.flatnonzero((y < 0) | (y >= self.schema.n_categories))[0])
            raise LabelOutOfRange(bad + 1, int(y[bad]))
        if self.norm_stats is not None and np.any(self.norm_stats.std <= 0):
            raise ConfigError("stored standard deviations must be positive")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def records(self) -> Iterator[FlowRecord]:
        for x, label in zip(self.X, self.y):
            yield FlowRecord(x, int(label))

    def column(self, name: str) -> np.ndarray:
        if name == self.schema.label_name:
            return self.y.astype(float)
        return self.X[:, self.schema.index(name)]

    def subset(self, idx) -> "FlowDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return FlowDataset(self.schema, self.X[idx], self.y[idx], self.norm_stats)

    def select_features(self, names: Sequence[str]) -> "FlowDataset":
        idx = [self.schema.index(n) for n in names]
        stats = self.norm_stats.select(idx) if self.norm_stats is not None else None
        return FlowDataset(self.schema.select(names), self.X[:, idx], self.y, stats)

    def label_counts(self) -> dict[int, int]:
        counts = np.bincount(self.y, minlength=self.schema.n_categories)
        return {i: int(c) for i, c in enumerate(counts)}


@dataclass
class LoadReport:
    path: str
    policy: str
    rows_read: int = 0
    rows_kept: int = 0
    dropped_rows: int = 0
    imputed_cells: int = 0
    per_column: dict[str, int] = field(default_factory=dict)

    def summary(self) -> str:
        lines = [
            f"source: {self.path}",
            f"policy: {self.policy}",
            f"rows_read: {self.rows_read}",
            f"rows_kept: {self.rows_kept}",
            f"dropped_rows: {self.dropped_rows}",
            f"imputed_cells: {self.imputed_cells}",
        ]
        for name in sorted(self.per_column):
            lines.append(f"invalid_cells[{name}]: {self.per_column[name]}")
        return "\n".join(lines) + "\n"


def _parse_cell(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return math.nan


def _label_lookup(schema: FeatureSchema) -> dict[str, int]:
    table = {}
    for i, name in schema.categories:
        table[str(i)] = i
        table[name.lower()] = i
    return table


def load_csv(path, schema: FeatureSchema | None = None, policy: str = "drop-row") -> tuple[FlowDataset, LoadReport]:
    """Read a headered CSV, matching columns by name.

    Labels may be given as category ids or category names (case-insensitive).
    Non-numeric, blank and non-finite feature cells are either dropped with
    their row or replaced by the column median of the valid cells.
    """
    schema = schema or FeatureSchema()
    if policy not in MISSING_POLICIES:
        raise ConfigError(f"unknown missing-value policy {policy!r}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataset(f"{path}: file is empty") from None
        pos = {h: i for i, h in enumerate(header)}
        for name in (*schema.names, schema.label_name):
            if name not in pos:
                raise MissingColumn(name)
        cols = [pos[n] for n in schema.names]
        label_col = pos[schema.label_name]
        labels = _label_lookup(schema)
        rows, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            raw = row[label_col].strip() if label_col < len(row) else ""
            key = raw.lower()
            if key not in labels:
                try:
                    key = str(int(float(raw)))
                except ValueError:
                    pass
            if key not in labels:
                raise LabelOutOfRange(lineno, raw)
            ys.append(labels[key])
            rows.append([_parse_cell(row[c]) if c < len(row) else math.nan for c in cols])

    report = LoadReport(str(path), policy, rows_read=len(rows))
    X = np.asarray(rows, dtype=float).reshape(len(rows), schema.n_features)
    y = np.asarray(ys, dtype=np.int64)
    bad = ~np.isfinite(X)
    for j in np.flatnonzero(bad.any(axis=0)):
        report.per_column[schema.names[j]] = int(bad[:, j].sum())

    if policy == "drop-row":
        keep = ~bad.any(axis=1)
        report.dropped_rows = int((~keep).sum())
        X, y = X[keep], y[keep]
    else:
        for j in np.flatnonzero(bad.any(axis=0)):
            valid = X[~bad[:, j], j]
            if valid.size == 0:
                raise EmptyDataset(f"{path}: column {schema.names[j]!r} has no valid cells to impute from")
            X[bad[:, j], j] = np.median(valid)
        report.imputed_cells = int(bad.sum())

    if X.shape[0] == 0:
        raise EmptyDataset(f"{path}: no valid rows")
    report.rows_kept = X.shape[0]
    return FlowDataset(schema, X, y), report


def write_csv(dataset: FlowDataset, path=None) -> str:
    """Serialize with the same dialect ``load_csv`` reads. Returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*dataset.schema.names, dataset.schema.label_name])
    for x, label in zip(dataset.X, dataset.y):
        w.writerow([repr(float(v)) for v in x] + [int(label)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def fit_normalize(dataset: FlowDataset) -> tuple[FlowDataset, NormStats]:
    if len(dataset) == 0:
        raise EmptyDataset("cannot normalize an empty dataset")
    mean = dataset.X.mean(axis=0)
    std = dataset.X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    stats = NormStats(mean, std)
    return apply_normalize(dataset, stats), stats


def apply_normalize(dataset: FlowDataset, stats: NormStats) -> FlowDataset:
    return FlowDataset(dataset.schema, stats.apply(dataset.X), dataset.y, stats)


def _largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    quotas = [n * f for f in fractions]
    counts = [int(math.floor(q)) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_indices(y: np.ndarray, fractions: Sequence[float], seed: int, n_categories: int | None = None):
    """Per-category proportional index partition; each part sorted ascending."""
    fractions = tuple(float(f) for f in fractions)
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be positive and sum to 1, got {fractions}")
    y = np.asarray(y)
    k = n_categories if n_categories is not None else int(y.max()) + 1
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in fractions]
    for c in range(k):
        members = np.flatnonzero(y == c)
        if members.size == 0:
            continue
        if members.size < 3:
            raise CategoryTooSmall(c, members.size)
        members = rng.permutation(members)
        start = 0
        for p, count in enumerate(_largest_remainder(members.size, fractions)):
            parts[p].extend(members[start:start + count].tolist())
            start += count
    return [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]


def stratified_split(dataset: FlowDataset, fractions=(0.7, 0.15, 0.15), seed: int = 0):
    parts = split_indices(dataset.y, fractions, seed, dataset.schema.n_categories)
    return tuple(dataset.subset(p) for p in parts)


@dataclass(frozen=True)
class SynthSpec:
    n_per_class: int = 100
    n_features: int = 20
    n_informative: int = 5
    class_count: int = 3
    separation: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.n_informative <= self.n_features:
            raise ConfigError("n_informative must lie in [0, n_features]")
        if self.class_count < 2:
            raise ConfigError("class_count must be at least 2")
        if self.n_per_class < 1:
            raise ConfigError("n_per_class must be positive")

    def informative_indices(self) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 1])
        return np.sort(rng.choice(self.n_features, size=self.n_informative, replace=False))

    def schema(self) -> FeatureSchema:
        width = max(2, len(str(self.n_features - 1)))
        return FeatureSchema(
            tuple(f"f{j:0{width}d}" for j in range(self.n_features)),
            "label",
            tuple((c, f"class_{c}") for c in range(self.class_count)),
        )


def synth_generate(spec: SynthSpec) -> FlowDataset:
    """Gaussian blobs: per-class centres on the informative coordinates."""
    rng = np.random.default_rng([spec.seed, 0])
    informative = spec.informative_indices()
    centers = rng.normal(size=(spec.class_count, spec.n_informative)) * spec.separation
    n = spec.n_per_class * spec.class_count
    X = rng.normal(size=(n, spec.n_features))
    y = np.repeat(np.arange(spec.class_count), spec.n_per_class)
    X[:, informative] += centers[y]
    return FlowDataset(spec.schema(), X, y)
