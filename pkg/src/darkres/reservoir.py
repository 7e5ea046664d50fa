"""Stacked leaky reservoirs with echo-state scaling and a closed-form linear readout.

Layer 1 is driven by the input, layer l > 1 by the current state of layer
l - 1 (plus any skip connections from lower layers):

    x1(t) = (1 - a1) x1(t-1) + a1 g1(W_in u(t) + R1 x1(t-1) + b1)
    xl(t) = (1 - al) xl(t-1) + al gl(W_l x(l-1)(t) + Rl xl(t-1) + bl)

The readout reads the concatenated states of all layers.
"""

from __future__ import annotations

import base64
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit

from .dataset import NormStats
from .errors import (ConfigError, DimensionMismatch, SingularSystem, UntrainedModel,
                     ZeroSpectralRadius)

ACTIVATIONS = {
    "tanh": np.tanh,
    "sigmoid": expit,
    "relu": lambda z: np.maximum(z, 0.0),
    "identity": lambda z: z,
    "sine": np.sin,
    "gaussian": lambda z: np.exp(-z * z),
}
PALETTE = tuple(ACTIVATIONS)

ENCODE_MODES = ("single_shot", "sequence")
READOUT_MODES = ("ridge", "pseudoinverse", "agnostic")
FORMAT_VERSION = 1

# sub-stream tags so that resizing one layer leaves the others' draws untouched
_INPUT, _RECURRENT, _MASK, _INTER, _BIAS, _SKIP = range(6)


@dataclass(frozen=True)
class ReservoirGenome:
    layer_sizes: tuple[int, ...]
    leak_rates: tuple[float, ...]
    activations: tuple[str, ...]
    density: float = 0.2
    spectral_radius: float = 0.9
    input_scale: float = 1.0
    inter_layer_skips: tuple[tuple[int, int], ...] = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        object.__setattr__(self, "leak_rates", tuple(float(a) for a in self.leak_rates))
        object.__setattr__(self, "activations", tuple(self.activations))
        object.__setattr__(self, "inter_layer_skips",
                           tuple(sorted({(int(f), int(t)) for f, t in self.inter_layer_skips})))
        n = len(self.layer_sizes)
        if n < 1 or len(self.leak_rates) != n or len(self.activations) != n:
            raise ConfigError("layer_sizes, leak_rates and activations must share a length >= 1")
        if any(s < 1 for s in self.layer_sizes):
            raise ConfigError("layer sizes must be positive")
        if any(not 0 < a <= 1 for a in self.leak_rates):
            raise ConfigError("leak rates must lie in (0, 1]")
        if any(g not in ACTIVATIONS for g in self.activations):
            raise ConfigError(f"activations must come from {PALETTE}")
        if not 0 < self.density <= 1:
            raise ConfigError("density must lie in (0, 1]")
        if not 0 < self.spectral_radius < 1:
            raise ConfigError("spectral_radius must lie in (0, 1)")
        if self.input_scale <= 0:
            raise ConfigError("input_scale must be positive")
        for f, t in self.inter_layer_skips:
            if not 0 <= f < t < n:
                raise ConfigError(f"skip ({f}, {t}) must satisfy 0 <= from < to < {n}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes)

    @property
    def n_units(self) -> int:
        return sum(self.layer_sizes)

    def notation(self) -> str:
        return "(" + "-".join(f"{s:02d}" for s in self.layer_sizes) + ")"

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "leak_rates": list(self.leak_rates),
            "activations": list(self.activations),
            "density": self.density,
            "spectral_radius": self.spectral_radius,
            "input_scale": self.input_scale,
            "inter_layer_skips": [list(p) for p in self.inter_layer_skips],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReservoirGenome":
        return cls(
            tuple(d["layer_sizes"]), tuple(d["leak_rates"]), tuple(d["activations"]),
            float(d.get("density", 0.2)), float(d.get("spectral_radius", 0.9)),
            float(d.get("input_scale", 1.0)),
            tuple(tuple(p) for p in d.get("inter_layer_skips", ())), int(d.get("seed", 0)),
        )


def parse_genome(text: str, leak_rate: float = 0.5, activation: str = "tanh", **kwargs) -> ReservoirGenome:
    """Build a genome from layer notation such as ``"(13-11-09)"`` or ``"13-11-9"``."""
    body = text.strip()
    if not re.fullmatch(r"\(?\s*\d+(\s*-\s*\d+)*\s*\)?", body):
        raise ConfigError(f"cannot parse genome notation {text!r}")
    sizes = tuple(int(s) for s in re.findall(r"\d+", body))
    n = len(sizes)
    return ReservoirGenome(sizes, (leak_rate,) * n, (activation,) * n, **kwargs)


@dataclass
class ReservoirWeights:
    input_matrix: np.ndarray
    recurrent: list[np.ndarray]
    inter_layer: list[np.ndarray | None]
    skips: dict[tuple[int, int], np.ndarray]
    biases: list[np.ndarray]

    def connection_count(self) -> int:
        mats = [self.input_matrix, *self.recurrent, *(m for m in self.inter_layer if m is not None),
                *self.skips.values()]
        return int(sum(np.count_nonzero(m) for m in mats))


def spectral_radius(W: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(W))))


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed, *tags])


def _sparse_recurrent(genome: ReservoirGenome, layer: int) -> np.ndarray:
    n = genome.layer_sizes[layer]
    k = max(1, int(round(genome.density * n * n)))
    for attempt in range(2):
        raw = _rng(genome.seed, _RECURRENT, layer, attempt).uniform(-1.0, 1.0, size=(n, n))
        keep = _rng(genome.seed, _MASK, layer, attempt).permutation(n * n)[:k]
        mask = np.zeros(n * n, dtype=bool)
        mask[keep] = True
        W = np.where(mask.reshape(n, n), raw, 0.0)
        rho = spectral_radius(W)
        if rho > 1e-12:
            return W * (genome.spectral_radius / rho)
    raise ZeroSpectralRadius(f"layer {layer}: sparsified recurrent matrix has zero spectral radius")


def instantiate(genome: ReservoirGenome, n_inputs: int) -> ReservoirWeights:
    """Draw all weights uniformly on [-1, 1] from the genome seed."""
    sizes = genome.layer_sizes
    W_in = _rng(genome.seed, _INPUT).uniform(-1.0, 1.0, size=(sizes[0], n_inputs)) * genome.input_scale
    recurrent = [_sparse_recurrent(genome, l) for l in range(genome.n_layers)]
    inter: list[np.ndarray | None] = [None]
    for l in range(1, genome.n_layers):
        inter.append(_rng(genome.seed, _INTER, l).uniform(-1.0, 1.0, size=(sizes[l], sizes[l - 1])))
    skips = {
        (f, t): _rng(genome.seed, _SKIP, f, t).uniform(-1.0, 1.0, size=(sizes[t], sizes[f]))
        for f, t in genome.inter_layer_skips
    }
    biases = [_rng(genome.seed, _BIAS, l).uniform(-1.0, 1.0, size=sizes[l]) for l in range(genome.n_layers)]
    return ReservoirWeights(W_in, recurrent, inter, skips, biases)


def instantiate_shared(genome: ReservoirGenome, n_inputs: int, value: float) -> ReservoirWeights:
    """Weight-agnostic instance: every non-zero entry becomes ``value`` times its sign.

    Recurrent matrices are rescaled back to the genome's spectral radius so the
    echo-state scaling survives the substitution.
    """
    base = instantiate(genome, n_inputs)

    def share(m):
        return value * np.sign(m)

    recurrent = []
    for l, R in enumerate(base.recurrent):
        S = share(R)
        rho = spectral_radius(S)
        if rho <= 1e-12:
            raise ZeroSpectralRadius(f"layer {l}: shared-weight recurrent matrix is nilpotent")
        recurrent.append(S * (genome.spectral_radius / rho))
    return ReservoirWeights(
        share(base.input_matrix),
        recurrent,
        [None if m is None else share(m) for m in base.inter_layer],
        {k: share(m) for k, m in base.skips.items()},
        [share(b) for b in base.biases],
    )


@dataclass(frozen=True)
class ReadoutModel:
    beta: np.ndarray
    ridge_c: float = 1.0
    mode: str = "ridge"

    @property
    def n_categories(self) -> int:
        return self.beta.shape[1]


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    T = np.zeros((labels.size, k))
    T[np.arange(labels.size), labels] = 1.0
    return T


def fit_readout(H, labels, n_categories: int | None = None, ridge_c: float = 1.0,
                mode: str = "ridge") -> ReadoutModel:
    """Closed-form readout: ridge ``(I/C + H'H)^-1 H'T`` or Moore-Penrose ``H+ T``."""
    H = np.asarray(H, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if H.ndim != 2 or H.shape[0] < 1 or labels.shape != (H.shape[0],):
        raise DimensionMismatch(f"hidden matrix {H.shape} and labels {labels.shape} disagree")
    if not np.all(np.isfinite(H)):
        raise SingularSystem("hidden matrix contains non-finite values")
    k = n_categories if n_categories is not None else int(labels.max()) + 1
    T = one_hot(labels, k)
    if mode == "pseudoinverse":
        beta = np.linalg.pinv(H, rcond=1e-12) @ T
    elif mode == "ridge":
        if not ridge_c > 0:
            raise ConfigError("ridge mode requires ridge_c > 0")
        A = np.eye(H.shape[1]) / ridge_c + H.T @ H
        B = H.T @ T
        try:
            beta = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), B)
        except np.linalg.LinAlgError:
            beta = np.linalg.lstsq(A, B, rcond=None)[0]
    else:
        raise ConfigError(f"unknown readout mode {mode!r}")
    return ReadoutModel(beta, float(ridge_c), mode)


def random_readout(n_hidden: int, n_categories: int, seed: int) -> ReadoutModel:
    beta = np.random.default_rng(seed).normal(size=(n_hidden, n_categories))
    return ReadoutModel(beta, 1.0, "agnostic")


def softmax(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    z = np.exp(s - s.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


@dataclass
class ReservoirModel:
    genome: ReservoirGenome
    weights: ReservoirWeights
    readout: ReadoutModel | None = None
    encode_mode: str = "single_shot"
    encode_steps: int = 10
    norm_stats: NormStats | None = None
    feature_names: tuple[str, ...] = ()
    n_categories: int | None = None
    _g: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.encode_mode not in ENCODE_MODES:
            raise ConfigError(f"encode_mode must be one of {ENCODE_MODES}")
        if self.encode_steps < 1:
            raise ConfigError("encode_steps must be positive")
        self._g = [ACTIVATIONS[a] for a in self.genome.activations]

    @property
    def n_inputs(self) -> int:
        return self.weights.input_matrix.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.genome.n_units

    def _check_input(self, U) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        if U.shape[-1] != self.n_inputs:
            raise DimensionMismatch(f"input width {U.shape[-1]} != {self.n_inputs}")
        return U

    def zero_state(self, n: int | None = None) -> list[np.ndarray]:
        shape = (lambda s: (s,)) if n is None else (lambda s: (n, s))
        return [np.zeros(shape(s)) for s in self.genome.layer_sizes]

    def advance(self, states: Sequence[np.ndarray], u) -> list[np.ndarray]:
        """One time step for every layer. Works on single vectors or row batches."""
        u = self._check_input(u)
        w = self.weights
        if len(states) != self.genome.n_layers:
            raise DimensionMismatch("one state vector per layer is required")
        for s, size in zip(states, self.genome.layer_sizes):
            if np.shape(s)[-1] != size:
                raise DimensionMismatch(f"state width {np.shape(s)[-1]} != layer size {size}")
        new: list[np.ndarray] = []
        for l, (x_prev, a, g) in enumerate(zip(states, self.genome.leak_rates, self._g)):
            drive = self._feed(l, u, new) + x_prev @ w.recurrent[l].T + w.biases[l]
            new.append((1.0 - a) * x_prev + a * g(drive))
        return new

    def _feed(self, l: int, u: np.ndarray, current: list[np.ndarray]) -> np.ndarray:
        w = self.weights
        if l == 0:
            drive = u @ w.input_matrix.T
        else:
            drive = current[l - 1] @ w.inter_layer[l].T
        for (f, t), S in w.skips.items():
            if t == l:
                drive = drive + current[f] @ S.T
        return drive

    def encode(self, X, mode: str | None = None, initial_state: Sequence[np.ndarray] | None = None,
               steps: int | None = None) -> np.ndarray:
        """Hidden representation of normalized flows (concatenated layer states)."""
        X = self._check_input(X)
        mode = mode or self.encode_mode
        if mode == "single_shot":
            out: list[np.ndarray] = []
            for l, g in enumerate(self._g):
                out.append(g(self._feed(l, X, out) + self.weights.biases[l]))
            return np.concatenate(out, axis=-1)
        if mode != "sequence":
            raise ConfigError(f"encode mode must be one of {ENCODE_MODES}")
        n = None if X.ndim == 1 else X.shape[0]
        states = list(initial_state) if initial_state is not None else self.zero_state(n)
        for _ in range(steps or self.encode_steps):
            states = self.advance(states, X)
        return np.concatenate(states, axis=-1)

    def scores(self, Z) -> np.ndarray:
        if self.readout is None:
            raise UntrainedModel("model has no readout; fit one or attach a random readout")
        return self.encode(Z) @ self.readout.beta

    def predict_proba(self, X, normalized: bool = False) -> np.ndarray:
        X = self._check_input(X)
        if not normalized:
            if self.norm_stats is None:
                raise UntrainedModel("model carries no normalization statistics")
            X = self.norm_stats.apply(X)
        return softmax(self.scores(X))

    def predict(self, flow) -> tuple[int, np.ndarray, np.ndarray]:
        """Category, raw scores and softmax probabilities for one raw flow vector."""
        if self.readout is None:
            raise UntrainedModel("model has no readout")
        if self.norm_stats is None:
            raise UntrainedModel("model carries no normalization statistics")
        z = self.norm_stats.apply(self._check_input(flow))
        s = self.scores(z)
        return int(np.argmax(s)), s, softmax(s)

    def predict_labels(self, X, normalized: bool = False) -> np.ndarray:
        X = self._check_input(X)
        if not normalized:
            if self.norm_stats is None:
                raise UntrainedModel("model carries no normalization statistics")
            X = self.norm_stats.apply(X)
        return np.argmax(self.scores(X), axis=-1)


def train_model(genome: ReservoirGenome, X, y, n_categories: int, *, ridge_c: float = 1.0,
                readout_mode: str = "ridge", encode_mode: str = "single_shot", encode_steps: int = 10,
                norm_stats: NormStats | None = None, feature_names: Sequence[str] = ()) -> ReservoirModel:
    """Instantiate the genome and fit its readout on normalized training rows."""
    X = np.asarray(X, dtype=float)
    model = ReservoirModel(genome, instantiate(genome, X.shape[1]), None, encode_mode, encode_steps,
                           norm_stats, tuple(feature_names), n_categories)
    model.readout = fit_readout(model.encode(X), y, n_categories, ridge_c, readout_mode)
    return model


def _pack(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _unpack(d: dict) -> np.ndarray:
    return np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").reshape(d["shape"]).copy()


def model_to_dict(model: ReservoirModel) -> dict:
    w = model.weights
    return {
        "format": "darkres-reservoir-model",
        "format_version": FORMAT_VERSION,
        "genome": model.genome.to_dict(),
        "encode_mode": model.encode_mode,
        "encode_steps": model.encode_steps,
        "feature_names": list(model.feature_names),
        "n_categories": model.n_categories,
        "weights": {
            "input_matrix": _pack(w.input_matrix),
            "recurrent": [_pack(m) for m in w.recurrent],
            "inter_layer": [None if m is None else _pack(m) for m in w.inter_layer],
            "skips": [{"from": f, "to": t, "matrix": _pack(m)} for (f, t), m in sorted(w.skips.items())],
            "biases": [_pack(b) for b in w.biases],
        },
        "readout": None if model.readout is None else {
            "beta": _pack(model.readout.beta), "ridge_c": model.readout.ridge_c, "mode": model.readout.mode,
        },
        "norm_stats": None if model.norm_stats is None else {
            "mean": _pack(model.norm_stats.mean), "std": _pack(model.norm_stats.std),
        },
    }


def model_from_dict(d: dict) -> ReservoirModel:
    if d.get("format") != "darkres-reservoir-model":
        raise ConfigError("not a reservoir model file")
    if d.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported model format version {d.get('format_version')}")
    w = d["weights"]
    weights = ReservoirWeights(
        _unpack(w["input_matrix"]),
        [_unpack(m) for m in w["recurrent"]],
        [None if m is None else _unpack(m) for m in w["inter_layer"]],
        {(s["from"], s["to"]): _unpack(s["matrix"]) for s in w["skips"]},
        [_unpack(b) for b in w["biases"]],
    )
    r = d["readout"]
    readout = None if r is None else ReadoutModel(_unpack(r["beta"]), r["ridge_c"], r["mode"])
    ns = d["norm_stats"]
    stats = None if ns is None else NormStats(_unpack(ns["mean"]), _unpack(ns["std"]))
    return ReservoirModel(ReservoirGenome.from_dict(d["genome"]), weights, readout, d["encode_mode"],
                          d["encode_steps"], stats, tuple(d["feature_names"]), d["n_categories"])


def dumps_model(model: ReservoirModel) -> str:
    return json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n"


def save_model(model: ReservoirModel, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def load_model(path) -> ReservoirModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def with_readout(model: ReservoirModel, readout: ReadoutModel) -> ReservoirModel:
    return replace(model, readout=readout)
