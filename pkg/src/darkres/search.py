"""Weight-agnostic evolutionary search over layered reservoir genomes.

Genomes are scored with shared weights (every connection set to one value
from a small palette) so fitness reflects topology rather than tuned weights,
then ranked by Pareto dominance on (mean fitness, worst fitness, complexity).
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import FlowDataset
from .errors import ConfigError, NoLegalMutation, ZeroSpectralRadius
from .reservoir import (PALETTE, ReservoirGenome, ReservoirModel, fit_readout, instantiate,
                        instantiate_shared, random_readout)

log = logging.getLogger(__name__)

OPERATORS = ("insert_node", "add_connection", "change_activation")
EVAL_MODES = ("readout_trained", "agnostic")


@dataclass(frozen=True)
class SearchConfig:
    population_size: int = 32
    generations: int = 20
    shared_weight_values: tuple[float, ...] = (-2.0, -1.0, -0.5, 0.5, 1.0, 2.0)
    eval_mode: str = "readout_trained"
    elitism_count: int = 2
    mutation_rates: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    seed: int = 0
    min_layers: int = 1
    max_layers: int = 4
    min_layer_size: int = 4
    max_layer_size: int = 24
    min_density: float = 0.1
    spectral_radius: float = 0.9
    input_scale: float = 1.0
    encode_mode: str = "single_shot"
    encode_steps: int = 10
    ridge_c: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "shared_weight_values", tuple(float(w) for w in self.shared_weight_values))
        object.__setattr__(self, "mutation_rates", tuple(float(r) for r in self.mutation_rates))
        if self.population_size < 1 or self.generations < 1:
            raise ConfigError("population_size and generations must be positive")
        if not 0 <= self.elitism_count < self.population_size:
            raise ConfigError("elitism_count must be in [0, population_size)")
        if len(self.mutation_rates) != len(OPERATORS) or any(r < 0 for r in self.mutation_rates):
            raise ConfigError(f"mutation_rates needs one non-negative rate per operator {OPERATORS}")
        if abs(sum(self.mutation_rates) - 1.0) > 1e-9:
            raise ConfigError("mutation_rates must sum to 1")
        if not self.shared_weight_values or 0.0 in self.shared_weight_values:
            raise ConfigError("shared_weight_values must be non-empty and non-zero")
        if self.eval_mode not in EVAL_MODES:
            raise ConfigError(f"eval_mode must be one of {EVAL_MODES}")
        if not 1 <= self.min_layers <= self.max_layers:
            raise ConfigError("layer count bounds must satisfy 1 <= min <= max")
        if not 1 <= self.min_layer_size <= self.max_layer_size:
            raise ConfigError("layer size bounds must satisfy 1 <= min <= max")
        if not 0 < self.min_density <= 1:
            raise ConfigError("min_density must lie in (0, 1]")

    def within_bounds(self, g: ReservoirGenome) -> bool:
        return (self.min_layers <= g.n_layers <= self.max_layers
                and all(self.min_layer_size <= s <= self.max_layer_size for s in g.layer_sizes)
                and self.min_density <= g.density <= 1.0)


@dataclass
class EvaluatedGenome:
    genome: ReservoirGenome
    fitness_mean: float
    fitness_min: float
    complexity: int
    rank: int = 0
    generation: int = 0
    front: int = 0
    samples: tuple[float, ...] = ()


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def nominal_complexity(genome: ReservoirGenome, n_inputs: int) -> int:
    s = genome.layer_sizes
    total = s[0] * n_inputs
    total += sum(max(1, int(round(genome.density * n * n))) for n in s)
    total += sum(s[l] * s[l - 1] for l in range(1, len(s)))
    total += sum(s[t] * s[f] for f, t in genome.inter_layer_skips)
    return total


def _accuracy(model: ReservoirModel, X, y) -> float:
    return float(np.mean(np.argmax(model.scores(X), axis=1) == y))


def evaluate(genome: ReservoirGenome, train: FlowDataset, val: FlowDataset, config: SearchConfig,
             eval_seed: int | None = None) -> EvaluatedGenome:
    """Mean and worst validation accuracy across the shared-weight palette."""
    k = train.schema.n_categories
    d = train.X.shape[1]
    eval_seed = genome.seed if eval_seed is None else eval_seed
    try:
        complexity = instantiate(genome, d).connection_count()
    except ZeroSpectralRadius:
        complexity = nominal_complexity(genome, d)
    accs = []
    for w_idx, w in enumerate(config.shared_weight_values):
        try:
            weights = instantiate_shared(genome, d, w)
        except ZeroSpectralRadius:
            accs.append(0.0)
            continue
        model = ReservoirModel(genome, weights, None, config.encode_mode, config.encode_steps, n_categories=k)
        if config.eval_mode == "agnostic":
            model.readout = random_readout(genome.n_units, k, derive_seed(eval_seed, w_idx))
        else:
            model.readout = fit_readout(model.encode(train.X), train.y, k, config.ridge_c, "ridge")
        accs.append(_accuracy(model, val.X, val.y))
    return EvaluatedGenome(genome, float(np.mean(accs)), float(np.min(accs)), complexity,
                           samples=tuple(accs))


def random_genome(rng: np.random.Generator, config: SearchConfig) -> ReservoirGenome:
    n = int(rng.integers(config.min_layers, config.max_layers + 1))
    sizes = tuple(int(v) for v in rng.integers(config.min_layer_size, config.max_layer_size + 1, size=n))
    leaks = tuple(float(v) for v in np.round(rng.uniform(0.1, 1.0, size=n), 6))
    acts = tuple(PALETTE[int(i)] for i in rng.integers(len(PALETTE), size=n))
    density = float(np.round(rng.uniform(config.min_density, 1.0), 6))
    return ReservoirGenome(sizes, leaks, acts, density, config.spectral_radius, config.input_scale,
                           (), int(rng.integers(2 ** 31)))


def _open_skips(genome: ReservoirGenome) -> list[tuple[int, int]]:
    n = genome.n_layers
    taken = set(genome.inter_layer_skips)
    return [(f, t) for f in range(n) for t in range(f + 2, n) if (f, t) not in taken]


def _legal(op: str, genome: ReservoirGenome, config: SearchConfig) -> bool:
    if op == "insert_node":
        return any(s < config.max_layer_size for s in genome.layer_sizes)
    if op == "add_connection":
        return genome.density < 1.0 or bool(_open_skips(genome))
    return len(PALETTE) > 1


def mutate(genome: ReservoirGenome, seed: int, config: SearchConfig) -> tuple[ReservoirGenome, str]:
    """Apply exactly one structural operator. Returns the child and the operator name."""
    rng = np.random.default_rng(seed)
    rates = np.array(config.mutation_rates)
    for i, op in enumerate(OPERATORS):
        if not _legal(op, genome, config):
            rates[i] = 0.0
    if rates.sum() == 0:
        raise NoLegalMutation("every mutation operator is blocked by the search bounds")
    op = OPERATORS[int(rng.choice(len(OPERATORS), p=rates / rates.sum()))]

    if op == "insert_node":
        growable = [l for l, s in enumerate(genome.layer_sizes) if s < config.max_layer_size]
        l = growable[int(rng.integers(len(growable)))]
        sizes = list(genome.layer_sizes)
        sizes[l] += 1
        child = replace(genome, layer_sizes=tuple(sizes))
    elif op == "add_connection":
        skips = _open_skips(genome)
        choices = (["density"] if genome.density < 1.0 else []) + (["skip"] if skips else [])
        kind = choices[int(rng.integers(len(choices)))]
        if kind == "density":
            l = int(rng.integers(genome.n_layers))
            n = genome.layer_sizes[l]
            child = replace(genome, density=float(min(1.0, genome.density + 1.0 / (n * n))))
        else:
            pair = skips[int(rng.integers(len(skips)))]
            child = replace(genome, inter_layer_skips=genome.inter_layer_skips + (pair,))
    else:
        l = int(rng.integers(genome.n_layers))
        options = [a for a in PALETTE if a != genome.activations[l]]
        acts = list(genome.activations)
        acts[l] = options[int(rng.integers(len(options)))]
        child = replace(genome, activations=tuple(acts))
    return child, op


def dominates(a: EvaluatedGenome, b: EvaluatedGenome) -> bool:
    ge = (a.fitness_mean >= b.fitness_mean and a.fitness_min >= b.fitness_min and a.complexity <= b.complexity)
    gt = (a.fitness_mean > b.fitness_mean or a.fitness_min > b.fitness_min or a.complexity < b.complexity)
    return ge and gt


def _genome_key(g: ReservoirGenome) -> tuple:
    return (g.seed, g.layer_sizes, g.leak_rates, g.activations, g.density, g.spectral_radius,
            g.input_scale, g.inter_layer_skips)


def non_dominated_fronts(pop: Sequence[EvaluatedGenome]) -> list[list[int]]:
    n = len(pop)
    beaten_by = [0] * n
    beats: list[list[int]] = [[] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j and dominates(pop[i], pop[j]):
                beats[i].append(j)
                beaten_by[j] += 1
    fronts = [[i for i in range(n) if beaten_by[i] == 0]]
    while True:
        nxt = []
        for i in fronts[-1]:
            for j in beats[i]:
                beaten_by[j] -= 1
                if beaten_by[j] == 0:
                    nxt.append(j)
        if not nxt:
            return fronts
        fronts.append(nxt)


def rank(population: Sequence[EvaluatedGenome]) -> list[EvaluatedGenome]:
    """Order by Pareto front, then mean fitness desc, complexity asc, seed asc."""
    if not population:
        raise ValueError("cannot rank an empty population")
    out = []
    for f, members in enumerate(non_dominated_fronts(population), start=1):
        members = sorted(members, key=lambda i: (-population[i].fitness_mean, population[i].complexity,
                                                 _genome_key(population[i].genome), i))
        for i in members:
            out.append(replace(population[i], front=f))
    for r, e in enumerate(out, start=1):
        e.rank = r
    return out


@dataclass
class SearchResult:
    best: EvaluatedGenome
    history: list[dict] = field(default_factory=list)
    population: list[EvaluatedGenome] = field(default_factory=list)

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["generation", "best_fitness", "mean_fitness", "best_complexity"])
        for h in self.history:
            w.writerow([h["generation"], f"{h['best_fitness']:.6f}", f"{h['mean_fitness']:.6f}", h["best_complexity"]])
        return buf.getvalue()

    def population_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "front", "genome", "fitness_mean", "fitness_min", "complexity", "generation",
                    "activations", "density", "skips", "seed"])
        for e in self.population:
            g = e.genome
            w.writerow([e.rank, e.front, g.notation(), f"{e.fitness_mean:.6f}", f"{e.fitness_min:.6f}",
                        e.complexity, e.generation, "|".join(g.activations), f"{g.density:.6f}",
                        "|".join(f"{a}>{b}" for a, b in g.inter_layer_skips), g.seed])
        return buf.getvalue()


def run_search(train: FlowDataset, val: FlowDataset, config: SearchConfig) -> SearchResult:
    rng = np.random.default_rng([config.seed, 0])

    def score(genome, generation, index):
        e = evaluate(genome, train, val, config, derive_seed(config.seed, generation, index))
        e.generation = generation
        return e

    population = [score(random_genome(rng, config), 0, i) for i in range(config.population_size)]
    history = []
    for gen in range(config.generations):
        if gen > 0:
            ranked = rank(population)
            elites = ranked[: config.elitism_count]
            n = len(ranked)
            weights = np.arange(n, 0, -1, dtype=float)
            probs = weights / weights.sum()
            children = []
            for i in range(config.population_size - len(elites)):
                parent = ranked[int(rng.choice(n, p=probs))].genome
                try:
                    child, _ = mutate(parent, int(rng.integers(2 ** 31)), config)
                except NoLegalMutation:
                    child = parent
                children.append(score(child, gen, i))
            population = [*elites, *children]
        ranked = rank(population)
        fits = [e.fitness_mean for e in population]
        history.append({
            "generation": gen,
            "best_fitness": max(fits),
            "mean_fitness": float(np.mean(fits)),
            "best_complexity": ranked[0].complexity,
        })
        log.info("generation %d: best %.4f mean %.4f", gen, max(fits), np.mean(fits))
    ranked = rank(population)
    return SearchResult(ranked[0], history, ranked)
