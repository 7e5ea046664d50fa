"""Run configuration: one YAML (or JSON) file, validated before any work starts."""

from __future__ import annotations

import zlib
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SynthSection(_Section):
    n_per_class: int = Field(100, ge=1)
    n_features: int = Field(20, ge=1)
    n_informative: int = Field(5, ge=0)
    class_count: int = Field(3, ge=2)
    separation: float = Field(10.0, ge=0)


class DataSection(_Section):
    csv: Optional[str] = None
    synth: Optional[SynthSection] = None
    schema_path: Optional[str] = None
    missing: Literal["drop-row", "impute-median"] = "drop-row"
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)

    @field_validator("fractions")
    @classmethod
    def _fractions(cls, v):
        if any(f <= 0 for f in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("fractions must be positive and sum to 1")
        return v

    @model_validator(mode="after")
    def _source(self):
        if self.csv is not None and self.synth is not None:
            raise ValueError("give either data.csv or data.synth, not both")
        return self


class PpsSection(_Section):
    threshold: float = 0.3
    folds: int = Field(4, ge=2)
    tree_depth: Optional[int] = Field(None, ge=1)
    full_matrix: bool = False


class ReservoirSection(_Section):
    genome: str = "13-11-9"
    leak_rate: float = Field(0.5, gt=0, le=1)
    activation: Literal["tanh", "sigmoid", "relu", "identity", "sine", "gaussian"] = "tanh"
    density: float = Field(0.2, gt=0, le=1)
    spectral_radius: float = Field(0.9, gt=0, lt=1)
    input_scale: float = Field(1.0, gt=0)
    encode_mode: Literal["single_shot", "sequence"] = "single_shot"
    encode_steps: int = Field(10, ge=1)
    ridge_c: float = Field(1.0, gt=0)
    readout_mode: Literal["ridge", "pseudoinverse"] = "ridge"


class SearchSection(_Section):
    population_size: int = Field(32, ge=1)
    generations: int = Field(20, ge=1)
    elitism_count: int = Field(2, ge=0)
    shared_weight_values: list[float] = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0]
    eval_mode: Literal["readout_trained", "agnostic"] = "readout_trained"
    mutation_rates: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    min_layers: int = Field(1, ge=1)
    max_layers: int = Field(4, ge=1)
    min_layer_size: int = Field(4, ge=1)
    max_layer_size: int = Field(24, ge=1)
    min_density: float = Field(0.1, gt=0, le=1)

    @model_validator(mode="after")
    def _bounds(self):
        if self.elitism_count >= self.population_size:
            raise ValueError("elitism_count must be smaller than population_size")
        if abs(sum(self.mutation_rates) - 1.0) > 1e-9:
            raise ValueError("mutation_rates must sum to 1")
        if self.min_layers > self.max_layers or self.min_layer_size > self.max_layer_size:
            raise ValueError("min bounds exceed max bounds")
        return self


class ShapleySection(_Section):
    background_size: int = Field(100, ge=1)
    draws: Optional[int] = Field(500, ge=1)
    permutations: Optional[int] = Field(None, ge=1)
    rows: list[int] = [0]
    exact: bool = False


class RunConfig(_Section):
    seed: int = 0
    out: str = "darkres-out"
    data: DataSection = DataSection()
    pps: PpsSection = PpsSection()
    reservoir: ReservoirSection = ReservoirSection()
    search: SearchSection = SearchSection()
    shapley: ShapleySection = ShapleySection()
    base_dir: Optional[str] = Field(None, exclude=True)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if not p.is_absolute() and self.base_dir:
            p = Path(self.base_dir) / p
        return p

    def seed_for(self, role: str) -> int:
        """Seed for one random process, derived from the global seed and a fixed role tag."""
        return role_seed(self.seed, role)


def role_seed(seed: int, role: str) -> int:
    return int(np.random.SeedSequence([int(seed), zlib.crc32(role.encode())]).generate_state(1)[0])


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    raw: dict = {}
    base = None
    if path is not None:
        p = Path(path)
        try:
            raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: cannot parse config: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
        base = str(p.resolve().parent)
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid config:\n{exc}") from None
    cfg.base_dir = base
    return cfg
