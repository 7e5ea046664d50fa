"""Command-line entry point: datagen, ingest, pps, search, train, evaluate, explain.

Exit status: 0 success, 2 usage/config error, 3 data error (including a
refusal to overwrite existing artifacts), 4 computation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

from . import shapley
from .config import RunConfig, load_config, role_seed
from .dataset import (FeatureSchema, FlowDataset, NormStats, SynthSpec, apply_normalize, fit_normalize,
                      load_csv, stratified_split, synth_generate, write_csv)
from .errors import ArtifactExists, DarkresError, DataError
from .metrics import evaluate_predictions
from .pps import PpsConfig, pps_matrix, select_features
from .reservoir import ReservoirGenome, dumps_model, load_model, parse_genome, train_model
from .search import SearchConfig, run_search

log = logging.getLogger("darkres")

SPLITS = ("train", "val", "test")


def write_artifacts(out: Path, files: dict[str, str], overwrite: bool) -> None:
    """Write every file atomically, or none if any already exists without ``overwrite``."""
    out.mkdir(parents=True, exist_ok=True)
    if not overwrite:
        existing = sorted(name for name in files if (out / name).exists())
        if existing:
            raise ArtifactExists(f"refusing to overwrite {', '.join(existing)} in {out} (pass --overwrite)")
    for name, text in files.items():
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, out / name)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise


def _out(cfg: RunConfig) -> Path:
    return cfg.resolve(cfg.out)


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise DataError(f"{path} not found; run `darkres {hint}` first")
    return path


def _load_split(cfg: RunConfig, name: str) -> FlowDataset:
    out = _out(cfg)
    schema = FeatureSchema.load(_require(out / "schema.json", "ingest"))
    ds, _ = load_csv(_require(out / f"{name}.csv", "ingest"), schema, "drop-row")
    stats = json.loads((out / "norm_stats.json").read_text())
    return FlowDataset(schema, ds.X, ds.y, NormStats.from_dict(stats))


def _selected(cfg: RunConfig, ds: FlowDataset) -> FlowDataset:
    path = _out(cfg) / "selected_features.txt"
    if not path.exists():
        log.warning("no selected_features.txt; using all %d features", ds.schema.n_features)
        return ds
    names = [line.strip() for line in path.read_text().splitlines() if line.strip()]
    return ds.select_features(names)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_datagen(cfg: RunConfig, args) -> None:
    s = cfg.data.synth
    params = s.model_dump() if s is not None else {}
    spec = SynthSpec(seed=cfg.seed_for("synth"), **params)
    ds = synth_generate(spec)
    meta = {**spec.__dict__, "informative": [ds.schema.names[i] for i in spec.informative_indices()]}
    write_artifacts(_out(cfg), {
        "synth.csv": write_csv(ds),
        "synth_spec.json": _json(meta),
        "synth_schema.json": _json(ds.schema.to_dict()),
    }, args.overwrite)
    if not args.quiet:
        print(f"wrote {len(ds)} synthetic records to {_out(cfg) / 'synth.csv'}")


def cmd_ingest(cfg: RunConfig, args) -> None:
    files: dict[str, str] = {}
    if cfg.data.csv is not None:
        schema = FeatureSchema.load(cfg.resolve(cfg.data.schema_path)) if cfg.data.schema_path else FeatureSchema()
        path = cfg.resolve(cfg.data.csv)
        if not path.exists():
            raise DataError(f"data file not found: {path}")
        try:
            ds, report = load_csv(path, schema, cfg.data.missing)
        except DarkresError as exc:
            exc.args = (f"{path}: {exc}",)
            raise
        files["load_report.txt"] = report.summary()
    else:
        params = cfg.data.synth.model_dump() if cfg.data.synth is not None else {}
        spec = SynthSpec(seed=cfg.seed_for("synth"), **params)
        ds = synth_generate(spec)
        files["load_report.txt"] = f"source: synthetic {spec}\nrows_kept: {len(ds)}\n"

    parts = stratified_split(ds, cfg.data.fractions, cfg.seed_for("split"))
    train, stats = fit_normalize(parts[0])
    normalized = [train, apply_normalize(parts[1], stats), apply_normalize(parts[2], stats)]
    for name, part in zip(SPLITS, normalized):
        files[f"{name}.csv"] = write_csv(part)
    files["norm_stats.json"] = _json(stats.to_dict(ds.schema.names))
    files["schema.json"] = _json(ds.schema.to_dict())
    write_artifacts(_out(cfg), files, args.overwrite)
    if not args.quiet:
        print(files["load_report.txt"], end="")
        print("split sizes: " + ", ".join(f"{n}={len(p)}" for n, p in zip(SPLITS, normalized)))


def cmd_pps(cfg: RunConfig, args) -> None:
    train = _load_split(cfg, "train")
    label = train.schema.label_name
    targets = [label] + (list(train.schema.names) if cfg.pps.full_matrix else [])
    pcfg = PpsConfig(cfg.pps.folds, cfg.pps.tree_depth, cfg.seed_for("pps"))
    matrix = pps_matrix(train, targets, pcfg)
    selected = select_features(matrix.target_scores(label), cfg.pps.threshold)
    write_artifacts(_out(cfg), {
        "pps_matrix.csv": matrix.to_csv(),
        "selected_features.txt": "\n".join(selected) + "\n",
    }, args.overwrite)
    if not args.quiet:
        print(f"selected {len(selected)} of {train.schema.n_features} features (PPS > {cfg.pps.threshold})")


def _genome(cfg: RunConfig, text: str) -> ReservoirGenome:
    r = cfg.reservoir
    if text == "best" or text.endswith(".json"):
        path = _out(cfg) / "best_genome.json" if text == "best" else cfg.resolve(text)
        return ReservoirGenome.from_dict(json.loads(_require(path, "search").read_text()))
    return parse_genome(text, r.leak_rate, r.activation, density=r.density, spectral_radius=r.spectral_radius,
                        input_scale=r.input_scale, seed=cfg.seed_for("reservoir"))


def _report_files(prefix: str, report, name: str) -> dict[str, str]:
    return {f"{prefix}_report.csv": report.to_csv(name), f"{prefix}_confusion.csv": report.confusion_csv()}


def cmd_train(cfg: RunConfig, args) -> None:
    genome = _genome(cfg, args.genome or cfg.reservoir.genome)
    train = _selected(cfg, _load_split(cfg, "train"))
    test = _selected(cfg, _load_split(cfg, "test"))
    r = cfg.reservoir
    start = time.perf_counter()
    model = train_model(genome, train.X, train.y, train.schema.n_categories, ridge_c=r.ridge_c,
                        readout_mode=r.readout_mode, encode_mode=r.encode_mode, encode_steps=r.encode_steps,
                        norm_stats=train.norm_stats, feature_names=train.schema.names)
    elapsed = time.perf_counter() - start
    report = evaluate_predictions(test.y, model.predict_proba(test.X, normalized=True), elapsed)
    name = f"Reservoir {genome.notation()}"
    write_artifacts(_out(cfg), {"model.json": dumps_model(model), **_report_files("train", report, name)},
                    args.overwrite)
    if not args.quiet:
        print(name)
        print(report.describe(), end="")


def cmd_evaluate(cfg: RunConfig, args) -> None:
    model = load_model(_require(cfg.resolve(args.model) if args.model else _out(cfg) / "model.json", "train"))
    ds = _load_split(cfg, args.split).select_features(model.feature_names)
    report = evaluate_predictions(ds.y, model.predict_proba(ds.X, normalized=True))
    write_artifacts(_out(cfg), _report_files("eval", report, f"Reservoir {model.genome.notation()}"), args.overwrite)
    if not args.quiet:
        print(report.describe(), end="")


def cmd_search(cfg: RunConfig, args) -> None:
    train = _selected(cfg, _load_split(cfg, "train"))
    val = _selected(cfg, _load_split(cfg, "val"))
    s = cfg.search
    r = cfg.reservoir
    sc = SearchConfig(
        population_size=s.population_size, generations=s.generations,
        shared_weight_values=tuple(s.shared_weight_values), eval_mode=s.eval_mode,
        elitism_count=s.elitism_count, mutation_rates=s.mutation_rates, seed=cfg.seed_for("search"),
        min_layers=s.min_layers, max_layers=s.max_layers, min_layer_size=s.min_layer_size,
        max_layer_size=s.max_layer_size, min_density=s.min_density, spectral_radius=r.spectral_radius,
        input_scale=r.input_scale, encode_mode=r.encode_mode, encode_steps=r.encode_steps, ridge_c=r.ridge_c,
    )
    result = run_search(train, val, sc)
    best = result.best
    write_artifacts(_out(cfg), {
        "search_history.csv": result.history_csv(),
        "search_population.csv": result.population_csv(),
        "best_genome.json": _json(best.genome.to_dict()),
    }, args.overwrite)
    if not args.quiet:
        print(f"best {best.genome.notation()} fitness_mean={best.fitness_mean:.4f} "
              f"fitness_min={best.fitness_min:.4f} complexity={best.complexity}")


def cmd_explain(cfg: RunConfig, args) -> None:
    model = load_model(_require(cfg.resolve(args.model) if args.model else _out(cfg) / "model.json", "train"))
    names = list(model.feature_names)
    train = _load_split(cfg, "train").select_features(names)
    test = _load_split(cfg, "test").select_features(names)
    sh = cfg.shapley
    rows = args.rows if args.rows is not None else sh.rows
    bad = [r for r in rows if not 0 <= r < len(test)]
    if bad:
        raise DataError(f"explain rows {bad} are outside the test split (size {len(test)})")
    bg_seed = cfg.seed_for("background")
    sampled = shapley.BackgroundSet.sample(train.X, sh.background_size, bg_seed)
    background = shapley.BackgroundSet(sampled.samples, f"{len(sampled)} training rows, seed {bg_seed}")

    def proba(Z):
        return model.predict_proba(Z, normalized=True)

    m = len(names)
    exact = args.exact or sh.exact
    if exact and m > shapley.EXACT_LIMIT:
        print(f"notice: {m} features exceed the exact limit of {shapley.EXACT_LIMIT}; using sampled mode",
              file=sys.stderr)
        exact = False
    n_perm = sh.permutations or shapley.permutations_for_draws(sh.draws or 500, m)
    seed = cfg.seed_for("shapley")
    explanations = []
    for r in rows:
        if exact:
            e = shapley.exact_shapley(proba, test.X[r], background, feature_names=names)
        else:
            e = shapley.sampled_shapley(proba, test.X[r], background, n_permutations=n_perm,
                                        seed=role_seed(seed, f"row{r}"), feature_names=names)
        explanations.append(e)

    files = {
        "shap_bar.csv": shapley.plot_data_csv(shapley.export_plot_data(explanations, "bar")),
        "shap_beeswarm.csv": shapley.plot_data_csv(shapley.export_plot_data(explanations, "beeswarm")),
    }
    manifest = {
        "method": "exact" if exact else "sampled",
        "feature_space": "normalized (z-score with training statistics)",
        "background": background.origin,
        "background_size": len(background),
        "efficiency_tolerance": 1e-9 if exact else 0.02,
        "explanations": [],
    }
    for r, e in zip(rows, explanations):
        files[f"shap_force_row{r}.csv"] = shapley.plot_data_csv(shapley.export_plot_data([e], "force"))
        manifest["explanations"].append({
            "row": r,
            "target_category": e.target_category,
            "base_value": e.base_value,
            "prediction": e.prediction,
            "phi_sum": float(e.phi.sum()),
            "n_evaluations": e.n_evaluations,
            "n_permutations": e.extra.get("n_permutations"),
            "seed": e.seed,
        })
    files["shap_manifest.json"] = _json(manifest)
    write_artifacts(_out(cfg), files, args.overwrite)
    if not args.quiet:
        for name, value in shapley.global_importance(explanations)[:10]:
            print(f"{name:32s} {value:.6f}")


COMMANDS = {
    "datagen": cmd_datagen,
    "ingest": cmd_ingest,
    "pps": cmd_pps,
    "search": cmd_search,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
}


def _rows(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"rows must be comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", help="artifact directory (overrides the config)")
    common.add_argument("--overwrite", action="store_true", help="replace existing artifacts")
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="darkres", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("datagen", "ingest", "pps", "search"):
        sub.add_parser(name, parents=[common])
    p = sub.add_parser("train", parents=[common])
    p.add_argument("--genome", help='layer notation such as "13-11-9", a genome JSON file, or "best"')
    p = sub.add_parser("evaluate", parents=[common])
    p.add_argument("--model", help="model file (default: <out>/model.json)")
    p.add_argument("--split", choices=SPLITS, default="test")
    p = sub.add_parser("explain", parents=[common])
    p.add_argument("--model", help="model file (default: <out>/model.json)")
    p.add_argument("--rows", type=_rows, help="comma-separated test-split row indices")
    p.add_argument("--exact", action="store_true", help="exact enumeration (<= 15 features)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, {"seed": args.seed, "out": args.out})
        COMMANDS[args.command](cfg, args)
    except DarkresError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
