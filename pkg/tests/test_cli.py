import json
import subprocess
import sys
import time

import numpy as np
import pytest
import yaml

from darkres.cli import main, write_artifacts
from darkres.config import load_config, role_seed
from darkres.errors import ArtifactExists, ConfigError
from darkres.reservoir import load_model

PIPELINE = ["ingest", "pps", "search", "train", "explain"]


def write_config(tmp_path, out="run", **sections):
    cfg = {
        "seed": 3,
        "out": str(tmp_path / out),
        "data": {"synth": {"n_per_class": 100, "n_features": 12, "n_informative": 4, "class_count": 3,
                           "separation": 10.0}},
        "search": {"population_size": 6, "generations": 3},
        "shapley": {"background_size": 20, "draws": 100, "rows": [0, 1]},
    }
    for key, value in sections.items():
        cfg.setdefault(key, {}).update(value) if isinstance(value, dict) else cfg.__setitem__(key, value)
    path = tmp_path / f"{out}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def run(cfg, *cmds, extra=()):
    for c in cmds:
        code = main([c, "--config", str(cfg), "--quiet", *extra])
        if code != 0:
            return code
    return 0


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 1\nreservoir: {leak_rate: 2.0}\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    assert main(["ingest", "--config", str(bad)]) == 2
    bad.write_text("unknown_section: {}\n")
    assert main(["ingest", "--config", str(bad)]) == 2
    assert main(["ingest", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert "error:" in capsys.readouterr().err


def test_flag_overrides_config(tmp_path):
    cfg = load_config(write_config(tmp_path), {"seed": 11, "out": None})
    assert cfg.seed == 11 and cfg.out.endswith("run")
    assert cfg.seed_for("split") == role_seed(11, "split") != role_seed(11, "search")


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 2


def test_missing_label_column(tmp_path, capsys):
    data = tmp_path / "flows.csv"
    data.write_text("a,b\n1,2\n3,4\n")
    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps({"names": ["a", "b"], "label_name": "Label",
                                  "categories": [[0, "benign"], [1, "darknet"]]}))
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"out": str(tmp_path / "o"), "data": {"csv": "flows.csv", "schema_path": "schema.json"}}))
    assert main(["ingest", "--config", str(cfg)]) == 3
    assert "Label" in capsys.readouterr().err
    assert not (tmp_path / "o" / "train.csv").exists()


def test_overwrite_refusal_is_all_or_nothing(tmp_path):
    out = tmp_path / "o"
    write_artifacts(out, {"a.txt": "1\n"}, False)
    with pytest.raises(ArtifactExists):
        write_artifacts(out, {"b.txt": "2\n", "a.txt": "3\n"}, False)
    assert not (out / "b.txt").exists() and (out / "a.txt").read_text() == "1\n"
    write_artifacts(out, {"a.txt": "3\n"}, True)
    assert (out / "a.txt").read_text() == "3\n"
    assert sorted(p.name for p in out.iterdir()) == ["a.txt"]  # no temp files left behind


def test_missing_prerequisite_is_data_error(tmp_path):
    assert run(write_config(tmp_path), "train") == 3


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    cfg = write_config(tmp)
    start = time.perf_counter()
    assert run(cfg, *PIPELINE) == 0
    return cfg, tmp / "run", time.perf_counter() - start


def test_pipeline_artifacts(pipeline):
    cfg, out, elapsed = pipeline
    assert elapsed < 60
    for name in ("train.csv", "val.csv", "test.csv", "norm_stats.json", "pps_matrix.csv", "selected_features.txt",
                 "search_history.csv", "best_genome.json", "model.json", "train_report.csv", "shap_bar.csv",
                 "shap_beeswarm.csv", "shap_force_row0.csv", "shap_force_row1.csv", "shap_manifest.json"):
        assert (out / name).exists(), name
    history = (out / "search_history.csv").read_text().splitlines()
    assert len(history) == 1 + 3
    report = (out / "train_report.csv").read_text().splitlines()
    assert report[0].startswith("Classifier,Accuracy,AUC")
    assert float(report[1].split(",")[1]) > 0.9


def test_overwrite_refused_then_allowed(pipeline):
    cfg, out, _ = pipeline
    before = (out / "pps_matrix.csv").read_text()
    assert run(cfg, "pps") == 3
    assert run(cfg, "pps", extra=["--overwrite"]) == 0
    assert (out / "pps_matrix.csv").read_text() == before


def test_manifest_budget(pipeline):
    _, out, _ = pipeline
    manifest = json.loads((out / "shap_manifest.json").read_text())
    n_features = len((out / "selected_features.txt").read_text().split())
    entry = manifest["explanations"][0]
    assert manifest["method"] == "sampled"
    assert entry["n_permutations"] == -(-100 // n_features)
    assert entry["n_evaluations"] == entry["n_permutations"] * n_features * 20
    assert abs(entry["phi_sum"] - (entry["prediction"] - entry["base_value"])) < 1e-9


def test_model_reload_and_evaluate(pipeline, tmp_path):
    cfg, out, _ = pipeline
    assert run(cfg, "evaluate", extra=["--overwrite"]) == 0
    train_row = (out / "train_report.csv").read_text().splitlines()[1].split(",")
    eval_row = (out / "eval_report.csv").read_text().splitlines()[1].split(",")
    # same test split, same model: every metric matches; evaluate records no training time
    assert train_row[:8] == eval_row[:8]
    assert eval_row[8] == "0.00"
    model = load_model(out / "model.json")
    assert model.genome.notation() == "(13-11-09)"


def test_genome_notation_and_best(pipeline, tmp_path):
    cfg, out, _ = pipeline
    assert run(cfg, "train", extra=["--genome", "(11-17-09)", "--out", str(tmp_path / "t")]) == 3  # no ingest there
    assert main(["train", "--config", str(cfg), "--quiet", "--overwrite", "--genome", "(11-17-09)"]) == 0
    assert load_model(out / "model.json").genome.layer_sizes == (11, 17, 9)
    assert main(["train", "--config", str(cfg), "--quiet", "--overwrite", "--genome", "best"]) == 0
    best = json.loads((out / "best_genome.json").read_text())
    assert list(load_model(out / "model.json").genome.layer_sizes) == best["layer_sizes"]
    assert main(["train", "--config", str(cfg), "--quiet", "--overwrite", "--genome", "13-x"]) == 2
    assert main(["train", "--config", str(cfg), "--quiet", "--overwrite"]) == 0


def test_explain_exact_and_bad_rows(pipeline):
    cfg, out, _ = pipeline
    assert main(["explain", "--config", str(cfg), "--quiet", "--overwrite", "--exact", "--rows", "2"]) == 0
    manifest = json.loads((out / "shap_manifest.json").read_text())
    assert manifest["method"] == "exact"
    assert abs(manifest["explanations"][0]["phi_sum"]
               - (manifest["explanations"][0]["prediction"] - manifest["explanations"][0]["base_value"])) < 1e-9
    assert main(["explain", "--config", str(cfg), "--quiet", "--overwrite", "--rows", "99999"]) == 3


def test_datagen(tmp_path):
    cfg = write_config(tmp_path)
    assert run(cfg, "datagen") == 0
    spec = json.loads((tmp_path / "run" / "synth_spec.json").read_text())
    assert len(spec["informative"]) == 4
    assert len((tmp_path / "run" / "synth.csv").read_text().splitlines()) == 1 + 300
    # the generated CSV and schema feed straight back into ingest in the same directory
    cfg2 = tmp_path / "again.yaml"
    cfg2.write_text(yaml.safe_dump({"out": "run", "data": {"csv": "run/synth.csv",
                                                          "schema_path": "run/synth_schema.json"}}))
    assert run(cfg2, "ingest") == 0
    assert "dropped_rows: 0" in (tmp_path / "run" / "load_report.txt").read_text()


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "darkres.cli", "pps", "--out", str(tmp_path / "none")],
                          capture_output=True, text=True)
    assert proc.returncode == 3
    assert "ingest" in proc.stderr
