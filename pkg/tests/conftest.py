import numpy as np
import pytest

from darkres.dataset import SynthSpec, apply_normalize, fit_normalize, stratified_split, synth_generate


@pytest.fixture(scope="session")
def blobs():
    """Normalized train/val/test splits of separable 3-class blobs plus the generating spec."""
    spec = SynthSpec(n_per_class=200, n_features=20, n_informative=5, class_count=3, separation=10.0, seed=0)
    train, val, test = stratified_split(synth_generate(spec), (0.7, 0.15, 0.15), seed=1)
    train, stats = fit_normalize(train)
    return spec, train, apply_normalize(val, stats), apply_normalize(test, stats)


def nearest_centroid_accuracy(train, test):
    centers = np.array([train.X[train.y == c].mean(axis=0) for c in range(train.schema.n_categories)])
    d = ((test.X[:, None, :] - centers[None]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(d, axis=1) == test.y))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance check, then assert on it."""
    def record(label: str, ok: bool, detail: str = "", gate: bool = True):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        if not gate:
            line = f"INFO  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        if gate:
            assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
