import numpy as np
import pytest

from harmonbench.data import Dataset, TaskKind


def make_dataset(n_per_site=20, sites=("A", "B", "C"), p=4, task="classification", seed=0, shift=1.0):
    rng = np.random.default_rng(seed)
    site_arr = np.repeat(np.array(sites), n_per_site)
    n = len(site_arr)
    offsets = {s: rng.normal(0, shift, p) for s in sites}
    X = rng.standard_normal((n, p)) + np.array([offsets[s] for s in site_arr])
    if task == "classification":
        y = np.tile(np.array(["0", "1"]), n // 2 + 1)[:n]
        X[y == "1", 0] += 1.5
        return Dataset(X, site_arr, y, TaskKind.classification(["0", "1"]))
    y = rng.uniform(20, 80, n)
    X[:, 0] += (y - 50) / 10
    return Dataset(X, site_arr, y, TaskKind.regression())


@pytest.fixture
def cls_dataset():
    return make_dataset()


@pytest.fixture
def reg_dataset():
    return make_dataset(task="regression")


@pytest.fixture
def write_csv(tmp_path):
    def _write(text, name="data.csv"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return _write


# ------------------------------------------------------------ acceptance ----

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, title, ok, detail)``."""
    def _record(number, title, ok, detail):
        ACCEPTANCE[number] = (title, bool(ok), detail)
        print(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}")
        assert ok, f"criterion {number} failed: {detail}"
    return _record


def pytest_terminal_summary(terminalreporter):
    from harmonbench.schemes import LEAKY, SCHEMES, audit_counts

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            title, ok, detail = ACCEPTANCE[number]
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}")
    clean = {s: audit_counts[s] for s in SCHEMES if s not in LEAKY}
    leaky = {s: audit_counts[s] for s in sorted(LEAKY)}
    terminalreporter.write_line(
        f"audit over the whole session: leakage-free {clean} (must be 0), leakage-prone {leaky}"
    )
    if any(clean.values()):
        terminalreporter.write_line("[FAIL] a leakage-free scheme passed test targets to a transform")
        terminalreporter._session.exitstatus = 1
