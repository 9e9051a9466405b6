import json

import numpy as np
import pandas as pd
import pytest

from harmonbench import combat
from harmonbench.cli import main, tomllib
from harmonbench.combat import CombatConfig

RUN_TOML = """
seed = 3
out = "res"
schemes = ["unharmonized", "pretty", "wdh", "ttl", "notarget"]

[data]
path = "data.csv"

[data.schema]
site_col = "site"
target_col = "target"
feature_cols = ["f*"]
id_col = "id"

[folds]
k = 3

[predictor]
kind = "random_forest_classifier"
hyperparameters = {n_estimators = 10}

[pretty]
k_inner = 3
"""


@pytest.fixture
def data_csv(tmp_path):
    (tmp_path / "gen.toml").write_text('n_samples = 240\nn_sites = 3\nsignal = "both"\n')
    assert main(["generate", "--config", str(tmp_path / "gen.toml"), "--seed", "1",
                 "--out", str(tmp_path / "data.csv")]) == 0
    return tmp_path / "data.csv"


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return json.loads(err[0])


def test_generate_defaults(tmp_path):
    assert main(["generate", "--out", str(tmp_path / "d.csv")]) == 0
    df = pd.read_csv(tmp_path / "d.csv")
    assert df.shape == (1000, 21)
    assert {"site", "target", "id"} <= set(df.columns)
    assert main(["generate", "--out", str(tmp_path / "e.csv")]) == 0
    assert (tmp_path / "d.csv").read_bytes() == (tmp_path / "e.csv").read_bytes()


def test_generate_invalid_signal(tmp_path, capsys):
    (tmp_path / "g.toml").write_text('signal = "loud"\n')
    assert main(["generate", "--config", str(tmp_path / "g.toml"), "--out", str(tmp_path / "x.csv")]) == 2
    assert "loud" in last_error(capsys)["message"]


def test_run_writes_reports(tmp_path, data_csv):
    (tmp_path / "run.toml").write_text(RUN_TOML)
    assert main(["run", "--config", str(tmp_path / "run.toml")]) == 0
    out = tmp_path / "res"
    reports = sorted(p.name for p in out.glob("report_*.json"))
    assert len(reports) == 5
    table = pd.read_csv(out / "comparison.csv")
    assert list(table.columns) == ["scheme", "leakage", "auc", "bacc", "f1"] and len(table) == 5
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3 and len(manifest["config_hash"]) == 64 and manifest["version"]
    rep = json.loads((out / "report_ttl.json").read_text())
    assert rep["leakage"] is True and len(rep["folds"]) == 3


def test_run_json_config_equivalent(tmp_path, data_csv):
    (tmp_path / "run.toml").write_text(RUN_TOML)
    raw = tomllib.loads(RUN_TOML)
    raw["out"] = "res_json"
    (tmp_path / "run.json").write_text(json.dumps(raw))
    assert main(["run", "--config", str(tmp_path / "run.toml")]) == 0
    assert main(["run", "--config", str(tmp_path / "run.json")]) == 0
    assert (tmp_path / "res/comparison.csv").read_bytes() == (tmp_path / "res_json/comparison.csv").read_bytes()


def test_run_seed_override_changes_manifest(tmp_path, data_csv):
    (tmp_path / "run.toml").write_text(RUN_TOML.replace("seed = 3\n", ""))
    assert main(["run", "--config", str(tmp_path / "run.toml"), "--seed", "9", "--out", str(tmp_path / "r9")]) == 0
    assert json.loads((tmp_path / "r9/manifest.json").read_text())["seed"] == 9


def test_missing_dataset_path(tmp_path, capsys):
    (tmp_path / "run.toml").write_text(RUN_TOML.replace("data.csv", "absent.csv"))
    assert main(["run", "--config", str(tmp_path / "run.toml")]) == 2
    assert "absent.csv" in last_error(capsys)["message"]


def test_all_config_errors_reported(tmp_path, capsys):
    (tmp_path / "bad.toml").write_text('schemes = ["nope"]\ncolour = 1\n[data]\npath = "x.csv"\n[folds]\nk = 1\n')
    assert main(["run", "--config", str(tmp_path / "bad.toml")]) == 2
    err = last_error(capsys)
    assert err["exit_code"] == 2
    joined = " | ".join(err["messages"])
    for fragment in ("nope", "colour", "x.csv", "folds.k", "seed", "schema"):
        assert fragment in joined


def test_harmonize_fit_transform_consistent(tmp_path, data_csv):
    model, fit_out, tr_out = tmp_path / "m.json", tmp_path / "h_fit.csv", tmp_path / "h_tr.csv"
    assert main(["harmonize", "fit", "--data", str(data_csv), "--model", str(model), "--out", str(fit_out)]) == 0
    assert main(["harmonize", "transform", "--data", str(data_csv), "--model", str(model),
                 "--out", str(tr_out)]) == 0
    assert fit_out.read_bytes() == tr_out.read_bytes()
    src = pd.read_csv(data_csv, float_precision="round_trip")
    out = pd.read_csv(tr_out, float_precision="round_trip")
    assert list(out.columns) == list(src.columns) and out.shape == src.shape
    assert out["site"].equals(src["site"]) and out["id"].equals(src["id"])
    feats = [c for c in src.columns if c.startswith("f")]
    expect = combat.fit_transform(src[feats].to_numpy(), src["site"].to_numpy())[1]
    np.testing.assert_array_equal(out[feats].to_numpy(), expect)


def test_harmonize_no_eb(tmp_path, data_csv):
    model = tmp_path / "m.json"
    assert main(["harmonize", "fit", "--no-eb", "--data", str(data_csv), "--model", str(model),
                 "--out", str(tmp_path / "h.csv")]) == 0
    src = pd.read_csv(data_csv, float_precision="round_trip")
    feats = [c for c in src.columns if c.startswith("f")]
    expect = combat.fit_transform(src[feats].to_numpy(), src["site"].to_numpy(), None, CombatConfig(use_eb=False))[1]
    np.testing.assert_array_equal(pd.read_csv(tmp_path / "h.csv", float_precision="round_trip")[feats].to_numpy(), expect)


def test_harmonize_unknown_site(tmp_path, data_csv, capsys):
    df = pd.read_csv(data_csv, dtype=str)
    df[df["site"] != "site2"].to_csv(tmp_path / "two.csv", index=False)
    model = tmp_path / "m.json"
    assert main(["harmonize", "fit", "--data", str(tmp_path / "two.csv"), "--model", str(model)]) == 0
    capsys.readouterr()
    code = main(["harmonize", "transform", "--data", str(data_csv), "--model", str(model),
                 "--out", str(tmp_path / "x.csv")])
    assert code == 3
    assert "site2" in last_error(capsys)["message"]


def test_harmonize_bad_cell(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("site,a\nA,1\nA,x\nB,2\nB,3\n")
    code = main(["harmonize", "fit", "--data", str(tmp_path / "bad.csv"), "--model", str(tmp_path / "m.json")])
    assert code == 3
    assert "row 3" in last_error(capsys)["message"]


def test_sample_independence(tmp_path, data_csv):
    (tmp_path / "s.toml").write_text(
        'seed = 2\n[data]\npath = "data.csv"\n[data.schema]\nsite_col = "site"\ntarget_col = "target"\n'
        'feature_cols = ["f*"]\nid_col = "id"\n[data.independence]\n'
    )
    assert main(["sample", "--config", str(tmp_path / "s.toml"), "--out", str(tmp_path / "ind.csv")]) == 0
    df = pd.read_csv(tmp_path / "ind.csv")
    counts = df.groupby(["site", "target"]).size().unstack()
    assert (counts[0] == counts[1]).all()
    assert list(df.columns) == list(pd.read_csv(data_csv).columns)


def test_sample_dependence_generated(tmp_path):
    (tmp_path / "s.toml").write_text(
        'seed = 2\n[data.generate]\nsignal = "eos"\nseed = 4\n'
        '[data.dependence]\nmajority = "auto"\nminority_count = 3\n'
    )
    assert main(["sample", "--config", str(tmp_path / "s.toml"), "--out", str(tmp_path / "dep.csv")]) == 0
    df = pd.read_csv(tmp_path / "dep.csv")
    assert (df.groupby(["site", "target"]).size().unstack().min(axis=1) == 3).all()


def test_sample_needs_design(tmp_path, capsys):
    (tmp_path / "s.toml").write_text('seed = 2\n[data.generate]\nsignal = "eos"\n')
    assert main(["sample", "--config", str(tmp_path / "s.toml"), "--out", str(tmp_path / "o.csv")]) == 2
