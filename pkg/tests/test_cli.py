# tests/test_cli.py
import io
import json
import pathlib

import pandas as pd
import pytest

from comp_oc.main import main
from comp_oc.parsers.config import load_config, SEED_ENV
from comp_oc.parsers.instance import dump_instance
from comp_oc.routers.pipeline import run_pipeline, write_outputs, content_hash, REPORT_FILE, WEAK_ERROR_TABLE
from comp_oc.schemas.config import Stage
from comp_oc.schemas.reports import SweepRow
from conftest import INSTANCE_DIR, CONFIG_DIR, square_node, inputs
from comp_oc.models.graph import CompGraph

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


def csv_output(capsys) -> pd.DataFrame:
    return pd.read_csv(io.StringIO(capsys.readouterr().out))


def test_print_config_shows_defaults(capsys):
    assert main(["--config", str(CONFIG_DIR / "example2.json"), "--seed", "9", "--print-config"]) == 0
    config = json.loads(capsys.readouterr().out)
    assert config["seed"] == 9
    assert config["width_ceiling"] == 4096
    assert config["oracle"]["mode"] == "lq"


def test_print_config_uses_env_seed(capsys, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "21")
    assert main(["--config", str(CONFIG_DIR / "lq3.json"), "--print-config"]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 21


def test_invalid_instance_exits_with_config_error(capsys):
    assert main(["certify", str(FIXTURES / "missing_horizon.json")]) == 1
    assert "N" in capsys.readouterr().err


def test_missing_command_and_config_is_a_usage_error(capsys):
    assert main([]) == 1
    assert "required" in capsys.readouterr().err


def test_certify_reports_convex_only(capsys):
    assert main(["certify", str(INSTANCE_DIR / "example2.json"), "--samples", "32"]) == 0
    assert json.loads(capsys.readouterr().out)["verdict"] == "ConvexOnly"


def test_certify_failure_exit_code(example2, tmp_path, capsys):
    concave = CompGraph(nodes=inputs(["x"], 1.0) + [square_node("sq", 1.02, amplitude=-1.0)],
                        edges=[("x", "sq")], input_dim=1, output_dim=1)
    path = dump_instance(example2.model_copy(update={"terminal_cost": concave}), tmp_path / "concave.json")
    assert main(["certify", str(path), "--samples", "16"]) == 2
    assert json.loads(capsys.readouterr().out)["verdict"] == "NotCertified"


def test_features_table(capsys):
    assert main(["features", str(INSTANCE_DIR / "example2.json")]) == 0
    table = csv_output(capsys)
    assert list(table.columns) == ["graph", "r_max", "lambda", "l_max", "v_g"]
    rows = table.set_index("graph")
    assert rows.loc["f", "v_g"] == 0
    assert rows.loc["f", "lambda"] == 0.0
    assert rows.loc["g", "r_max"] == 0.5
    assert rows.loc["g", "v_g"] == 1


def test_extend_writes_instance(tmp_path, capsys):
    out = tmp_path / "extended.json"
    assert main(["extend", str(INSTANCE_DIR / "lq3.json"), "--output", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["n"] == 3
    assert doc["dynamics"]["type"] == "general"
    assert doc["extended_from"]["name"] == "lq3"


def test_extend_rejects_zero_stage_cost(capsys):
    assert main(["extend", str(INSTANCE_DIR / "example2.json")]) == 4


def test_calibrate_prints_domain(capsys):
    assert main(["calibrate", str(INSTANCE_DIR / "example2.json")]) == 0
    domain = json.loads(capsys.readouterr().out)
    assert len(domain["U0"]) == 2
    assert domain["R"] >= 2.0


def test_plan_only_sweep(tmp_path, capsys):
    argv = ["--out", str(tmp_path), "sweep", str(INSTANCE_DIR / "example2.json"), "--epsilon", "0.5,0.25", "--plan-only"]
    assert main(argv) == 0
    table = csv_output(capsys)
    assert list(table.columns) == list(SweepRow.model_fields)
    assert table["epsilon"].tolist() == [0.5, 0.25]
    assert (table["k_bar"] >= 1).all()
    assert (tmp_path / REPORT_FILE).exists()
    assert (tmp_path / "ledger.csv").exists()


def test_infeasible_plan_exit_code(tmp_path, capsys):
    config = tmp_path / "tight.json"
    config.write_text(json.dumps({
        "instance": str(INSTANCE_DIR / "example2.json"),
        "stages": ["calibrate", "features", "plan"],
        "epsilons": [0.01],
        "width_ceiling": 1,
        "out": str(tmp_path / "out"),
    }))
    assert main(["--config", str(config)]) == 3


def test_fitrate_stays_under_rate_bound(capsys):
    for fixture in ("squared_norm.json", "tanh_node.json"):
        assert main(["fitrate", str(FIXTURES / fixture), "--widths", "8,16,32,64,128"]) == 0
        table = csv_output(capsys)
        assert table["n_w"].tolist() == [8, 16, 32, 64, 128]
        assert (table["sup_error"] <= table["bound"]).all()


def test_pipeline_hash_is_deterministic(tmp_path):
    overrides = {"stages": [Stage.CERTIFY, Stage.CALIBRATE, Stage.FEATURES, Stage.PLAN], "epsilons": [0.5]}
    config, base_dir = load_config(CONFIG_DIR / "example2.json", overrides)
    first = run_pipeline(config, base_dir)
    second = run_pipeline(config, base_dir)
    assert first.content_hash == second.content_hash
    assert first.content_hash == content_hash(second)
    changed, _ = load_config(CONFIG_DIR / "example2.json", {**overrides, "seed": 1})
    assert run_pipeline(changed, base_dir).content_hash != first.content_hash


@pytest.mark.slow
@pytest.mark.parametrize("name, verdict", [("example2", "ConvexOnly"), ("lq3", "StrictlyConvex")])
def test_full_pipeline_meets_every_epsilon(name, verdict, tmp_path):
    assert main(["--config", str(CONFIG_DIR / f"{name}.json"), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / REPORT_FILE).read_text())
    assert report["certificate"]["verdict"] == verdict
    assert report["extended"] == (name == "lq3")
    table = pd.read_csv(tmp_path / WEAK_ERROR_TABLE)
    assert table["epsilon"].tolist() == [0.5, 0.25, 0.1]
    assert (table["weak_err_max"] <= table["epsilon"]).all()
    for result in report["results"]:
        assert result["weak"]["bound_holds"]
        assert result["weak"]["size_bound_holds"]


@pytest.mark.slow
def test_rerun_reproduces_the_report(tmp_path):
    config, base_dir = load_config(CONFIG_DIR / "example2.json", {"epsilons": [0.5]})
    first = run_pipeline(config, base_dir)
    write_outputs(first, tmp_path)
    second = run_pipeline(config, base_dir)
    assert json.loads((tmp_path / REPORT_FILE).read_text())["content_hash"] == second.content_hash


@pytest.mark.slow
@pytest.mark.parametrize("command, scored", [("synth", False), ("eval", True)])
def test_single_epsilon_commands(command, scored, tmp_path, capsys):
    argv = ["--out", str(tmp_path), command, str(INSTANCE_DIR / "lq3.json"), "--epsilon", "0.5"]
    assert main(argv) == 0
    table = csv_output(capsys)
    assert table["epsilon"].tolist() == [0.5]
    report = json.loads((tmp_path / REPORT_FILE).read_text())
    assert report["extended"]
    assert len(report["results"]) == 1
    assert (report["results"][0]["weak"] is not None) == scored
    if scored:
        assert table["weak_err_max"].iloc[0] <= 0.5
