# tests/test_parsers.py
import json
import pathlib

import numpy as np
import pytest
from pydantic import ValidationError

from comp_oc.exceptions import ConfigError
from comp_oc.functions.ocp import extend_system, cost_batch, lift_state
from comp_oc.functions.shallow_nn import assemble_surrogate, eval_surrogate
from comp_oc.models.graph import NodeKind, SmoothFn
from comp_oc.models.ocp import SeparatedStageCost
from comp_oc.parsers.config import load_config, SEED_ENV
from comp_oc.parsers.graph import (
    graph_to_document, graph_from_document, load_graph, dump_graph, dump_surrogate, load_surrogate,
)
from comp_oc.parsers.instance import load_instance, dump_instance, instance_to_document
from comp_oc.schemas.config import Stage
from conftest import sum_of_squares_graph, CONFIG_DIR

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


def test_example_instance_document(example2):
    assert (example2.n, example2.q, example2.N, example2.m) == (1, 1, 2, 2)
    node = example2.terminal_cost.node_map()["square"]
    assert node.function.kind == NodeKind.SCALAR_SMOOTH
    assert node.function.params.smooth == SmoothFn.POLYNOMIAL
    assert node.function.in_dim == 1
    assert node.function.smoothness_order == 2


def test_separated_stage_cost_document(lq3):
    assert isinstance(lq3.stage_cost, SeparatedStageCost)
    assert lq3.stage_cost.control_cost.node_map()["effort"].function.params.amplitude == 0.1
    assert lq3.terminal_cost.output_ids() == ["sum"]


def test_graph_document_keeps_structure(tmp_path):
    graph = sum_of_squares_graph(3, 1.5)
    loaded = load_graph(dump_graph(graph, tmp_path / "graph.json"))
    assert loaded == graph
    doc = graph_to_document(graph)
    assert doc["nodes"][0] == {"id": "x0", "layer": 0, "kind": "input", "R": 1.5}
    assert doc["nodes"][3]["params"] == {"smooth": "polynomial", "coefficients": [0.0, 0.0, 1.0]}


def test_in_dim_defaults_to_fan_in():
    graph = load_graph(FIXTURES / "squared_norm.json")
    fn = graph.node_map()["norm"].function
    assert fn.in_dim == 2
    assert fn.smoothness_order == 2
    assert fn.params.scale == 0.5


def test_node_without_radius_is_rejected():
    doc = json.loads((FIXTURES / "tanh_node.json").read_text())
    del doc["nodes"][1]["R"]
    with pytest.raises(ValidationError):
        graph_from_document(doc)


def test_unknown_node_kind_is_rejected():
    doc = json.loads((FIXTURES / "tanh_node.json").read_text())
    doc["nodes"][1]["kind"] = "relu"
    with pytest.raises(ValidationError):
        graph_from_document(doc)


def test_missing_horizon_names_the_field():
    with pytest.raises(ValidationError) as err:
        load_instance(FIXTURES / "missing_horizon.json")
    assert ("N",) in [e["loc"] for e in err.value.errors()]


def test_extended_instance_document_keeps_its_origin(lq3, tmp_path, rng):
    extended = extend_system(lq3)
    loaded = load_instance(dump_instance(extended, tmp_path / "extended.json"))
    assert instance_to_document(loaded) == instance_to_document(extended)
    assert loaded.extended_from.name == lq3.name
    X = rng.uniform(-0.05, 0.05, size=(5, 2))
    U = rng.uniform(-0.1, 0.1, size=(5, lq3.m))
    np.testing.assert_array_equal(cost_batch(loaded, lift_state(X), U), cost_batch(extended, lift_state(X), U))


def test_surrogate_document_is_bit_exact(tmp_path, rng):
    surrogate = assemble_surrogate(sum_of_squares_graph(2, 1.0), 12, seed=4)
    loaded = load_surrogate(dump_surrogate(surrogate, tmp_path / "surrogate.json"))
    X = rng.uniform(-1.0, 1.0, size=(30, 2))
    np.testing.assert_array_equal(eval_surrogate(loaded, X), eval_surrogate(surrogate, X))
    assert loaded.total_size == surrogate.total_size
    assert loaded.fit_report == surrogate.fit_report


def test_config_defaults_and_relative_instance():
    config, base_dir = load_config(CONFIG_DIR / "example2.json")
    assert base_dir == CONFIG_DIR
    assert (base_dir / config.instance).resolve() == (CONFIG_DIR.parent / "instances" / "example2.json").resolve()
    assert config.width_ceiling == 4096
    assert Stage.EXTEND not in config.stages
    assert config.refits == 3
    assert config.oracle.tolerance == 1e-12


def test_seed_precedence(monkeypatch):
    monkeypatch.setenv(SEED_ENV, "17")
    config, _ = load_config(CONFIG_DIR / "lq3.json")
    assert config.seed == 17
    config, _ = load_config(CONFIG_DIR / "lq3.json", {"seed": 5, "jobs": None})
    assert config.seed == 5
    assert config.jobs == 1


def test_non_integer_seed_env_is_a_config_error(monkeypatch):
    monkeypatch.setenv(SEED_ENV, "abc")
    with pytest.raises(ConfigError) as err:
        load_config(CONFIG_DIR / "lq3.json")
    assert err.value.fields == ["seed"]
    assert err.value.exit_code == 1


def test_config_errors_name_the_fields(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({
        "instance": "x.json", "epsilons": [0.5, 1.5], "stages": ["plan", "certify"], "colour": "red",
    }))
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert {"epsilons", "stages", "colour"} <= set(err.value.fields)


def test_malformed_config_reports_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "instance": "x.json",\n  "seed": \n}')
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert "line 4" in err.value.detail


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")


def test_widths_must_increase():
    with pytest.raises(ConfigError) as err:
        load_config(None, {"instance": "x.json", "widths": [8, 8, 16]})
    assert err.value.fields == ["widths"]
