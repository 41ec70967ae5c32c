# comp_oc/parsers/instance.py
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict

import logfire

from comp_oc.models.ocp import OcpInstance, GeneralDynamics, SeparatedStageCost
from comp_oc.parsers.graph import graph_from_document, graph_to_document, PathLike


def instance_from_document(doc: Dict[str, Any]) -> OcpInstance:
    """Instance documents embed graph documents for every cost and for general dynamics."""
    data = dict(doc)
    dynamics = dict(data.get("dynamics", {}))
    if dynamics.get("type") == "general":
        dynamics["graph"] = graph_from_document(dynamics["graph"])
    data["dynamics"] = dynamics
    stage = dict(data.get("stage_cost", {"type": "zero"}))
    if stage.get("type") == "separated":
        stage["state_cost"] = graph_from_document(stage["state_cost"])
        stage["control_cost"] = graph_from_document(stage["control_cost"])
    data["stage_cost"] = stage
    if "terminal_cost" in data:
        data["terminal_cost"] = graph_from_document(data["terminal_cost"])
    if data.get("extended_from") is not None:
        data["extended_from"] = instance_from_document(data["extended_from"])
    return OcpInstance.model_validate(data)


def instance_to_document(inst: OcpInstance) -> Dict[str, Any]:
    doc: Dict[str, Any] = {
        "name": inst.name,
        "n": inst.n,
        "q": inst.q,
        "N": inst.N,
        "domain": inst.domain.model_dump(mode="json"),
        "terminal_cost": graph_to_document(inst.terminal_cost),
    }
    if isinstance(inst.dynamics, GeneralDynamics):
        doc["dynamics"] = {"type": "general", "graph": graph_to_document(inst.dynamics.graph)}
    else:
        doc["dynamics"] = inst.dynamics.model_dump(mode="json")
    if isinstance(inst.stage_cost, SeparatedStageCost):
        doc["stage_cost"] = {
            "type": "separated",
            "state_cost": graph_to_document(inst.stage_cost.state_cost),
            "control_cost": graph_to_document(inst.stage_cost.control_cost),
        }
    else:
        doc["stage_cost"] = {"type": "zero"}
    if inst.extended_from is not None:
        doc["extended_from"] = instance_to_document(inst.extended_from)
    return doc


def load_instance(path: PathLike) -> OcpInstance:
    with logfire.span("load_instance", path=str(path)):
        inst = instance_from_document(json.loads(Path(path).read_text(encoding="utf-8")))
        logfire.info("instance loaded", name=inst.name, n=inst.n, q=inst.q, N=inst.N)
        return inst


def dump_instance(inst: OcpInstance, path: PathLike) -> Path:
    path = Path(path)
    path.write_text(json.dumps(instance_to_document(inst), indent=2), encoding="utf-8")
    return path
