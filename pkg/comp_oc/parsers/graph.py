# comp_oc/parsers/graph.py
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import logfire

from comp_oc.models.graph import CompGraph, GraphNode, NodeFunction
from comp_oc.models.network import ShallowNet, SurrogateNet, Activation

INPUT_KIND = "input"

PathLike = Union[str, Path]


def graph_to_document(graph: CompGraph) -> Dict[str, Any]:
    """{nodes: [{id, layer, kind, params, R, m}], edges, input_dim, output_dim}."""
    nodes: List[Dict[str, Any]] = []
    for node in graph.nodes:
        if node.is_input:
            nodes.append({"id": node.id, "layer": 0, "kind": INPUT_KIND, "R": node.radius})
            continue
        fn = node.function
        nodes.append({
            "id": node.id,
            "layer": node.layer,
            "kind": fn.kind.value,
            "params": fn.params.model_dump(mode="json", exclude_defaults=True),
            "R": fn.domain_radius,
            "m": fn.smoothness_order,
            "in_dim": fn.in_dim,
        })
    return {
        "nodes": nodes,
        "edges": [[src, dst] for src, dst in graph.edges],
        "input_dim": graph.input_dim,
        "output_dim": graph.output_dim,
    }


def graph_from_document(doc: Dict[str, Any]) -> CompGraph:
    """Parse a graph document; in_dim defaults to the node's fan-in."""
    edges = [tuple(edge) for edge in doc.get("edges", [])]
    fan_in: Dict[str, int] = {}
    for _, dst in edges:
        fan_in[dst] = fan_in.get(dst, 0) + 1
    nodes = []
    for entry in doc.get("nodes", []):
        if entry.get("kind") == INPUT_KIND:
            nodes.append(GraphNode(id=entry.get("id"), layer=entry.get("layer", 0), radius=entry.get("R")))
            continue
        function = NodeFunction(
            kind=entry.get("kind"),
            params=entry.get("params", {}),
            in_dim=entry.get("in_dim", fan_in.get(entry.get("id"), 0)),
            domain_radius=entry.get("R"),
            smoothness_order=entry.get("m", 2),
        )
        nodes.append(GraphNode(id=entry.get("id"), layer=entry.get("layer"), function=function))
    return CompGraph(
        nodes=nodes,
        edges=edges,
        input_dim=doc.get("input_dim"),
        output_dim=doc.get("output_dim"),
    )


def load_graph(path: PathLike) -> CompGraph:
    with logfire.span("load_graph", path=str(path)):
        return graph_from_document(json.loads(Path(path).read_text(encoding="utf-8")))


def dump_graph(graph: CompGraph, path: PathLike) -> Path:
    path = Path(path)
    path.write_text(json.dumps(graph_to_document(graph), indent=2), encoding="utf-8")
    return path


def _hex(values: np.ndarray) -> Any:
    # float.hex keeps every bit of the fitted weights
    return np.vectorize(float.hex, otypes=[object])(np.asarray(values, dtype=float)).tolist()


def _unhex(values: Any) -> np.ndarray:
    return np.vectorize(float.fromhex, otypes=[float])(np.asarray(values, dtype=object))


def surrogate_to_document(surrogate: SurrogateNet) -> Dict[str, Any]:
    nets = {}
    for node_id, net in surrogate.node_nets.items():
        nets[node_id] = {
            "activation": net.activation.value,
            "width": net.width,
            "inner_weights": _hex(net.inner_weights),
            "inner_bias": _hex(net.inner_bias),
            "outer_weights": _hex(net.outer_weights),
            "sup_error": float.hex(net.sup_error),
            "condition": float.hex(net.condition),
        }
    return {
        "graph": graph_to_document(surrogate.graph),
        "width": surrogate.width,
        "total_size": surrogate.total_size,
        "nets": nets,
    }


def surrogate_from_document(doc: Dict[str, Any]) -> SurrogateNet:
    graph = graph_from_document(doc["graph"])
    nets = {}
    for node_id, entry in doc.get("nets", {}).items():
        nets[node_id] = ShallowNet(
            inner_weights=_unhex(entry["inner_weights"]).reshape(entry["width"], -1),
            inner_bias=_unhex(entry["inner_bias"]),
            outer_weights=_unhex(entry["outer_weights"]),
            activation=Activation(entry.get("activation", Activation.TANH.value)),
            width=entry["width"],
            sup_error=float.fromhex(entry.get("sup_error", "0x0.0p+0")),
            condition=float.fromhex(entry.get("condition", "0x0.0p+0")),
        )
    return SurrogateNet(
        graph=graph,
        width=doc.get("width", 0),
        node_nets=nets,
        total_size=doc.get("total_size", 0),
        fit_report={node_id: net.sup_error for node_id, net in nets.items()},
    )


def dump_surrogate(surrogate: SurrogateNet, path: PathLike) -> Path:
    path = Path(path)
    path.write_text(json.dumps(surrogate_to_document(surrogate)), encoding="utf-8")
    logfire.info("surrogate written", path=str(path), total_size=surrogate.total_size)
    return path


def load_surrogate(path: PathLike) -> SurrogateNet:
    with logfire.span("load_surrogate", path=str(path)):
        return surrogate_from_document(json.loads(Path(path).read_text(encoding="utf-8")))
