"""
Evaluation, differentiation and validation of compositional graphs.
"""
from typing import Optional, List, Dict, Callable, Sequence, Tuple, Union

import numpy as np
import logfire

from comp_oc.exceptions import DomainViolation
from comp_oc.functions import catalog
from comp_oc.functions.common import sobol_box, box_corners
from comp_oc.models.graph import CompGraph, GraphNode, NodeFunction, NodeKind, NodeParams
from comp_oc.schemas.reports import ValidationReport, EdgeRange

DOMAIN_TOLERANCE = 1e-9
CONTAINMENT_MARGIN = 0.01
FIT_GROWTH = 1.02
CORNER_DIM_LIMIT = 12

NodeOverride = Callable[[np.ndarray], np.ndarray]


def evaluation_order(graph: CompGraph, order: Optional[Sequence[str]] = None) -> List[str]:
    """Layer-respecting order of the function nodes.

    The default sorts by (layer, position in the node list); a custom order is
    accepted when every node comes after all of its parents.
    """
    nodes = graph.node_map()
    if order is None:
        position = {node.id: i for i, node in enumerate(graph.nodes)}
        return sorted(
            (node.id for node in graph.nodes if not node.is_input),
            key=lambda node_id: (nodes[node_id].layer, position[node_id]),
        )
    order = list(order)
    expected = {node.id for node in graph.nodes if not node.is_input}
    if set(order) != expected or len(order) != len(expected):
        raise ValueError("custom order must list every function node exactly once")
    seen = set(graph.input_ids())
    parents = graph.parents()
    for node_id in order:
        if any(src not in seen for src in parents[node_id]):
            raise ValueError(f"node '{node_id}' is evaluated before one of its parents")
        seen.add(node_id)
    return order


def as_batch(graph: CompGraph, x) -> Tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != graph.input_dim:
        raise ValueError(f"expected {graph.input_dim} inputs, got {X.shape[1]}")
    return X, single


def _check_box(node_id: str, Z: np.ndarray, radius: float):
    if Z.size == 0:
        return
    worst = float(np.max(np.abs(Z)))
    if worst > radius + DOMAIN_TOLERANCE:
        raise DomainViolation(node_id, worst, radius)


def _check_inputs(graph: CompGraph, X: np.ndarray):
    for i, node in enumerate(n for n in graph.nodes if n.is_input):
        _check_box(node.id, X[:, i], node.radius)


def propagate(
        graph: CompGraph,
        X: np.ndarray,
        order: Optional[Sequence[str]] = None,
        check_domain: bool = True,
        overrides: Optional[Dict[str, NodeOverride]] = None,
) -> Dict[str, np.ndarray]:
    """Forward propagation of a batch; returns the value of every node, shape (n,)."""
    if check_domain:
        _check_inputs(graph, X)
    values: Dict[str, np.ndarray] = {
        node_id: X[:, i] for i, node_id in enumerate(graph.input_ids())
    }
    nodes = graph.node_map()
    parents = graph.parents()
    for node_id in evaluation_order(graph, order):
        node = nodes[node_id]
        Z = np.stack([values[src] for src in parents[node_id]], axis=1)
        if check_domain:
            _check_box(node_id, Z, node.function.domain_radius)
        if overrides and node_id in overrides:
            values[node_id] = overrides[node_id](Z)
        else:
            values[node_id] = catalog.value(node.function, Z)
    return values


def eval_graph(graph: CompGraph, x, order: Optional[Sequence[str]] = None, check_domain: bool = True) -> np.ndarray:
    """f(x) for a single point (d,) -> (q,) or a batch (n, d) -> (n, q)."""
    X, single = as_batch(graph, x)
    values = propagate(graph, X, order=order, check_domain=check_domain)
    out = np.stack([values[node_id] for node_id in graph.output_ids()], axis=1)
    return out[0] if single else out


def _forward_derivatives(graph: CompGraph, X: np.ndarray, second: bool, check_domain: bool):
    n, d = X.shape
    if check_domain:
        _check_inputs(graph, X)
    values, jac, hess = {}, {}, {}
    eye = np.eye(d)
    for i, node_id in enumerate(graph.input_ids()):
        values[node_id] = X[:, i]
        jac[node_id] = np.broadcast_to(eye[i], (n, d))
        if second:
            hess[node_id] = np.zeros((n, d, d))
    nodes = graph.node_map()
    parents = graph.parents()
    for node_id in evaluation_order(graph):
        fn = nodes[node_id].function
        srcs = parents[node_id]
        Z = np.stack([values[src] for src in srcs], axis=1)
        if check_domain:
            _check_box(node_id, Z, fn.domain_radius)
        values[node_id] = catalog.value(fn, Z)
        g = catalog.gradient(fn, Z)
        Js = np.stack([jac[src] for src in srcs], axis=1)
        jac[node_id] = np.einsum("nk,nkd->nd", g, Js)
        if second:
            Hs = np.stack([hess[src] for src in srcs], axis=1)
            H = catalog.hessian(fn, Z)
            hess[node_id] = (
                np.einsum("nk,nkab->nab", g, Hs)
                + np.einsum("nkl,nka,nlb->nab", H, Js, Js)
            )
    return values, jac, hess


def grad_graph(graph: CompGraph, x, check_domain: bool = True) -> np.ndarray:
    """Jacobian: (q, d) for a single point, (n, q, d) for a batch."""
    X, single = as_batch(graph, x)
    _, jac, _ = _forward_derivatives(graph, X, second=False, check_domain=check_domain)
    out = np.stack([jac[node_id] for node_id in graph.output_ids()], axis=1)
    return out[0] if single else out


def hess_graph(graph: CompGraph, x, check_domain: bool = True) -> np.ndarray:
    """Second derivatives: (q, d, d) for a single point, (n, q, d, d) for a batch."""
    X, single = as_batch(graph, x)
    _, _, hess = _forward_derivatives(graph, X, second=True, check_domain=check_domain)
    out = np.stack([hess[node_id] for node_id in graph.output_ids()], axis=1)
    return out[0] if single else out


def sample_inputs(graph: CompGraph, n_samples: int, seed: int = 0) -> np.ndarray:
    """Sobol points over the graph's input box, plus its corners in low dimension."""
    radii = graph.input_radii()
    X = sobol_box(radii, graph.input_dim, n_samples, seed=seed)
    if graph.input_dim <= CORNER_DIM_LIMIT:
        X = np.vstack([X, box_corners(radii, graph.input_dim)])
    return X


def validate_graph(graph: CompGraph, n_samples: int = 1024, seed: int = 0) -> ValidationReport:
    """Sampled range of every edge against the target box (1% margin)."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    with logfire.span("validate_graph", nodes=len(graph.nodes), n_samples=n_samples, seed=seed):
        X = sample_inputs(graph, n_samples, seed)
        values = propagate(graph, X, check_domain=False)
        nodes = graph.node_map()
        edges = []
        for src, dst in graph.edges:
            radius = nodes[dst].function.domain_radius
            low, high = float(values[src].min()), float(values[src].max())
            edges.append(EdgeRange(
                source=src,
                target=dst,
                low=low,
                high=high,
                radius=radius,
                contained=max(abs(low), abs(high)) <= (1.0 - CONTAINMENT_MARGIN) * radius,
            ))
        report = ValidationReport(
            samples=len(X), seed=seed, edges=edges, passed=all(e.contained for e in edges)
        )
        if not report.passed:
            logfire.warning(
                "graph range check failed",
                failures=[(e.source, e.target) for e in report.failures()],
            )
        return report


def with_radii(
        graph: CompGraph,
        node_radii: Dict[str, float],
        input_radius: Union[None, float, Sequence[float]] = None,
) -> CompGraph:
    """Copy of the graph with new node domain radii and (optionally) input box radii."""
    input_ids = graph.input_ids()
    if input_radius is not None:
        radii = np.broadcast_to(np.asarray(input_radius, dtype=float), (len(input_ids),))
        input_map = dict(zip(input_ids, (float(r) for r in radii)))
    else:
        input_map = {}
    nodes = []
    for node in graph.nodes:
        if node.is_input and node.id in input_map:
            node = node.model_copy(update={"radius": input_map[node.id]})
        elif not node.is_input and node.id in node_radii:
            fn = node.function.model_copy(update={"domain_radius": float(node_radii[node.id])})
            node = node.model_copy(update={"function": fn})
        nodes.append(node)
    return CompGraph(nodes=nodes, edges=graph.edges, input_dim=graph.input_dim, output_dim=graph.output_dim)


def fit_domains(
        graph: CompGraph,
        input_radius: Union[None, float, Sequence[float]] = None,
        n_samples: int = 1024,
        seed: int = 0,
        only: Optional[Sequence[str]] = None,
) -> CompGraph:
    """Grow node radii until every sampled node input sits inside its box.

    Radii never shrink; a radius that needs growing becomes 1.02 times the
    sampled magnitude of the node's inputs.
    """
    if input_radius is not None:
        graph = with_radii(graph, {}, input_radius)
    X = sample_inputs(graph, n_samples, seed)
    values = propagate(graph, X, check_domain=False)
    nodes = graph.node_map()
    parents = graph.parents()
    grown = {}
    for node_id, srcs in parents.items():
        node = nodes[node_id]
        if node.is_input or (only is not None and node_id not in only):
            continue
        magnitude = max(float(np.max(np.abs(values[src]))) for src in srcs)
        if magnitude >= (1.0 - CONTAINMENT_MARGIN) * node.function.domain_radius:
            grown[node_id] = max(FIT_GROWTH * magnitude, node.function.domain_radius)
    if grown:
        logfire.info("grew node domains", nodes=sorted(grown))
    return with_radii(graph, grown)


def lipschitz_estimate(graph: CompGraph, n_samples: int = 1024, seed: int = 0) -> float:
    """Sampled sup of the Jacobian spectral norm over the input box, times 1.1."""
    X = sample_inputs(graph, n_samples, seed)
    J = grad_graph(graph, X, check_domain=False)
    return 1.1 * float(np.max(np.linalg.norm(J, ord=2, axis=(1, 2))))


def affine_node_function(weights: Sequence[float], radius: float, bias: float = 0.0) -> NodeFunction:
    return NodeFunction(
        kind=NodeKind.AFFINE,
        params=NodeParams(weights=[float(w) for w in weights], bias=float(bias)),
        in_dim=len(weights),
        domain_radius=float(radius),
    )


def linear_map_graph(matrix, radius: float, prefix: str = "out") -> CompGraph:
    """Graph of z -> M z as one affine node per output row."""
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    q, d = M.shape
    inputs = [GraphNode(id=f"in{j}", layer=0, radius=radius) for j in range(d)]
    outputs = [
        GraphNode(id=f"{prefix}{i}", layer=1, function=affine_node_function(M[i], FIT_GROWTH * radius))
        for i in range(q)
    ]
    edges = [(f"in{j}", f"{prefix}{i}") for i in range(q) for j in range(d)]
    return CompGraph(nodes=inputs + outputs, edges=edges, input_dim=d, output_dim=q)
