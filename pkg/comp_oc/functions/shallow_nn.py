"""
Random-feature shallow networks for the general nodes of a graph.

Inner weights and biases are drawn once per node; only the linear readout is
solved, by ridge-regularized least squares.
"""
import hashlib
import math
from typing import Dict, Optional, Sequence

import numpy as np
import logfire
from joblib import Parallel, delayed
from scipy.linalg import lstsq

from comp_oc.exceptions import IllConditioned
from comp_oc.functions import catalog
from comp_oc.functions.common import tensor_grid, midpoint_grid, sobol_box
from comp_oc.functions.compgraph import as_batch, propagate, sample_inputs, eval_graph
from comp_oc.functions.features import compute_features, node_lipschitz, SAFETY_FACTOR
from comp_oc.models.graph import CompGraph, NodeFunction, NodeKind
from comp_oc.models.network import ShallowNet, SurrogateNet, Activation
from comp_oc.schemas.reports import RateReport

RIDGE = 1e-10
CONDITION_LIMIT = 1e14
WEIGHT_SPREAD = 3.0
BIAS_SPREAD = 3.0
MIN_PER_AXIS = 33
SOBOL_TRAIN_POINTS = 8192
EXACT_TOLERANCE = 1e-15

# Frozen rate constants C_hat per catalog kind: sup error <= C_hat * Lambda * L_max * |V_G| * n_w^(-1/r_max)
RATE_CONSTANTS: Dict[NodeKind, float] = {
    NodeKind.SQUARED_NORM: 1.0,
    NodeKind.QUADRATIC_FORM: 1.0,
    NodeKind.SCALAR_SMOOTH: 0.5,
    NodeKind.WEIGHTED_SUM: 0.5,
}


def rate_constant(graph: CompGraph) -> float:
    kinds = {node.function.kind for node in graph.general_nodes()}
    return max((RATE_CONSTANTS[kind] for kind in kinds), default=0.0)


def training_points(fn: NodeFunction, width: int, seed: int) -> np.ndarray:
    d, R = fn.in_dim, fn.domain_radius
    if d <= 3:
        per_axis = max(MIN_PER_AXIS, int(math.ceil((4 * width) ** (1.0 / d))))
        return tensor_grid(R, d, per_axis)
    return sobol_box(R, d, max(SOBOL_TRAIN_POINTS, 4 * width), seed=seed)


def validation_points(fn: NodeFunction, width: int, seed: int) -> np.ndarray:
    """Midpoints of the training grid cells (d <= 3) or an independently scrambled Sobol set."""
    d, R = fn.in_dim, fn.domain_radius
    if d <= 3:
        per_axis = max(MIN_PER_AXIS, int(math.ceil((4 * width) ** (1.0 / d))))
        return midpoint_grid(R, d, per_axis - 1)
    return sobol_box(R, d, max(SOBOL_TRAIN_POINTS, 4 * width), seed=seed + 1)


def fit_node(
        fn: NodeFunction,
        width: int,
        seed: int,
        activation: Activation = Activation.TANH,
        points: Optional[np.ndarray] = None,
) -> ShallowNet:
    """
    Fit the readout of a random-feature net to one node function.

    The default training grid holds at least 4 * width points. An explicit
    point set with fewer distinct points than neurons leaves the readout undetermined
    on the null space of the hidden matrix; its condition estimate is inf and
    the fit is rejected.
    """
    if fn.is_affine:
        raise ValueError("affine nodes are represented exactly and never fitted")
    if width < 1:
        raise ValueError("width must be at least 1")
    d, R = fn.in_dim, fn.domain_radius
    rng = np.random.default_rng(seed)
    # one row per neuron so that narrower nets are prefixes of wider ones
    draws = rng.uniform(-1.0, 1.0, size=(width, d + 1))
    inner = (WEIGHT_SPREAD / R) * draws[:, :d]
    bias = BIAS_SPREAD * draws[:, d]

    Z = training_points(fn, width, seed) if points is None else np.asarray(points, dtype=float).reshape(-1, d)
    # rank of H is at most the number of distinct points
    if len(np.unique(Z, axis=0)) < width:
        raise IllConditioned(math.inf, width, len(Z))
    target = catalog.value(fn, Z)
    untrained = ShallowNet(
        inner_weights=inner, inner_bias=bias, outer_weights=np.zeros(width),
        activation=activation, width=width,
    )
    H = untrained.hidden(Z)
    system = np.vstack([H, math.sqrt(RIDGE) * np.eye(width)])
    rhs = np.concatenate([target, np.zeros(width)])
    outer, _, _, singular = lstsq(system, rhs, lapack_driver="gelsd")
    condition = float(singular[0] / singular[-1])
    if condition > CONDITION_LIMIT:
        raise IllConditioned(condition, width, len(Z))

    net = untrained.model_copy(update={"outer_weights": outer, "condition": condition})
    Zv = validation_points(fn, width, seed)
    sup_error = float(np.max(np.abs(net(Zv) - catalog.value(fn, Zv))))
    return net.model_copy(update={"sup_error": sup_error})


def node_seed(fn: NodeFunction, seed: int) -> int:
    """Seed derived from the node's content, so identical nodes get identical nets."""
    digest = hashlib.sha256(f"{seed}:{fn.model_dump_json()}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def assemble_surrogate(
        graph: CompGraph,
        width: int,
        seed: int,
        activation: Activation = Activation.TANH,
        jobs: int = 1,
) -> SurrogateNet:
    general = graph.general_nodes()
    with logfire.span("assemble_surrogate", width=width, general_nodes=len(general), seed=seed):
        distinct: Dict[str, NodeFunction] = {}
        for node in general:
            distinct.setdefault(node.function.model_dump_json(), node.function)
        keys = list(distinct)
        try:
            if jobs > 1 and len(keys) > 1:
                nets = Parallel(n_jobs=jobs)(
                    delayed(fit_node)(distinct[k], width, node_seed(distinct[k], seed), activation) for k in keys
                )
            else:
                nets = [fit_node(distinct[k], width, node_seed(distinct[k], seed), activation) for k in keys]
        except IllConditioned as e:
            logfire.error("node fit failed", error=str(e), error_type=type(e).__name__, width=width)
            raise
        by_key = dict(zip(keys, nets))
        node_nets = {node.id: by_key[node.function.model_dump_json()] for node in general}
        surrogate = SurrogateNet(
            graph=graph,
            width=width if general else 0,
            node_nets=node_nets,
            total_size=width * len(general),
            fit_report={node_id: net.sup_error for node_id, net in node_nets.items()},
        )
        logfire.info(
            "surrogate assembled",
            total_size=surrogate.total_size,
            worst_node_error=max(surrogate.fit_report.values(), default=0.0),
        )
        return surrogate


def eval_surrogate(surrogate: SurrogateNet, x, check_domain: bool = True) -> np.ndarray:
    X, single = as_batch(surrogate.graph, x)
    overrides = {node_id: net for node_id, net in surrogate.node_nets.items()}
    values = propagate(surrogate.graph, X, check_domain=check_domain, overrides=overrides)
    out = np.stack([values[node_id] for node_id in surrogate.graph.output_ids()], axis=1)
    return out[0] if single else out


def error_points(graph: CompGraph, seed: int = 0) -> np.ndarray:
    d = graph.input_dim
    if d <= 3:
        per_axis = int(math.ceil(1000 ** (1.0 / d)))
        return midpoint_grid(graph.input_radii(), d, per_axis)
    return sample_inputs(graph, 4096, seed + 2)


def surrogate_error(surrogate: SurrogateNet, seed: int = 0) -> float:
    """Sup error of the surrogate against the graph over the graph's input box."""
    if not surrogate.node_nets:
        return 0.0
    X = error_points(surrogate.graph, seed)
    exact = eval_graph(surrogate.graph, X, check_domain=False)
    approx = eval_surrogate(surrogate, X, check_domain=False)
    return float(np.max(np.abs(exact - approx)))


def composition_error_bound(surrogate: SurrogateNet, n_samples: int = 4096) -> float:
    """Propagate node errors through the graph with per-node Lipschitz constants.

    A node with input error e and fit error delta is off by at most
    delta + L * ||e||.
    """
    graph = surrogate.graph
    nodes = graph.node_map()
    parents = graph.parents()
    errors = {node_id: 0.0 for node_id in graph.input_ids()}
    for node in sorted((n for n in graph.nodes if not n.is_input), key=lambda n: n.layer):
        fn = node.function
        incoming = math.sqrt(sum(errors[src] ** 2 for src in parents[node.id]))
        if fn.is_affine:
            lipschitz = float(np.linalg.norm(fn.params.weights))
        else:
            lipschitz = SAFETY_FACTOR * node_lipschitz(fn, n_samples)
        errors[node.id] = surrogate.fit_report.get(node.id, 0.0) + lipschitz * incoming
    return max(errors[node_id] for node_id in graph.output_ids())


def measure_rate(
        graph: CompGraph,
        widths: Sequence[int],
        seed: int,
        activation: Activation = Activation.TANH,
        n_samples: int = 4096,
) -> RateReport:
    widths = list(widths)
    if len(widths) < 3 or any(b <= a for a, b in zip(widths, widths[1:])):
        raise ValueError("measure_rate needs at least three strictly increasing widths")
    with logfire.span("measure_rate", widths=widths, seed=seed):
        feat = compute_features(graph, n_samples)
        theoretical = -1.0 / feat.r_max
        errors = [surrogate_error(assemble_surrogate(graph, w, seed, activation), seed) for w in widths]
        constant = rate_constant(graph)
        bounds = [
            constant * feat.lambda_ * feat.l_max * feat.v_g * w ** theoretical for w in widths
        ]
        if max(errors) <= EXACT_TOLERANCE:
            return RateReport(widths=widths, errors=errors, theoretical_slope=theoretical, exact=True, bounds=bounds)
        positive = [(w, e) for w, e in zip(widths, errors) if e > EXACT_TOLERANCE]
        slope = None
        if len(positive) >= 2:
            slope = float(np.polyfit(np.log([w for w, _ in positive]), np.log([e for _, e in positive]), 1)[0])
        logfire.info("rate measured", slope=slope, theoretical=theoretical)
        return RateReport(widths=widths, errors=errors, slope=slope, theoretical_slope=theoretical, bounds=bounds)
