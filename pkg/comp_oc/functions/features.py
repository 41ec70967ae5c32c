"""
Compositional features of graphs and their algebra under parallelization
and state extension.
"""
from typing import Dict, Optional, Tuple

import numpy as np
import logfire

from comp_oc.functions import catalog
from comp_oc.functions.common import tensor_grid, sobol_box, box_corners
from comp_oc.models.features import FeatureTuple
from comp_oc.models.graph import CompGraph, GraphNode, NodeFunction

SAFETY_FACTOR = 1.1
GRID_POINTS_PER_AXIS = 17
GRID_DIM_LIMIT = 3
CORNER_DIM_LIMIT = 12

AFFINE_FEATURES = FeatureTuple(r_max=1.0, lambda_=0.0, l_max=0.0, v_g=0)


def node_samples(fn: NodeFunction, n_samples: int = 4096, seed: int = 0) -> np.ndarray:
    """Sample points of the node's domain box [-R, R]^d."""
    d, R = fn.in_dim, fn.domain_radius
    if d <= GRID_DIM_LIMIT:
        return tensor_grid(R, d, GRID_POINTS_PER_AXIS)
    Z = sobol_box(R, d, n_samples, seed=seed)
    if d <= CORNER_DIM_LIMIT:
        Z = np.vstack([Z, box_corners(R, d)])
    return Z


def node_sobolev_sum(fn: NodeFunction, n_samples: int = 4096, seed: int = 0) -> float:
    """max{R^m, 1} * sum over |alpha| <= m of the sampled sup of |D^alpha f| (no safety factor)."""
    Z = node_samples(fn, n_samples, seed)
    total = 0.0
    for order in range(fn.smoothness_order + 1):
        block = catalog.partials(fn, Z, order)
        if block.shape[1]:
            total += float(np.sum(np.max(np.abs(block), axis=0)))
    return max(fn.domain_radius ** fn.smoothness_order, 1.0) * total


def node_lipschitz(fn: NodeFunction, n_samples: int = 4096, seed: int = 0) -> float:
    """Sampled sup of the gradient norm on the node's box (no safety factor)."""
    Z = node_samples(fn, n_samples, seed)
    return float(np.max(np.linalg.norm(catalog.gradient(fn, Z), axis=1)))


def node_features(node: GraphNode, n_samples: int = 4096, seed: int = 0) -> FeatureTuple:
    fn = node.function
    return FeatureTuple(
        r_max=fn.in_dim / fn.smoothness_order,
        lambda_=SAFETY_FACTOR * node_sobolev_sum(fn, n_samples, seed),
        l_max=SAFETY_FACTOR * node_lipschitz(fn, n_samples, seed),
        v_g=1,
    )


def general_ancestry(graph: CompGraph) -> Dict[str, bool]:
    """Whether each node is general or has a general node upstream."""
    parents = graph.parents()
    tainted = {node_id: False for node_id in graph.input_ids()}
    for node in sorted((n for n in graph.nodes if not n.is_input), key=lambda n: n.layer):
        upstream = any(tainted[src] for src in parents[node.id])
        tainted[node.id] = upstream or node.is_general
    return tainted


def compute_features(graph: CompGraph, n_samples: int = 4096, seed: int = 0) -> FeatureTuple:
    """Features of a graph.

    General nodes contribute their own tuples. An output with no general node
    upstream is an affine component and contributes AFFINE_FEATURES, so r_max
    is at least 1 whenever such an output exists.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    with logfire.span("compute_features", nodes=len(graph.nodes), n_samples=n_samples):
        result: Optional[FeatureTuple] = None
        for node in graph.general_nodes():
            feat = node_features(node, n_samples, seed)
            result = feat if result is None else _merge_maxima(result, feat, feat.v_g)
        if result is None:
            return AFFINE_FEATURES
        tainted = general_ancestry(graph)
        if not all(tainted[node_id] for node_id in graph.output_ids()):
            result = features_parallel(AFFINE_FEATURES, result)
        logfire.info("features computed", features=result.as_tuple())
        return result


def _merge_maxima(a: FeatureTuple, b: FeatureTuple, extra: int) -> FeatureTuple:
    return FeatureTuple(
        r_max=max(a.r_max, b.r_max),
        lambda_=max(a.lambda_, b.lambda_),
        l_max=max(a.l_max, b.l_max),
        v_g=a.v_g + extra,
    )


def features_parallel(a: FeatureTuple, b: FeatureTuple) -> FeatureTuple:
    return _merge_maxima(a, b, b.v_g)


def features_extend_terminal(g_feat: FeatureTuple) -> FeatureTuple:
    # the added nodes of the extended terminal cost are affine
    return g_feat


def features_extend_dynamics(f_feat: FeatureTuple, l1_feat: FeatureTuple, l2_feat: FeatureTuple) -> FeatureTuple:
    return features_parallel(f_feat, features_parallel(l1_feat, l2_feat))


def synthesis_exponent(*graphs: CompGraph) -> float:
    """Largest d / m over the general nodes of the graphs; 1 when there are none.

    Affine output components are represented exactly, so they do not enter
    the width n_w(delta) = ceil((c / delta)^r) the way they enter r_max.
    """
    exponents = [
        node.function.in_dim / node.function.smoothness_order
        for graph in graphs for node in graph.general_nodes()
    ]
    return max(exponents) if exponents else 1.0


def corollary_size_profile(
        l1_feat: FeatureTuple, l2_feat: FeatureTuple, g_feat: FeatureTuple, control_dim: int
) -> Tuple[float, float, float]:
    """Rate profile of the network size for stage-cost problems with linear dynamics.

    Returns (r, exponent of 1/epsilon, structural factor q(|V_G^l1| + |V_G^l2| + |V_G^g|)).
    """
    r = max(1.0, l1_feat.r_max, l2_feat.r_max, g_feat.r_max)
    structural = control_dim * (l1_feat.v_g + l2_feat.v_g + g_feat.v_g)
    return r, 8.0 * r + 1.0, float(structural)
