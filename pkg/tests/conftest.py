# tests/conftest.py
import os
import pathlib
import sys

import numpy as np
import pytest
import logfire

# Ensure project root is on sys.path
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from comp_oc.models.graph import CompGraph, GraphNode, NodeFunction, NodeKind, NodeParams, SmoothFn  # noqa: E402
from comp_oc.models.ocp import (  # noqa: E402
    OcpInstance, LinearDynamics, SeparatedStageCost, ProblemDomain, OmegaBox,
)
from comp_oc.parsers.instance import load_instance  # noqa: E402

logfire.configure(send_to_logfire=False, console=False)

INSTANCE_DIR = pathlib.Path(PROJECT_ROOT) / "instances"
CONFIG_DIR = pathlib.Path(PROJECT_ROOT) / "configs"


def inputs(names, radius):
    return [GraphNode(id=name, layer=0, radius=radius) for name in names]


def square_node(node_id, radius, layer=1, amplitude=1.0):
    return GraphNode(id=node_id, layer=layer, function=NodeFunction(
        kind=NodeKind.SCALAR_SMOOTH,
        params=NodeParams(smooth=SmoothFn.POLYNOMIAL, coefficients=[0.0, 0.0, 1.0], amplitude=amplitude),
        in_dim=1, domain_radius=radius,
    ))


def sum_of_squares_graph(dim, radius, amplitude=1.0):
    """x -> amplitude * sum_i x_i^2 as one polynomial node per coordinate plus an affine sum."""
    names = [f"x{i}" for i in range(dim)]
    nodes = inputs(names, radius) + [square_node(f"sq{i}", 1.02 * radius, amplitude=amplitude) for i in range(dim)]
    edges = [(f"x{i}", f"sq{i}") for i in range(dim)]
    if dim == 1:
        return CompGraph(nodes=nodes, edges=edges, input_dim=1, output_dim=1)
    total = GraphNode(id="sum", layer=2, function=NodeFunction(
        kind=NodeKind.AFFINE, params=NodeParams(weights=[1.0] * dim),
        in_dim=dim, domain_radius=1.02 * dim * amplitude * radius ** 2 + 1.0,
    ))
    edges += [(f"sq{i}", "sum") for i in range(dim)]
    return CompGraph(nodes=nodes + [total], edges=edges, input_dim=dim, output_dim=1)


def quadratic_graph(Q, radius, linear=None):
    """x -> x^T Q x (+ linear . x) as a single quadratic_form node."""
    Q = np.asarray(Q, dtype=float)
    d = Q.shape[0]
    names = [f"x{i}" for i in range(d)]
    node = GraphNode(id="quad", layer=1, function=NodeFunction(
        kind=NodeKind.QUADRATIC_FORM,
        params=NodeParams(matrix=Q.tolist(), linear=None if linear is None else list(linear)),
        in_dim=d, domain_radius=radius,
    ))
    return CompGraph(nodes=inputs(names, radius) + [node], edges=[(n, "quad") for n in names],
                     input_dim=d, output_dim=1)


def random_lq_instance(rng, n, q, N, radius=64.0, strict=True, with_stage=True):
    """Linear dynamics with quadratic g, PSD l1 and (for strict) PD l2."""
    A = rng.uniform(-0.5, 0.5, size=(n, n)) + 0.5 * np.eye(n)
    # keep rollouts well inside the state box
    A /= max(1.0, float(np.linalg.norm(A, ord=2)))
    B = rng.uniform(-0.5, 0.5, size=(n, q))
    G = rng.standard_normal((n, n))
    stage = None
    if with_stage:
        S = rng.standard_normal((n, n))
        P = rng.standard_normal((q, q))
        control = P @ P.T + (0.5 if strict else 0.0) * np.eye(q)
        stage = SeparatedStageCost(
            state_cost=quadratic_graph(0.1 * S @ S.T, radius),
            control_cost=quadratic_graph(control, radius),
        )
    kwargs = {"stage_cost": stage} if stage is not None else {}
    return OcpInstance(
        name=f"lq-{n}-{q}-{N}",
        n=n, q=q, N=N,
        dynamics=LinearDynamics(A=A.tolist(), B=B.tolist()),
        terminal_cost=quadratic_graph(0.1 * G @ G.T, radius),
        domain=ProblemDomain(omega=OmegaBox(low=[-0.5] * n, high=[0.5] * n), gamma=0.5, R=radius / 2.0),
        **kwargs,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def example2():
    return load_instance(INSTANCE_DIR / "example2.json")


@pytest.fixture
def lq3():
    return load_instance(INSTANCE_DIR / "lq3.json")
