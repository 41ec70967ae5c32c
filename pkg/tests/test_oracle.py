# tests/test_oracle.py
import numpy as np
import pytest

from comp_oc.exceptions import NotQuadratic, NoConvergence
from comp_oc.functions.ocp import grad_J, extend_system, lift_state, cost_batch
from comp_oc.models.graph import CompGraph, GraphNode, NodeFunction, NodeKind, NodeParams, SmoothFn
from comp_oc.services import oracle as oracle_module
from comp_oc.services.oracle import OracleSolver, OracleMode, graph_degree
from conftest import inputs, square_node, random_lq_instance, sum_of_squares_graph


def tanh_graph(radius=2.0):
    node = GraphNode(id="t", layer=1, function=NodeFunction(
        kind=NodeKind.SCALAR_SMOOTH, params=NodeParams(smooth=SmoothFn.TANH), in_dim=1, domain_radius=radius))
    return CompGraph(nodes=inputs(["x"], radius) + [node], edges=[("x", "t")], input_dim=1, output_dim=1)


def test_closed_form_solves_the_normal_equations(rng):
    oracle = OracleSolver()
    for _ in range(10):
        n, q, N = (int(v) for v in rng.integers(1, [4, 3, 5]))
        inst = random_lq_instance(rng, n, q, N)
        x = rng.uniform(-0.5, 0.5, size=n)
        U = oracle.solve(inst, x)
        assert np.linalg.norm(grad_J(inst, x, U, check_domain=False)) <= 1e-9


def test_numeric_mode_agrees_with_closed_form(rng):
    inst = random_lq_instance(rng, 2, 1, 3)
    x = np.array([0.2, -0.1])
    exact = OracleSolver().solve(inst, x)
    numeric = OracleSolver(mode=OracleMode.NUMERIC, tolerance=1e-10).solve(inst, x)
    np.testing.assert_allclose(numeric, exact, atol=1e-7)


def test_minimum_norm_minimizer_of_rank_one_cost(example2):
    U = OracleSolver().solve(example2, [0.04])
    np.testing.assert_allclose(U, [-0.02, -0.02], atol=1e-14)
    assert OracleSolver().optimal_value(example2, [0.04]) == pytest.approx(0.0, abs=1e-20)


def test_extended_instance_uses_the_original_minimizer(lq3):
    x = np.array([0.03, -0.01])
    extended = extend_system(lq3)
    oracle = OracleSolver()
    np.testing.assert_allclose(oracle.solve(extended, lift_state(x)), oracle.solve(lq3, x), atol=1e-14)
    U = oracle.solve(lq3, x)
    ext_cost = cost_batch(extended, lift_state(x)[None], U[None], check_domain=False)[0]
    assert ext_cost == pytest.approx(oracle.optimal_value(lq3, x), abs=1e-12)


def test_non_quadratic_terminal_cost_is_rejected(example2):
    inst = example2.model_copy(update={"terminal_cost": tanh_graph()})
    with pytest.raises(NotQuadratic):
        OracleSolver().solve(inst, [0.0])


def test_unbounded_cost_is_rejected(example2):
    linear = CompGraph(
        nodes=inputs(["x"], 1.0) + [GraphNode(id="p", layer=1, function=NodeFunction(
            kind=NodeKind.SCALAR_SMOOTH,
            params=NodeParams(smooth=SmoothFn.POLYNOMIAL, coefficients=[0.0, 1.0, 0.0]),
            in_dim=1, domain_radius=1.02))],
        edges=[("x", "p")], input_dim=1, output_dim=1,
    )
    with pytest.raises(NotQuadratic):
        OracleSolver().solve(example2.model_copy(update={"terminal_cost": linear}), [0.01])


def test_numeric_solver_reports_no_convergence(rng):
    inst = random_lq_instance(rng, 2, 1, 3)
    with pytest.raises(NoConvergence) as err:
        OracleSolver(mode=OracleMode.NUMERIC, max_iters=1, tolerance=1e-14).solve(inst, [0.3, 0.3])
    assert err.value.iterations == 1


def test_stalled_descent_raises_instead_of_returning(rng, monkeypatch):
    inst = random_lq_instance(rng, 2, 1, 3)
    # a gradient this small cannot move U in floating point
    monkeypatch.setattr(oracle_module, "grad_J", lambda *args, **kwargs: np.full(inst.m, 1e-20))
    with pytest.raises(NoConvergence) as err:
        OracleSolver(mode=OracleMode.NUMERIC, tolerance=1e-30).solve(inst, [0.3, 0.3])
    assert err.value.iterations == 0
    assert err.value.grad_norm == pytest.approx(1e-20 * np.sqrt(inst.m))
    assert err.value.exit_code == 4


def test_graph_degree():
    assert graph_degree(sum_of_squares_graph(2, 1.0)) == 2
    stacked = CompGraph(
        nodes=inputs(["x"], 1.0) + [square_node("a", 1.1), square_node("b", 1.5, layer=2)],
        edges=[("x", "a"), ("a", "b")], input_dim=1, output_dim=1,
    )
    assert graph_degree(stacked) == 4
    assert graph_degree(tanh_graph()) == float("inf")
