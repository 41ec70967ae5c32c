# tests/test_ocp.py
import numpy as np
import pytest

from comp_oc.exceptions import DomainViolation, CalibrationFailure
from comp_oc.functions.common import ball_sample
from comp_oc.functions.compgraph import validate_graph
from comp_oc.functions.ocp import (
    rollout, rollout_batch, cost_batch, build_rollout_matrices, grad_J, hess_J, certify_convexity,
    extend_system, lift_state, calibrate_domain, check_calibration, rollout_magnitude, instance_graphs,
)
from comp_oc.models.graph import CompGraph
from comp_oc.models.ocp import (
    OcpInstance, LinearDynamics, GeneralDynamics, ProblemDomain, OmegaBox, OmegaPoints, Verdict,
)
from comp_oc.services.oracle import OracleSolver
from conftest import inputs, square_node, random_lq_instance


def scalar_square_instance(N, amplitude=1.0, a=1.0, b=1.0, R=4.0):
    """x_{k+1} = a x_k + b u_k with terminal cost amplitude * x_N^2."""
    graph = CompGraph(nodes=inputs(["x"], R) + [square_node("sq", 1.02 * R, amplitude=amplitude)],
                      edges=[("x", "sq")], input_dim=1, output_dim=1)
    return OcpInstance(
        name=f"scalar-{N}",
        n=1, q=1, N=N,
        dynamics=LinearDynamics(A=[[a]], B=[[b]]),
        terminal_cost=graph,
        domain=ProblemDomain(omega=OmegaBox(low=[-0.5], high=[0.5]), gamma=0.1, R=R),
    )


@pytest.mark.parametrize("N", [2, 3, 4])
def test_hessian_of_squared_terminal_state_is_rank_one(N, rng):
    inst = scalar_square_instance(N)
    for _ in range(20):
        x = rng.uniform(-0.5, 0.5, size=1)
        U = rng.uniform(-0.2, 0.2, size=N)
        H = hess_J(inst, x, U)
        eigs = np.linalg.eigvalsh(H)
        assert -1e-10 <= eigs[0] <= 1e-10
        assert eigs[-1] > 0
        sigma = np.linalg.svd(H, compute_uv=False)
        assert sigma[1] / sigma[0] <= 1e-10


def test_rank_one_instance_is_convex_only():
    cert = certify_convexity(scalar_square_instance(3), n_samples=32)
    assert cert.verdict == Verdict.CONVEX_ONLY
    assert cert.samples == 32
    assert len(cert.witness_U) == 3


def test_random_lq_instances_are_strictly_convex(rng):
    for _ in range(25):
        n, q, N = (int(v) for v in rng.integers(1, [5, 5, 7]))
        inst = random_lq_instance(rng, n, q, N)
        cert = certify_convexity(inst, n_samples=16)
        control = np.asarray(inst.stage_cost.control_cost.nodes[-1].function.params.matrix)
        floor = float(np.linalg.eigvalsh(control + control.T)[0])
        assert cert.verdict == Verdict.STRICTLY_CONVEX
        assert cert.min_eig >= 0.9 * floor


def test_concave_terminal_cost_is_not_certified():
    cert = certify_convexity(scalar_square_instance(2, amplitude=-1.0), n_samples=16)
    assert cert.verdict == Verdict.NOT_CERTIFIED
    assert cert.min_eig < 0


def test_recursive_and_matrix_rollouts_agree(rng):
    for _ in range(100):
        n, q, N = (int(v) for v in rng.integers(1, [5, 4, 7]))
        inst = random_lq_instance(rng, n, q, N, with_stage=False)
        x = rng.uniform(-0.5, 0.5, size=n)
        U = rng.uniform(-0.5, 0.5, size=inst.m)
        states = rollout(inst, x, U).states
        mats = build_rollout_matrices(inst.dynamics.A, inst.dynamics.B, N)
        for k in range(N + 1):
            expected = mats.A_powers[k] @ x + mats.C_blocks[k] @ U
            np.testing.assert_allclose(states[k], expected, rtol=1e-12, atol=1e-12)


def test_rollout_batch_shapes_and_broadcasting(lq3):
    X = np.zeros((4, 2))
    states, cost = rollout_batch(lq3, X, np.zeros(lq3.m))
    assert states.shape == (4, lq3.N + 1, 2)
    assert cost.shape == (4,)
    with pytest.raises(ValueError):
        rollout_batch(lq3, np.zeros(3), np.zeros(lq3.m))


def test_rollout_leaving_the_state_box_raises():
    inst = scalar_square_instance(2, a=3.0, R=4.0)
    with pytest.raises(DomainViolation):
        cost_batch(inst, [0.5], [1.0, 1.0])
    with pytest.raises(DomainViolation):
        cost_batch(inst, [0.0], [5.0, 0.0])


def test_gradient_matches_central_differences(rng):
    inst = random_lq_instance(rng, 2, 2, 3)
    x = rng.uniform(-0.5, 0.5, size=2)
    U = rng.uniform(-0.5, 0.5, size=inst.m)
    g = grad_J(inst, x, U)
    step = 1e-6
    for j in range(inst.m):
        e = np.zeros(inst.m)
        e[j] = step
        fd = (cost_batch(inst, x[None], (U + e)[None])[0] - cost_batch(inst, x[None], (U - e)[None])[0]) / (2 * step)
        assert g[j] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_extended_system_reproduces_the_cost(rng):
    for _ in range(10):
        n, q, N = (int(v) for v in rng.integers(1, [4, 3, 5]))
        inst = random_lq_instance(rng, n, q, N)
        extended = extend_system(inst)
        assert extended.n == n + 1
        assert isinstance(extended.dynamics, GeneralDynamics)
        assert extended.extended_from == inst
        X = rng.uniform(-0.5, 0.5, size=(100, n))
        U = ball_sample(np.zeros(inst.m), 2.0 * inst.domain.gamma, 100, rng)
        original = cost_batch(inst, X, U)
        lifted = cost_batch(extended, lift_state(X), U)
        np.testing.assert_allclose(lifted, original, rtol=0, atol=1e-10)


def test_extended_gradient_agrees_with_original(lq3):
    extended = extend_system(lq3)
    x = np.array([0.03, -0.02])
    U = np.array([0.05, -0.05, 0.02])
    np.testing.assert_allclose(grad_J(extended, lift_state(x), U), grad_J(lq3, x, U), atol=1e-10)
    np.testing.assert_allclose(hess_J(extended, lift_state(x), U), hess_J(lq3, x, U), atol=1e-5)


def test_extension_needs_stage_costs(example2):
    with pytest.raises(ValueError):
        extend_system(example2)


def test_lift_state_appends_zero():
    np.testing.assert_array_equal(lift_state([1.0, 2.0]), [1.0, 2.0, 0.0])
    assert lift_state(np.ones((3, 2))).shape == (3, 3)


def test_lifted_omega_keeps_accumulator_at_zero(lq3):
    omega = extend_system(lq3).domain.omega
    assert omega.low[-1] == 0.0 and omega.high[-1] == 0.0


def test_calibration_meets_both_box_invariants(lq3):
    calibrated = calibrate_domain(lq3, OracleSolver(), margin=1.25, n_samples=16)
    R, gamma, U0 = calibrated.domain.R, calibrated.domain.gamma, calibrated.u0()
    assert len(U0) == lq3.m
    assert np.max(np.abs(U0)) + 3.0 * gamma <= R
    assert rollout_magnitude(calibrated, U0, gamma, 16, 0) <= R / 2.0
    assert np.log2(R) == int(np.log2(R))
    for graph in instance_graphs(calibrated).values():
        assert validate_graph(graph).passed
    check_calibration(calibrated, 16)


def test_calibration_on_point_domain(example2):
    points = example2.model_copy(update={
        "domain": example2.domain.model_copy(update={"omega": OmegaPoints(points=[[0.01], [-0.02]])}),
    })
    calibrated = calibrate_domain(points, OracleSolver())
    # both minimizers lie on u0 + u1 = -x; the mean sits between them
    assert sum(calibrated.u0()) == pytest.approx(0.005)
    assert calibrated.domain.gamma >= 1e-3


def test_calibration_rejects_small_margin(lq3):
    with pytest.raises(ValueError):
        calibrate_domain(lq3, OracleSolver(), margin=0.5)


def test_diverging_rollouts_fail_calibration():
    inst = scalar_square_instance(6, a=1e3)
    with pytest.raises(CalibrationFailure):
        rollout_magnitude(inst, np.zeros(6), 0.1, 8, 0)
