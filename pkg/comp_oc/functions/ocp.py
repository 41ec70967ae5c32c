"""
Rollouts, cost derivatives, convexity certification and the extended state
space for discrete-time optimal control instances.
"""
from typing import List, Dict, Tuple, TYPE_CHECKING

import numpy as np
import logfire

from comp_oc.exceptions import DomainViolation, CalibrationFailure
from comp_oc.functions.common import sobol_box, ball_sample, power_of_two_above
from comp_oc.functions.compgraph import (
    eval_graph, grad_graph, hess_graph, fit_domains, validate_graph,
    linear_map_graph, affine_node_function, DOMAIN_TOLERANCE,
)
from comp_oc.models.graph import CompGraph, GraphNode
from comp_oc.models.ocp import (
    OcpInstance, LinearDynamics, GeneralDynamics, ZeroStageCost, SeparatedStageCost,
    OmegaBox, OmegaPoints, ProblemDomain, RolloutMatrices, Rollout, ConvexityCertificate, Verdict,
)

if TYPE_CHECKING:
    from comp_oc.services.oracle import OracleSolver

STRICT_THRESHOLD = 1e-10
HESSIAN_FD_STEP = 1e-4
GAMMA_FLOOR = 1e-3
DIVERGENCE_LIMIT = 1e8
ROLLOUTS_PER_STATE = 4


def sample_omega(inst: OcpInstance, n_samples: int, seed: int = 0) -> np.ndarray:
    """n_samples initial states: Sobol points of the box, or the point list cycled."""
    omega = inst.domain.omega
    if isinstance(omega, OmegaPoints):
        points = np.asarray(omega.points, dtype=float)
        return points[np.arange(n_samples) % len(points)]
    low, high = np.asarray(omega.low, dtype=float), np.asarray(omega.high, dtype=float)
    unit = sobol_box(1.0, inst.n, n_samples, seed=seed)
    return 0.5 * (low + high) + 0.5 * (high - low) * unit


def omega_states(inst: OcpInstance, n_samples: int, seed: int = 0) -> np.ndarray:
    """Every listed point of a point domain, or n_samples Sobol points of a box."""
    omega = inst.domain.omega
    if isinstance(omega, OmegaPoints):
        return np.asarray(omega.points, dtype=float)
    return sample_omega(inst, n_samples, seed)


def dynamics_graph(inst: OcpInstance) -> CompGraph:
    dyn = inst.dynamics
    if isinstance(dyn, GeneralDynamics):
        return dyn.graph
    return linear_map_graph(np.hstack([np.asarray(dyn.A), np.asarray(dyn.B)]), inst.domain.R, prefix="x")


def _batch(inst: OcpInstance, x, U) -> Tuple[np.ndarray, np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    U = np.asarray(U, dtype=float)
    single = X.ndim == 1 and U.ndim == 1
    X, U = np.atleast_2d(X), np.atleast_2d(U)
    if X.shape[1] != inst.n or U.shape[1] != inst.m:
        raise ValueError(f"expected states of length {inst.n} and controls of length {inst.m}")
    if len(X) != len(U):
        if len(X) == 1:
            X = np.repeat(X, len(U), axis=0)
        elif len(U) == 1:
            U = np.repeat(U, len(X), axis=0)
        else:
            raise ValueError("state and control batches differ in length")
    return X, U, single


def _check_states(states: np.ndarray, R: float, label: str):
    worst = float(np.max(np.abs(states))) if states.size else 0.0
    if not np.isfinite(worst) or worst > R + DOMAIN_TOLERANCE:
        raise DomainViolation(label, worst, R)


def _step(inst: OcpInstance, X: np.ndarray, u: np.ndarray, check_domain: bool) -> np.ndarray:
    dyn = inst.dynamics
    if isinstance(dyn, LinearDynamics):
        return X @ np.asarray(dyn.A).T + u @ np.asarray(dyn.B).T
    return eval_graph(dyn.graph, np.hstack([X, u]), check_domain=check_domain)


def _scalar(graph: CompGraph, Z: np.ndarray, check_domain: bool) -> np.ndarray:
    return eval_graph(graph, Z, check_domain=check_domain)[:, 0]


def rollout_batch(inst: OcpInstance, x, U, check_domain: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """States (b, N+1, n) and costs (b,) for a batch of initial states and control sequences."""
    X, U, _ = _batch(inst, x, U)
    R = inst.domain.R
    if check_domain:
        _check_states(X, R, "state")
        _check_states(U, R, "control")
    controls = U.reshape(len(U), inst.N, inst.q)
    states = [X]
    cost = np.zeros(len(X))
    stage = inst.stage_cost
    for k in range(inst.N):
        if isinstance(stage, SeparatedStageCost):
            cost = cost + (
                _scalar(stage.state_cost, states[k], check_domain)
                + _scalar(stage.control_cost, controls[:, k], check_domain)
            )
        nxt = _step(inst, states[k], controls[:, k], check_domain)
        if check_domain:
            _check_states(nxt, R, "state")
        states.append(nxt)
    cost = _scalar(inst.terminal_cost, states[-1], check_domain) + cost
    return np.stack(states, axis=1), cost


def rollout(inst: OcpInstance, x, U) -> Rollout:
    states, cost = rollout_batch(inst, np.asarray(x, dtype=float)[None], np.asarray(U, dtype=float)[None])
    return Rollout(states=states[0], cost=float(cost[0]))


def cost_batch(inst: OcpInstance, x, U, check_domain: bool = True) -> np.ndarray:
    _, cost = rollout_batch(inst, x, U, check_domain=check_domain)
    return cost


def build_rollout_matrices(A, B, N: int) -> RolloutMatrices:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, q = B.shape
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(powers[-1] @ A)
    blocks = np.zeros((N + 1, n, q * N))
    for k in range(1, N + 1):
        for j in range(k):
            blocks[k, :, j * q:(j + 1) * q] = powers[k - 1 - j] @ B
    return RolloutMatrices(C_blocks=blocks, A_powers=np.stack(powers))


def _grad_batch(inst: OcpInstance, X: np.ndarray, U: np.ndarray, check_domain: bool) -> np.ndarray:
    b, n, q, N = len(X), inst.n, inst.q, inst.N
    states, _ = rollout_batch(inst, X, U, check_domain=check_domain)
    controls = U.reshape(b, N, q)
    stage = inst.stage_cost
    grad = np.zeros((b, inst.m))
    dyn = inst.dynamics
    if isinstance(dyn, LinearDynamics):
        C = build_rollout_matrices(dyn.A, dyn.B, N).C_blocks
        sens = [np.broadcast_to(C[k], (b, n, inst.m)) for k in range(N + 1)]
    else:
        sens = [np.zeros((b, n, inst.m))]
        for k in range(N):
            jac = grad_graph(dyn.graph, np.hstack([states[:, k], controls[:, k]]), check_domain=check_domain)
            nxt = np.einsum("bij,bjm->bim", jac[:, :, :n], sens[k])
            nxt[:, :, k * q:(k + 1) * q] += jac[:, :, n:]
            sens.append(nxt)
    if isinstance(stage, SeparatedStageCost):
        for k in range(N):
            g1 = grad_graph(stage.state_cost, states[:, k], check_domain=check_domain)[:, 0]
            grad += np.einsum("bi,bim->bm", g1, sens[k])
            grad[:, k * q:(k + 1) * q] += grad_graph(stage.control_cost, controls[:, k], check_domain=check_domain)[:, 0]
    gN = grad_graph(inst.terminal_cost, states[:, N], check_domain=check_domain)[:, 0]
    grad += np.einsum("bi,bim->bm", gN, sens[N])
    return grad


def _hess_batch(inst: OcpInstance, X: np.ndarray, U: np.ndarray, check_domain: bool) -> np.ndarray:
    b, q, N, m = len(X), inst.q, inst.N, inst.m
    dyn = inst.dynamics
    if isinstance(dyn, GeneralDynamics):
        hess = np.zeros((b, m, m))
        for j in range(m):
            step = np.zeros(m)
            step[j] = HESSIAN_FD_STEP
            plus = _grad_batch(inst, X, U + step, check_domain)
            minus = _grad_batch(inst, X, U - step, check_domain)
            hess[:, :, j] = (plus - minus) / (2.0 * HESSIAN_FD_STEP)
        return 0.5 * (hess + np.transpose(hess, (0, 2, 1)))

    states, _ = rollout_batch(inst, X, U, check_domain=check_domain)
    C = build_rollout_matrices(dyn.A, dyn.B, N).C_blocks
    controls = U.reshape(b, N, q)
    hess = np.zeros((b, m, m))
    stage = inst.stage_cost
    if isinstance(stage, SeparatedStageCost):
        for k in range(N):
            H1 = hess_graph(stage.state_cost, states[:, k], check_domain=check_domain)[:, 0]
            hess += np.einsum("im,bij,jp->bmp", C[k], H1, C[k])
            H2 = hess_graph(stage.control_cost, controls[:, k], check_domain=check_domain)[:, 0]
            hess[:, k * q:(k + 1) * q, k * q:(k + 1) * q] += H2
    HN = hess_graph(inst.terminal_cost, states[:, N], check_domain=check_domain)[:, 0]
    hess += np.einsum("im,bij,jp->bmp", C[N], HN, C[N])
    return hess


def grad_J(inst: OcpInstance, x, U, check_domain: bool = True) -> np.ndarray:
    """Gradient of J in U: (m,) for one pair, (b, m) for a batch."""
    X, Ub, single = _batch(inst, x, U)
    grad = _grad_batch(inst, X, Ub, check_domain)
    return grad[0] if single else grad


def hess_J(inst: OcpInstance, x, U, check_domain: bool = True) -> np.ndarray:
    """Hessian of J in U: (m, m) for one pair, (b, m, m) for a batch."""
    X, Ub, single = _batch(inst, x, U)
    hess = _hess_batch(inst, X, Ub, check_domain)
    return hess[0] if single else hess


def _min_eigs(inst: OcpInstance, X: np.ndarray, U: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Smallest Hessian eigenvalue per sample; samples leaving the domain are dropped."""
    try:
        return np.linalg.eigvalsh(_hess_batch(inst, X, U, True))[:, 0], np.arange(len(X))
    except DomainViolation:
        pass
    eigs, kept = [], []
    for i in range(len(X)):
        try:
            H = _hess_batch(inst, X[i:i + 1], U[i:i + 1], True)
        except DomainViolation as e:
            logfire.warning("certification sample skipped", sample=i, error=str(e))
            continue
        eigs.append(np.linalg.eigvalsh(H)[0, 0])
        kept.append(i)
    return np.asarray(eigs), np.asarray(kept, dtype=int)


def certify_convexity(inst: OcpInstance, n_samples: int = 256, seed: int = 0) -> ConvexityCertificate:
    """Sampled smallest Hessian eigenvalue over Omega x B_{2 gamma}(U0).

    A numeric certificate: a pass only speaks for the sampled pairs.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    with logfire.span("certify_convexity", instance=inst.name, n_samples=n_samples, seed=seed):
        rng = np.random.default_rng(seed)
        X = sample_omega(inst, n_samples, seed)
        U = ball_sample(inst.u0(), 2.0 * inst.domain.gamma, n_samples, rng)
        eigs, kept = _min_eigs(inst, X, U)
        if len(kept) == 0:
            logfire.error("no certification sample stayed in the domain", instance=inst.name)
            return ConvexityCertificate(
                verdict=Verdict.NOT_CERTIFIED, min_eig=float("nan"), samples=0,
                witness_x=[], witness_U=[], skipped=n_samples,
            )
        worst = int(np.argmin(eigs))
        min_eig = float(eigs[worst])
        if min_eig > STRICT_THRESHOLD:
            verdict = Verdict.STRICTLY_CONVEX
        elif min_eig > -STRICT_THRESHOLD:
            verdict = Verdict.CONVEX_ONLY
        else:
            verdict = Verdict.NOT_CERTIFIED
        certificate = ConvexityCertificate(
            verdict=verdict,
            min_eig=min_eig,
            samples=len(kept),
            witness_x=X[kept[worst]].tolist(),
            witness_U=U[kept[worst]].tolist(),
            skipped=n_samples - len(kept),
        )
        logfire.info("convexity certificate", verdict=verdict.value, min_eig=min_eig, samples=len(kept))
        return certificate


def lift_state(x) -> np.ndarray:
    """(x) -> (x, 0): initial state of the extended system."""
    X = np.asarray(x, dtype=float)
    return np.concatenate([X, np.zeros(X.shape[:-1] + (1,))], axis=-1)


def _embed(graph: CompGraph, prefix: str, input_names: List[str]):
    renamed = dict(zip(graph.input_ids(), input_names))
    nodes = [
        GraphNode(id=prefix + node.id, layer=node.layer, function=node.function)
        for node in graph.nodes if not node.is_input
    ]
    edges = [(renamed.get(src, prefix + src), prefix + dst) for src, dst in graph.edges]
    outputs = [prefix + node_id for node_id in graph.output_ids()]
    return nodes, edges, outputs


def _max_layer(nodes: List[GraphNode]) -> int:
    return max((node.layer for node in nodes), default=0)


def extended_dynamics_graph(inst: OcpInstance) -> CompGraph:
    """(x, y, u) -> (f(x, u), y + l1(x) + l2(u))."""
    stage = inst.stage_cost
    if not isinstance(stage, SeparatedStageCost):
        raise ValueError("the extended system needs separated stage costs")
    n, q, R = inst.n, inst.q, inst.domain.R
    xs = [f"x{i}" for i in range(n)]
    us = [f"u{j}" for j in range(q)]
    inputs = [GraphNode(id=name, layer=0, radius=R) for name in xs + ["y"] + us]
    f_nodes, f_edges, _ = _embed(dynamics_graph(inst), "f.", xs + us)
    l1_nodes, l1_edges, (l1_out,) = _embed(stage.state_cost, "l1.", xs)
    l2_nodes, l2_edges, (l2_out,) = _embed(stage.control_cost, "l2.", us)
    top = _max_layer(f_nodes + l1_nodes + l2_nodes)
    carry = GraphNode(id="acc.y", layer=1, function=affine_node_function([1.0], 1.0))
    accumulate = GraphNode(id="acc.next", layer=top + 1, function=affine_node_function([1.0, 1.0, 1.0], 1.0))
    edges = f_edges + l1_edges + l2_edges + [
        ("y", "acc.y"), ("acc.y", "acc.next"), (l1_out, "acc.next"), (l2_out, "acc.next"),
    ]
    graph = CompGraph(
        nodes=inputs + f_nodes + l1_nodes + l2_nodes + [carry, accumulate],
        edges=edges, input_dim=n + q + 1, output_dim=n + 1,
    )
    return fit_domains(graph, only=["acc.y", "acc.next"])


def extended_terminal_graph(inst: OcpInstance) -> CompGraph:
    """(x, y) -> g(x) + y."""
    n, R = inst.n, inst.domain.R
    xs = [f"x{i}" for i in range(n)]
    inputs = [GraphNode(id=name, layer=0, radius=R) for name in xs + ["y"]]
    g_nodes, g_edges, (g_out,) = _embed(inst.terminal_cost, "g.", xs)
    carry = GraphNode(id="acc.y", layer=1, function=affine_node_function([1.0], 1.0))
    total = GraphNode(id="acc.total", layer=_max_layer(g_nodes) + 1, function=affine_node_function([1.0, 1.0], 1.0))
    graph = CompGraph(
        nodes=inputs + g_nodes + [carry, total],
        edges=g_edges + [("y", "acc.y"), ("acc.y", "acc.total"), (g_out, "acc.total")],
        input_dim=n + 1, output_dim=1,
    )
    return fit_domains(graph, only=["acc.y", "acc.total"])


def _lift_omega(inst: OcpInstance):
    omega = inst.domain.omega
    if isinstance(omega, OmegaBox):
        return OmegaBox(low=list(omega.low) + [0.0], high=list(omega.high) + [0.0])
    return OmegaPoints(points=[list(p) + [0.0] for p in omega.points])


def stage_cost_sums(inst: OcpInstance, states: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Partial running costs sum_{i<k} l(x_i, u_i) for k = 1..N, shape (b, N); empty without stage costs."""
    stage = inst.stage_cost
    if not isinstance(stage, SeparatedStageCost):
        return np.zeros((len(states), 0))
    controls = U.reshape(len(U), inst.N, inst.q)
    terms = [
        _scalar(stage.state_cost, states[:, k], False) + _scalar(stage.control_cost, controls[:, k], False)
        for k in range(inst.N)
    ]
    return np.cumsum(np.stack(terms, axis=1), axis=1)


def rollout_magnitude(
        inst: OcpInstance, U0: np.ndarray, gamma: float, n_samples: int, seed: int
) -> float:
    """Largest |coordinate| of sampled rollout states, partial running costs and controls in B_{2 gamma}(U0)."""
    rng = np.random.default_rng(seed)
    X = omega_states(inst, n_samples, seed)
    X = np.repeat(X, ROLLOUTS_PER_STATE, axis=0)
    U = ball_sample(U0, 2.0 * gamma, len(X), rng)
    with np.errstate(over="ignore", invalid="ignore"):
        states, _ = rollout_batch(inst, X, U, check_domain=False)
    norms = np.linalg.norm(states, axis=2)
    if not np.all(np.isfinite(norms)) or float(np.max(norms)) > DIVERGENCE_LIMIT:
        raise CalibrationFailure(f"rollouts of '{inst.name}' diverge (state norm above {DIVERGENCE_LIMIT:.0e})")
    control_reach = float(np.max(np.abs(U0), initial=0.0)) + 2.0 * gamma
    running = float(np.max(np.abs(stage_cost_sums(inst, states, U)), initial=0.0))
    return max(float(np.max(np.abs(states))), control_reach, running)


def with_radius(inst: OcpInstance, R: float, n_samples: int = 1024, seed: int = 0) -> OcpInstance:
    """Instance whose domain radius and graph input boxes are R, with node boxes grown to fit."""
    update = {"domain": inst.domain.model_copy(update={"R": R})}
    if isinstance(inst.dynamics, GeneralDynamics):
        update["dynamics"] = GeneralDynamics(graph=fit_domains(inst.dynamics.graph, R, n_samples, seed))
    update["terminal_cost"] = fit_domains(inst.terminal_cost, R, n_samples, seed)
    if isinstance(inst.stage_cost, SeparatedStageCost):
        update["stage_cost"] = SeparatedStageCost(
            state_cost=fit_domains(inst.stage_cost.state_cost, R, n_samples, seed),
            control_cost=fit_domains(inst.stage_cost.control_cost, R, n_samples, seed),
        )
    return inst.model_copy(update=update)


def instance_graphs(inst: OcpInstance) -> Dict[str, CompGraph]:
    graphs = {"dynamics": dynamics_graph(inst), "terminal_cost": inst.terminal_cost}
    if isinstance(inst.stage_cost, SeparatedStageCost):
        graphs["state_cost"] = inst.stage_cost.state_cost
        graphs["control_cost"] = inst.stage_cost.control_cost
    return graphs


def extend_system(inst: OcpInstance, n_samples: int = 256, seed: int = 0) -> OcpInstance:
    """Terminal-cost reformulation with the running cost as extra state coordinate."""
    if not isinstance(inst.stage_cost, SeparatedStageCost):
        raise ValueError("extend_system needs an instance with separated stage costs")
    with logfire.span("extend_system", instance=inst.name, n=inst.n, q=inst.q, N=inst.N):
        extended = OcpInstance(
            name=f"{inst.name}+extended",
            n=inst.n + 1,
            q=inst.q,
            N=inst.N,
            dynamics=GeneralDynamics(graph=extended_dynamics_graph(inst)),
            stage_cost=ZeroStageCost(),
            terminal_cost=extended_terminal_graph(inst),
            domain=ProblemDomain(
                omega=_lift_omega(inst),
                U0=list(inst.domain.U0) if inst.domain.U0 is not None else None,
                gamma=inst.domain.gamma,
                R=inst.domain.R,
                control_set=inst.domain.control_set,
                control_bound=inst.domain.control_bound,
            ),
            extended_from=inst,
        )
        magnitude = rollout_magnitude(extended, extended.u0(), extended.domain.gamma, n_samples, seed)
        R = max(inst.domain.R, power_of_two_above(2.0 * magnitude))
        logfire.info("extended system radius", R=R, magnitude=magnitude)
        return with_radius(extended, R, seed=seed)


def calibrate_domain(
        inst: OcpInstance,
        oracle: "OracleSolver",
        margin: float = 1.25,
        n_samples: int = 64,
        seed: int = 0,
) -> OcpInstance:
    """Choose U0, gamma and R from oracle solutions and sampled rollouts."""
    if margin < 1.0:
        raise ValueError("margin must be at least 1")
    with logfire.span("calibrate_domain", instance=inst.name, margin=margin, n_samples=n_samples):
        X = omega_states(inst, n_samples, seed)
        solutions = np.stack([oracle.solve(inst, x) for x in X])
        U0 = solutions.mean(axis=0)
        spread = float(np.max(np.linalg.norm(solutions - U0, axis=1)))
        gamma = max(margin * spread, GAMMA_FLOOR)
        magnitude = rollout_magnitude(inst, U0, gamma, n_samples, seed)
        R = power_of_two_above(2.0 * magnitude)
        domain = inst.domain.model_copy(update={"U0": U0.tolist(), "gamma": gamma})
        calibrated = with_radius(inst.model_copy(update={"domain": domain}), R, seed=seed)
        check_calibration(calibrated, n_samples, seed)
        logfire.info("domain calibrated", U0=U0.tolist(), gamma=gamma, R=R)
        return calibrated


def check_calibration(inst: OcpInstance, n_samples: int = 64, seed: int = 0):
    """Re-check both box invariants and graph compatibility; raises CalibrationFailure."""
    R, gamma, U0 = inst.domain.R, inst.domain.gamma, inst.u0()
    if float(np.max(np.abs(U0), initial=0.0)) + 3.0 * gamma > R:
        raise CalibrationFailure(f"B_3gamma(U0) leaves [-{R}, {R}]^{inst.m}")
    bound = inst.domain.control_bound
    if bound is not None and float(np.max(np.abs(U0), initial=0.0)) + 3.0 * gamma > bound:
        raise CalibrationFailure(f"B_3gamma(U0) leaves the control box of radius {bound}")
    magnitude = rollout_magnitude(inst, U0, gamma, n_samples, seed)
    if magnitude > R / 2.0:
        raise CalibrationFailure(f"sampled rollouts reach {magnitude:.3e}, outside [-R/2, R/2] with R = {R}")
    for name, graph in instance_graphs(inst).items():
        report = validate_graph(graph, seed=seed)
        if not report.passed:
            raise CalibrationFailure(f"{name} graph fails the range check on {len(report.failures())} edges")
