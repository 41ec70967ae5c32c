"""
Weak controller synthesis: the constant ledger, the (k_bar, h_bar, delta_bar)
schedule, the surrogate cost network and the unrolled finite-difference
descent controller built on it.
"""
import math
from typing import Optional, Dict, Union, TYPE_CHECKING

import numpy as np
import logfire

from comp_oc.exceptions import (
    PlanInfeasible, SurrogateTooCoarse, IterateEscaped, DomainViolation, CertificationFailure,
)
from comp_oc.functions.common import ball_sample, sphere_sample
from comp_oc.functions.compgraph import lipschitz_estimate, DOMAIN_TOLERANCE
from comp_oc.functions.features import SAFETY_FACTOR
from comp_oc.functions.ocp import (
    grad_J, hess_J, cost_batch, sample_omega, dynamics_graph, lift_state, _check_states,
)
from comp_oc.functions.shallow_nn import assemble_surrogate, eval_surrogate, rate_constant
from comp_oc.models.features import FeatureTuple
from comp_oc.models.graph import CompGraph
from comp_oc.models.network import SurrogateCost, Activation
from comp_oc.models.ocp import OcpInstance, ZeroStageCost, ConvexityCertificate, Verdict
from comp_oc.models.synthesis import ConstantLedger, SynthesisPlan, UnrolledController
from comp_oc.schemas.reports import WeakErrorReport

if TYPE_CHECKING:
    from comp_oc.services.oracle import OracleSolver

CONSTANT_FLOOR = 1e-12
PLAN_TOLERANCE = 1e-12
DEFAULT_WIDTH_CEILING = 10 ** 6

CostSource = Union[OcpInstance, SurrogateCost]


def _ball_and_sphere(center: np.ndarray, radius: float, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    # sup estimates of convex quantities sit on the boundary, so half the points go there
    inner = ball_sample(center, radius, n_samples - n_samples // 2, rng)
    outer = sphere_sample(center, radius, n_samples // 2, rng)
    return np.vstack([inner, outer])


def check_nonexpansive(inst: OcpInstance, alpha: float, n_samples: int = 256, seed: int = 0) -> float:
    """Sampled max of ||I - alpha D^2_U J||_2 over Omega x B_{2 gamma}(U0)."""
    rng = np.random.default_rng(seed + 1)
    X = sample_omega(inst, n_samples, seed)
    U = _ball_and_sphere(inst.u0(), 2.0 * inst.domain.gamma, n_samples, rng)
    H = hess_J(inst, X, U, check_domain=False)
    M = np.eye(inst.m)[None] - alpha * H
    return float(np.max(np.linalg.norm(M, ord=2, axis=(1, 2))))


def estimate_constants(inst: OcpInstance, n_samples: int = 512, seed: int = 0) -> ConstantLedger:
    """Sampled L1 over Omega x B_{3 gamma}(U0) and L2 over Omega x B_{2 gamma}(U0), with safety factor."""
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    with logfire.span("estimate_constants", instance=inst.name, n_samples=n_samples, seed=seed):
        gamma, U0 = inst.domain.gamma, inst.u0()
        X = sample_omega(inst, n_samples, seed)

        rng = np.random.default_rng(seed)
        U3 = _ball_and_sphere(U0, 3.0 * gamma, n_samples, rng)
        grads = grad_J(inst, X, U3, check_domain=False)
        L1 = max(SAFETY_FACTOR * float(np.max(np.linalg.norm(grads, axis=1))), CONSTANT_FLOOR)

        rng = np.random.default_rng(seed)
        U2 = _ball_and_sphere(U0, 2.0 * gamma, n_samples, rng)
        H = hess_J(inst, X, U2, check_domain=False)
        L2 = max(SAFETY_FACTOR * float(np.max(np.linalg.norm(H, ord=2, axis=(1, 2)))), CONSTANT_FLOOR)
        partials = SAFETY_FACTOR * float(np.max(np.abs(np.diagonal(H, axis1=1, axis2=2))))

        alpha = 1.0 / L2
        ledger = ConstantLedger(
            L1=L1, L2=L2, alpha=alpha, gamma=gamma, U0=U0.tolist(), m=inst.m,
            second_partials_max=partials,
            nonexpansive_norm=check_nonexpansive(inst, alpha, max(n_samples // 2, 1), seed),
            samples=n_samples,
        )
        logfire.info("constants estimated", L1=L1, L2=L2, nonexpansive_norm=ledger.nonexpansive_norm)
        return ledger


def compute_c_frak(
        f_graph: CompGraph,
        g_graph: CompGraph,
        f_feat: FeatureTuple,
        g_feat: FeatureTuple,
        horizon: int,
        n_samples: int = 1024,
        seed: int = 0,
) -> Dict[str, float]:
    """The constant c of n_w(delta) = ceil((c / delta)^r) with its ingredients.

    J^NN - J is bounded by L^g * sum_k (L^f)^k * err_f + err_g, with node errors
    err = C * L_max * Lambda * |V_G| * n_w^(-1/r).
    """
    L_f = lipschitz_estimate(f_graph, n_samples, seed)
    L_g = lipschitz_estimate(g_graph, n_samples, seed)
    if abs(L_f - 1.0) < 1e-12:
        geometric = float(horizon)
    else:
        geometric = (L_f ** horizon - 1.0) / (L_f - 1.0)
    C_f, C_g = rate_constant(f_graph), rate_constant(g_graph)
    term_f = C_f * f_feat.l_max * f_feat.lambda_ * f_feat.v_g
    term_g = C_g * g_feat.l_max * g_feat.lambda_ * g_feat.v_g
    c_tilde = L_g * geometric * term_f + term_g
    c_frak = max(c_tilde, 2.0 * geometric * term_f)
    logfire.info("c_frak computed", c_frak=c_frak, L_f=L_f, L_g=L_g, geometric=geometric)
    return {
        "c_frak": c_frak, "c_tilde_1": c_tilde, "geometric": geometric,
        "L_f": L_f, "L_g": L_g, "C_f": C_f, "C_g": C_g,
    }


def containment_sum(k: int, h: float, delta: float, m: int, L2: float) -> float:
    """k (h sqrt(m) + 2 delta sqrt(m) / (h L2)): the distance surrogate iterates may drift."""
    root = math.sqrt(m)
    return k * (h * root + 2.0 * delta * root / (h * L2))


def predicted_weak_bound(L1: float, L2: float, gamma: float, m: int, k: int, h: float, delta: float) -> float:
    return L1 * containment_sum(k, h, delta, m, L2) + 2.0 * L2 * gamma ** 2 / (k + 4)


def size_constant_c1(L1: float, L2: float, gamma: float) -> float:
    """2 (6 L2 gamma^2 + 1)^2 / (L2 mu^2) with mu = min(1 / (3 L1), gamma / 2).

    With k_bar <= (6 L2 gamma^2 + 1) / epsilon and step_cap >= mu epsilon this gives
    1 / delta_bar <= m C1 / epsilon^4.
    """
    mu = min(1.0 / (3.0 * L1), gamma / 2.0)
    return 2.0 * (6.0 * L2 * gamma ** 2 + 1.0) ** 2 / (L2 * mu ** 2)


def size_constant_c2(L2: float, gamma: float) -> float:
    """12 L2 gamma^2 + 2, so that 2 k_bar <= C2 / epsilon."""
    return 12.0 * L2 * gamma ** 2 + 2.0


def plan_synthesis(
        ledger: ConstantLedger,
        C_frak: float,
        r: float,
        epsilon: float,
        width_ceiling: int = DEFAULT_WIDTH_CEILING,
) -> SynthesisPlan:
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if r <= 0:
        raise ValueError("r must be positive")
    with logfire.span("plan_synthesis", epsilon=epsilon, C_frak=C_frak, r=r):
        L1, L2, gamma, m = ledger.L1, ledger.L2, ledger.gamma, ledger.m
        root = math.sqrt(m)
        # relative slack keeps exact quotients like 6/0.1 from rounding up a step
        k_bar = max(int(math.ceil(6.0 * L2 * gamma ** 2 / epsilon * (1.0 - PLAN_TOLERANCE))), 1)
        step_cap = min(epsilon / (3.0 * L1), gamma / 2.0)
        h_bar = step_cap / (k_bar * root)
        delta_bar = h_bar * L2 * step_cap / (2.0 * root * k_bar)
        width = int(math.ceil((C_frak / delta_bar) ** r)) if C_frak > 0 else 0
        if width > width_ceiling:
            logfire.error("surrogate width above ceiling", width=width, ceiling=width_ceiling, epsilon=epsilon)
            raise PlanInfeasible(
                f"epsilon = {epsilon} needs {width} neurons per node, above the ceiling {width_ceiling}"
            )

        containment = containment_sum(k_bar, h_bar, delta_bar, m, L2)
        predicted = predicted_weak_bound(L1, L2, gamma, m, k_bar, h_bar, delta_bar)
        if containment > gamma * (1.0 + PLAN_TOLERANCE) or predicted > epsilon * (1.0 + PLAN_TOLERANCE):
            raise PlanInfeasible(
                f"schedule check failed: containment {containment:.3e} vs gamma {gamma:.3e}, "
                f"bound {predicted:.3e} vs epsilon {epsilon:.3e}"
            )
        plan = SynthesisPlan(
            epsilon=epsilon, k_bar=k_bar, h_bar=h_bar, delta_bar=delta_bar,
            surrogate_width=width, C_frak=C_frak, r=r,
            C1=size_constant_c1(L1, L2, gamma),
            C2=size_constant_c2(L2, gamma),
            alpha=ledger.alpha, gamma=gamma, step_cap=step_cap,
            containment=containment, predicted_bound=predicted,
        )
        logfire.info("synthesis planned", k_bar=k_bar, h_bar=h_bar, delta_bar=delta_bar, width=width)
        return plan


def size_bound(plan: SynthesisPlan, f_nodes: int, g_nodes: int, horizon: int, q: int) -> float:
    """C1^r C2 (N |V_G^f| + |V_G^g|) (1 + c^r) (qN)^(r+1) / epsilon^(4r+1).

    Dominates planned_size for every plan, since n_w <= 1 + (c / delta_bar)^r and
    m C1 / epsilon^4 >= 1.
    """
    r = plan.r
    nodes = horizon * f_nodes + g_nodes
    return (
        plan.C1 ** r * plan.C2 * nodes * (1.0 + plan.C_frak ** r)
        * (q * horizon) ** (r + 1.0) / plan.epsilon ** (4.0 * r + 1.0)
    )


def build_surrogate_cost(
        inst: OcpInstance,
        width: int,
        seed: int,
        activation: Activation = Activation.TANH,
        jobs: int = 1,
) -> SurrogateCost:
    if not isinstance(inst.stage_cost, ZeroStageCost):
        raise ValueError("the surrogate cost composes g and f only; extend the system first")
    return SurrogateCost(
        dynamics=assemble_surrogate(dynamics_graph(inst), width, seed, activation, jobs),
        terminal=assemble_surrogate(inst.terminal_cost, width, seed, activation, jobs),
        state_dim=inst.n,
        control_dim=inst.q,
        horizon=inst.N,
        radius=inst.domain.R,
    )


def surrogate_cost_batch(sc: SurrogateCost, X: np.ndarray, U: np.ndarray, check_domain: bool = True) -> np.ndarray:
    """J^NN for a batch of (x, U) pairs; only states and controls are checked against R."""
    if check_domain:
        _check_states(X, sc.radius, "state")
        _check_states(U, sc.radius, "control")
    controls = U.reshape(len(U), sc.horizon, sc.control_dim)
    state = X
    for k in range(sc.horizon):
        state = eval_surrogate(sc.dynamics, np.hstack([state, controls[:, k]]), check_domain=False)
        if check_domain:
            _check_states(state, sc.radius, "state")
    return eval_surrogate(sc.terminal, state, check_domain=False)[:, 0]


def evaluate_cost(source: CostSource, X: np.ndarray, U: np.ndarray, check_domain: bool = True) -> np.ndarray:
    if isinstance(source, SurrogateCost):
        return surrogate_cost_batch(source, X, U, check_domain)
    return cost_batch(source, X, U, check_domain=check_domain)


def exact_descent_step(inst: OcpInstance, x, U, alpha: float) -> np.ndarray:
    """U - alpha grad_J(x, U)."""
    return np.asarray(U, dtype=float) - alpha * grad_J(inst, x, U)


def fd_gradient(source: CostSource, x, U, h: float, check_domain: bool = True) -> np.ndarray:
    """Forward differences (J(x, U + h e_j) - J(x, U)) / h, all m + 1 evaluations in one batch."""
    if h <= 0:
        raise ValueError("h must be positive")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Ub = np.atleast_2d(np.asarray(U, dtype=float))
    single = np.ndim(U) == 1
    if len(X) == 1 and len(Ub) > 1:
        X = np.repeat(X, len(Ub), axis=0)
    b, m = Ub.shape
    shifted = Ub[:, None, :] + np.concatenate([np.zeros((1, m)), h * np.eye(m)])[None]
    values = evaluate_cost(
        source, np.repeat(X, m + 1, axis=0), shifted.reshape(b * (m + 1), m), check_domain,
    ).reshape(b, m + 1)
    grad = (values[:, 1:] - values[:, :1]) / h
    return grad[0] if single else grad


def fd_descent_step(source: CostSource, x, U, alpha: float, h: float, check_domain: bool = True) -> np.ndarray:
    """U - alpha * forward-difference gradient of the exact cost or of its surrogate."""
    return np.asarray(U, dtype=float) - alpha * fd_gradient(source, x, U, h, check_domain)


def descend(
        source: CostSource,
        X: np.ndarray,
        U0: np.ndarray,
        alpha: float,
        h: float,
        steps: int,
        gamma: float,
) -> np.ndarray:
    """steps forward-difference descent iterations from U0; every iterate must stay in B_{3 gamma}(U0)."""
    U = np.repeat(np.asarray(U0, dtype=float)[None], len(X), axis=0)
    limit = 3.0 * gamma
    for k in range(steps):
        U = fd_descent_step(source, X, U, alpha, h)
        distance = float(np.max(np.linalg.norm(U - U0, axis=1)))
        if distance > limit * (1.0 + PLAN_TOLERANCE):
            logfire.error("iterate left the control ball", step=k + 1, distance=distance, radius=limit)
            raise IterateEscaped(k + 1, distance, limit)
    return U


def measure_surrogate_delta(
        inst: OcpInstance, sc: SurrogateCost, n_samples: int = 512, seed: int = 0
) -> float:
    """Sup |J^NN - J| over sampled Omega x B_{3 gamma}(U0)."""
    rng = np.random.default_rng(seed + 3)
    X = sample_omega(inst, n_samples, seed + 3)
    U = _ball_and_sphere(inst.u0(), 3.0 * inst.domain.gamma, n_samples, rng)
    exact = cost_batch(inst, X, U, check_domain=False)
    approx = surrogate_cost_batch(sc, X, U, check_domain=False)
    return float(np.max(np.abs(exact - approx)))


def planned_size(plan: SynthesisPlan, f_nodes: int, g_nodes: int, horizon: int, q: int) -> int:
    """2 k_bar m (N |V_G^f| + |V_G^g|) n_w at the planned width, before any refit."""
    return 2 * plan.k_bar * q * horizon * (horizon * f_nodes + g_nodes) * plan.surrogate_width


def build_controller(
        inst: OcpInstance,
        plan: SynthesisPlan,
        ledger: ConstantLedger,
        certificate: ConvexityCertificate,
        seed: int = 0,
        refits: int = 3,
        validation_samples: int = 512,
        activation: Activation = Activation.TANH,
        jobs: int = 1,
) -> UnrolledController:
    """Fit J^NN at the planned width (doubling up to refits times) and unroll k_bar descent steps.

    The certificate comes from certify_convexity on inst (or on the instance
    inst was extended from) and must not be NotCertified.
    """
    if certificate.verdict == Verdict.NOT_CERTIFIED:
        logfire.error("controller requested without convexity", instance=inst.name, min_eig=certificate.min_eig)
        raise CertificationFailure(
            f"'{inst.name}' is not certified convex (sampled min eigenvalue {certificate.min_eig:.3e})"
        )
    if not isinstance(inst.stage_cost, ZeroStageCost):
        raise ValueError("build_controller needs a zero stage cost; apply extend_system first")
    f_general = len(dynamics_graph(inst).general_nodes())
    g_general = len(inst.terminal_cost.general_nodes())
    with logfire.span("build_controller", instance=inst.name, epsilon=plan.epsilon, width=plan.surrogate_width):
        width = plan.surrogate_width
        if f_general + g_general > 0:
            width = max(width, 1)
        attempt = 0
        while True:
            sc = build_surrogate_cost(inst, width, seed, activation, jobs)
            delta = measure_surrogate_delta(inst, sc, validation_samples, seed)
            logfire.info("surrogate validated", width=width, delta=delta, target=plan.delta_bar, attempt=attempt)
            if delta <= plan.delta_bar:
                break
            if attempt >= refits:
                logfire.error("surrogate too coarse", width=width, delta=delta, target=plan.delta_bar)
                raise SurrogateTooCoarse(delta, plan.delta_bar, width)
            attempt += 1
            width *= 2

        return UnrolledController(
            surrogate=sc,
            plan=plan,
            ledger=ledger,
            steps=plan.k_bar,
            fd_step=plan.h_bar,
            alpha=plan.alpha,
            U0=inst.u0().tolist(),
            gamma=inst.domain.gamma,
            surrogate_width=sc.dynamics.width or sc.terminal.width,
            measured_delta=delta,
            refits=attempt,
            general_nodes_f=f_general,
            general_nodes_g=g_general,
            lifted=inst.extended_from is not None,
            total_size=2 * plan.k_bar * inst.m * sc.size,
            planned_size=planned_size(plan, f_general, g_general, inst.N, inst.q),
        )


def run_controller(ctrl: UnrolledController, x, steps: Optional[int] = None) -> np.ndarray:
    """U^NN(x) for one state or a batch; states of the unextended system are lifted to (x, 0)."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if ctrl.lifted and X.shape[1] == ctrl.surrogate.state_dim - 1:
        X = lift_state(X)
    if X.shape[1] != ctrl.surrogate.state_dim:
        raise ValueError(f"expected states of length {ctrl.surrogate.state_dim}")
    U = descend(
        ctrl.surrogate, X, np.asarray(ctrl.U0), ctrl.alpha, ctrl.fd_step,
        ctrl.steps if steps is None else steps, ctrl.gamma,
    )
    return U[0] if single else U


def run_exact_fd(inst: OcpInstance, plan: SynthesisPlan, x, steps: Optional[int] = None) -> np.ndarray:
    """The same unrolled schedule on the exact cost: iterated forward-difference descent."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    return descend(inst, X, inst.u0(), plan.alpha, plan.h_bar, plan.k_bar if steps is None else steps, plan.gamma)


def evaluate_controller(
        ctrl: UnrolledController,
        inst: OcpInstance,
        test_states,
        oracle: "OracleSolver",
) -> WeakErrorReport:
    """Weak errors J(x, U^NN(x)) - J(x, U*(x)) over test states with the predicted and size bounds."""
    X = np.atleast_2d(np.asarray(test_states, dtype=float))
    with logfire.span("evaluate_controller", instance=inst.name, states=len(X), epsilon=ctrl.plan.epsilon):
        try:
            U = run_controller(ctrl, X)
        except (IterateEscaped, DomainViolation) as e:
            logfire.error("controller evaluation failed", error=str(e), error_type=type(e).__name__)
            raise
        if inst.n == X.shape[1] + 1:
            X = lift_state(X)
        optimal = np.stack([oracle.solve(inst, x) for x in X])
        errors = cost_batch(inst, X, U, check_domain=False) - cost_batch(inst, X, optimal, check_domain=False)

        ledger, plan = ctrl.ledger, ctrl.plan
        predicted = predicted_weak_bound(
            ledger.L1, ledger.L2, ledger.gamma, ledger.m, ctrl.steps, ctrl.fd_step, ctrl.measured_delta,
        )
        bound = size_bound(
            plan, ctrl.general_nodes_f, ctrl.general_nodes_g, ctrl.surrogate.horizon, ctrl.surrogate.control_dim,
        )
        max_error = float(np.max(errors))
        report = WeakErrorReport(
            epsilon=plan.epsilon,
            errors=errors.tolist(),
            max_error=max_error,
            mean_error=float(np.mean(errors)),
            measured_delta=ctrl.measured_delta,
            predicted_bound=predicted,
            bound_holds=max_error <= predicted + DOMAIN_TOLERANCE,
            total_size=ctrl.total_size,
            size_bound=bound,
            planned_size=ctrl.planned_size,
            size_bound_holds=ctrl.planned_size <= bound,
            all_affine=ctrl.all_affine,
        )
        logfire.info("controller evaluated", max_error=max_error, predicted=predicted, epsilon=plan.epsilon)
        return report
