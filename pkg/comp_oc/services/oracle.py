"""
Ground-truth solvers for U*(x), used for calibration and for scoring controllers.
"""
from enum import Enum
from typing import Optional, Tuple

import numpy as np
import logfire
from pydantic import BaseModel, ConfigDict, Field
from scipy.linalg import lstsq

from comp_oc.exceptions import NotQuadratic, NoConvergence
from comp_oc.functions import catalog
from comp_oc.functions.ocp import grad_J, hess_J, cost_batch, instance_graphs
from comp_oc.models.graph import CompGraph
from comp_oc.models.ocp import OcpInstance, LinearDynamics

SINGULAR_CUTOFF = 1e-12
STAGNATION = 1e-16
CURVATURE_REFRESH = 1000
CURVATURE_FLOOR = 1e-12


class OracleMode(str, Enum):
    LQ = "lq"
    NUMERIC = "numeric"


def graph_degree(graph: CompGraph) -> float:
    """Polynomial degree of the graph's output in its inputs (inf if not polynomial)."""
    degree = {node_id: 1.0 for node_id in graph.input_ids()}
    parents = graph.parents()
    for node in sorted((n for n in graph.nodes if not n.is_input), key=lambda n: n.layer):
        incoming = max(degree[src] for src in parents[node.id])
        degree[node.id] = catalog.polynomial_degree(node.function) * incoming
    return max(degree[node_id] for node_id in graph.output_ids())


class OracleSolver(BaseModel):
    """Computes minimizers of J(x, .) either in closed form (linear dynamics,
    quadratic costs) or by plain gradient descent.

    Among several minimizers the closed form returns the one of minimum norm.
    """
    model_config = ConfigDict(frozen=True)

    mode: OracleMode = OracleMode.LQ
    tolerance: float = Field(default=1e-12, gt=0)
    max_iters: int = Field(default=10 ** 6, ge=1)
    min_norm: bool = True
    residual_limit: float = 1e-10

    def solve(self, inst: OcpInstance, x) -> np.ndarray:
        if self.mode == OracleMode.LQ:
            return self.solve_lq(inst, x)
        return self.solve_numeric(inst, x)

    def optimal_value(self, inst: OcpInstance, x) -> float:
        U = self.solve(inst, x)
        return float(cost_batch(inst, np.asarray(x, dtype=float)[None], U[None], check_domain=False)[0])

    def _base(self, inst: OcpInstance, x) -> Tuple[OcpInstance, np.ndarray]:
        # an extended instance has the same minimizers as the instance it came from
        x = np.asarray(x, dtype=float)
        if inst.extended_from is not None:
            base = inst.extended_from
            return base, x[:base.n]
        return inst, x

    def solve_lq(self, inst: OcpInstance, x) -> np.ndarray:
        """
        Closed-form minimizer for linear dynamics and quadratic costs.

        Args:
            inst: Instance (or an extended instance built from one)
            x: Initial state

        Returns:
            U*(x), the minimum-norm solution of H U = -c when min_norm is set
        """
        base, xb = self._base(inst, x)
        if not isinstance(base.dynamics, LinearDynamics):
            raise NotQuadratic(f"closed form needs linear dynamics, '{base.name}' has a dynamics graph")
        for name, graph in instance_graphs(base).items():
            if name != "dynamics" and graph_degree(graph) > 2:
                raise NotQuadratic(f"{name} of '{base.name}' is not quadratic")
        zero = np.zeros(base.m)
        H = hess_J(base, xb, zero, check_domain=False)
        c = grad_J(base, xb, zero, check_domain=False)
        if self.min_norm:
            U, _, _, _ = lstsq(H, -c, cond=SINGULAR_CUTOFF, lapack_driver="gelsd")
        else:
            U = np.linalg.solve(H, -c)
        residual = float(np.linalg.norm(H @ U + c))
        if residual > self.residual_limit * max(1.0, float(np.linalg.norm(c))):
            logfire.error("normal equations inconsistent", instance=base.name, residual=residual)
            raise NotQuadratic(f"J of '{base.name}' is unbounded below (normal-equation residual {residual:.3e})")
        return U

    def _curvature(self, inst: OcpInstance, x: np.ndarray, U: np.ndarray) -> float:
        H = hess_J(inst, x, U, check_domain=False)
        return max(1.1 * float(np.linalg.norm(H, ord=2)), CURVATURE_FLOOR)

    def solve_numeric(self, inst: OcpInstance, x, start: Optional[np.ndarray] = None) -> np.ndarray:
        """Gradient descent with step 1/L2 until the gradient norm drops below tolerance."""
        x = np.asarray(x, dtype=float)
        U = np.array(start if start is not None else inst.u0(), dtype=float)
        with logfire.span("solve_numeric", instance=inst.name, tolerance=self.tolerance):
            g = grad_J(inst, x, U, check_domain=False)
            L = self._curvature(inst, x, U)
            grad_norm = float(np.linalg.norm(g))
            for iteration in range(self.max_iters):
                grad_norm = float(np.linalg.norm(g))
                if grad_norm <= self.tolerance:
                    return U
                step = g / L
                if np.linalg.norm(step) <= STAGNATION * (1.0 + np.linalg.norm(U)):
                    logfire.error(
                        "gradient descent stalled at machine precision",
                        iteration=iteration, grad_norm=grad_norm, tolerance=self.tolerance,
                    )
                    raise NoConvergence(iteration, grad_norm)
                U = U - step
                g = grad_J(inst, x, U, check_domain=False)
                if (iteration + 1) % CURVATURE_REFRESH == 0:
                    L = max(L, self._curvature(inst, x, U))
            raise NoConvergence(self.max_iters, grad_norm)
