"""
Error types raised by comp_oc operations.

Every error carries an exit code so the CLI can map failures the same way
an HTTP layer maps exceptions to status codes.
"""
from typing import Optional, List


class CompOcError(Exception):
    exit_code: int = 4

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class DomainViolation(CompOcError):
    """A value left the domain box of the node (or state box) consuming it."""

    def __init__(self, node_id: str, value: float, radius: float):
        super().__init__(
            f"value {value!r} outside domain [-{radius!r}, {radius!r}] of node '{node_id}'"
        )
        self.node_id = node_id
        self.value = value
        self.radius = radius


class IllConditioned(CompOcError):
    def __init__(self, condition: float, width: int, grid_size: int):
        super().__init__(
            f"least-squares condition estimate {condition:.3e} for width {width} on {grid_size} grid points"
        )
        self.condition = condition


class CalibrationFailure(CompOcError):
    pass


class NotQuadratic(CompOcError):
    pass


class NoConvergence(CompOcError):
    def __init__(self, iterations: int, grad_norm: float):
        super().__init__(f"no convergence after {iterations} iterations (gradient norm {grad_norm:.3e})")
        self.iterations = iterations
        self.grad_norm = grad_norm


class PlanInfeasible(CompOcError):
    exit_code = 3


class SurrogateTooCoarse(CompOcError):
    def __init__(self, measured: float, target: float, width: int):
        super().__init__(
            f"surrogate sup error {measured:.3e} exceeds target {target:.3e} at width {width}"
        )
        self.measured = measured
        self.target = target
        self.width = width


class IterateEscaped(CompOcError):
    def __init__(self, step: int, distance: float, radius: float):
        super().__init__(f"iterate {step} at distance {distance:.3e} from U0 exceeds {radius:.3e}")
        self.step = step
        self.distance = distance


class CertificationFailure(CompOcError):
    exit_code = 2


class ConfigError(CompOcError):
    exit_code = 1

    def __init__(self, detail: str, fields: Optional[List[str]] = None):
        super().__init__(detail)
        self.fields = fields or []
