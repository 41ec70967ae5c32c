from enum import Enum
from typing import Annotated, Optional, List, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from comp_oc.models.graph import CompGraph


class LinearDynamics(BaseModel):
    model_config = ConfigDict(frozen=True)

    type: Literal["linear"] = "linear"
    A: List[List[float]]
    B: List[List[float]]


class GeneralDynamics(BaseModel):
    model_config = ConfigDict(frozen=True)

    type: Literal["general"] = "general"
    graph: CompGraph


class ZeroStageCost(BaseModel):
    model_config = ConfigDict(frozen=True)

    type: Literal["zero"] = "zero"


class SeparatedStageCost(BaseModel):
    """l(x, u) = l1(x) + l2(u)."""
    model_config = ConfigDict(frozen=True)

    type: Literal["separated"] = "separated"
    state_cost: CompGraph
    control_cost: CompGraph


class OmegaBox(BaseModel):
    model_config = ConfigDict(frozen=True)

    type: Literal["box"] = "box"
    low: List[float]
    high: List[float]


class OmegaPoints(BaseModel):
    model_config = ConfigDict(frozen=True)

    type: Literal["points"] = "points"
    points: List[List[float]]


class ControlSet(str, Enum):
    FREE = "free"
    BOX = "box"


Dynamics = Annotated[Union[LinearDynamics, GeneralDynamics], Field(discriminator="type")]
StageCost = Annotated[Union[ZeroStageCost, SeparatedStageCost], Field(discriminator="type")]
Omega = Annotated[Union[OmegaBox, OmegaPoints], Field(discriminator="type")]


class ProblemDomain(BaseModel):
    """Initial-state set, the ball center/radius for controls and the box radius R."""
    model_config = ConfigDict(frozen=True)

    omega: Omega
    U0: Optional[List[float]] = None
    gamma: float = Field(default=1.0, gt=0)
    R: float = Field(default=2.0, gt=0)
    control_set: ControlSet = ControlSet.FREE
    control_bound: Optional[float] = Field(default=None, gt=0)


class OcpInstance(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = "instance"
    n: int = Field(ge=1)
    q: int = Field(ge=1)
    N: int = Field(ge=1)
    dynamics: Dynamics
    stage_cost: StageCost = ZeroStageCost()
    terminal_cost: CompGraph
    domain: ProblemDomain
    extended_from: Optional["OcpInstance"] = None

    @property
    def m(self) -> int:
        return self.q * self.N

    def u0(self) -> np.ndarray:
        return np.asarray(self.domain.U0, dtype=float) if self.domain.U0 is not None else np.zeros(self.m)

    @model_validator(mode="after")
    def _check_dimensions(self):
        dyn = self.dynamics
        if isinstance(dyn, LinearDynamics):
            A, B = np.asarray(dyn.A, dtype=float), np.asarray(dyn.B, dtype=float)
            if A.shape != (self.n, self.n) or B.shape != (self.n, self.q):
                raise ValueError(f"linear dynamics need A {self.n}x{self.n} and B {self.n}x{self.q}")
        elif dyn.graph.input_dim != self.n + self.q or dyn.graph.output_dim != self.n:
            raise ValueError(f"dynamics graph must map {self.n + self.q} inputs to {self.n} outputs")
        if self.terminal_cost.input_dim != self.n or self.terminal_cost.output_dim != 1:
            raise ValueError(f"terminal cost must map {self.n} inputs to one output")
        if isinstance(self.stage_cost, SeparatedStageCost):
            sc = self.stage_cost
            if sc.state_cost.input_dim != self.n or sc.state_cost.output_dim != 1:
                raise ValueError(f"state cost must map {self.n} inputs to one output")
            if sc.control_cost.input_dim != self.q or sc.control_cost.output_dim != 1:
                raise ValueError(f"control cost must map {self.q} inputs to one output")
        omega = self.domain.omega
        if isinstance(omega, OmegaBox) and (len(omega.low) != self.n or len(omega.high) != self.n):
            raise ValueError(f"omega box must have {self.n} coordinates")
        if isinstance(omega, OmegaPoints) and any(len(p) != self.n for p in omega.points):
            raise ValueError(f"omega points must have {self.n} coordinates")
        if self.domain.U0 is not None and len(self.domain.U0) != self.m:
            raise ValueError(f"U0 must have length q*N = {self.m}")
        return self


class RolloutMatrices(BaseModel):
    """A^k and C^(k) for k = 0..N, with x_k = A^k x + C^(k) U."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    C_blocks: np.ndarray
    A_powers: np.ndarray


class Rollout(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    states: np.ndarray
    cost: float


class Verdict(str, Enum):
    STRICTLY_CONVEX = "StrictlyConvex"
    CONVEX_ONLY = "ConvexOnly"
    NOT_CERTIFIED = "NotCertified"


class ConvexityCertificate(BaseModel):
    model_config = ConfigDict(frozen=True)

    verdict: Verdict
    min_eig: float
    samples: int
    witness_x: List[float]
    witness_U: List[float]
    skipped: int = 0
