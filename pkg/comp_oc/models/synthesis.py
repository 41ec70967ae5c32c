from typing import List
from pydantic import BaseModel, ConfigDict, Field

from comp_oc.models.network import SurrogateCost


class ConstantLedger(BaseModel):
    """Sampled smoothness constants of J(x, .) around U0."""
    model_config = ConfigDict(frozen=True)

    L1: float = Field(gt=0)
    L2: float = Field(gt=0)
    alpha: float = Field(gt=0)
    gamma: float = Field(gt=0)
    U0: List[float]
    m: int = Field(ge=1)
    second_partials_max: float = 0.0
    nonexpansive_norm: float = 0.0
    samples: int = 0


class SynthesisPlan(BaseModel):
    """Schedule (k_bar, h_bar, delta_bar) and surrogate width for one target epsilon."""
    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(gt=0, lt=1)
    k_bar: int = Field(ge=1)
    h_bar: float = Field(gt=0)
    delta_bar: float = Field(gt=0)
    surrogate_width: int = Field(ge=0)
    C_frak: float = Field(ge=0)
    r: float = Field(gt=0)
    C1: float
    C2: float
    alpha: float = Field(gt=0)
    gamma: float = Field(gt=0)
    step_cap: float
    containment: float
    predicted_bound: float


class UnrolledController(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    surrogate: SurrogateCost
    plan: SynthesisPlan
    ledger: ConstantLedger
    steps: int = Field(ge=1)
    fd_step: float = Field(gt=0)
    alpha: float = Field(gt=0)
    U0: List[float]
    gamma: float = Field(gt=0)
    surrogate_width: int = Field(ge=0)
    measured_delta: float = Field(ge=0)
    refits: int = 0
    general_nodes_f: int = 0
    general_nodes_g: int = 0
    lifted: bool = False
    total_size: int = Field(ge=0)
    planned_size: int = Field(default=0, ge=0)

    @property
    def all_affine(self) -> bool:
        return self.general_nodes_f + self.general_nodes_g == 0
