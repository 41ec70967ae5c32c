"""
Pipeline configuration document.
"""
from enum import Enum
from typing import List

from pydantic import BaseModel, ConfigDict, Field, field_validator

from comp_oc.models.network import Activation
from comp_oc.services.oracle import OracleMode


class Stage(str, Enum):
    CERTIFY = "certify"
    EXTEND = "extend"
    CALIBRATE = "calibrate"
    FEATURES = "features"
    FITRATE = "fitrate"
    PLAN = "plan"
    BUILD = "build"
    EVALUATE = "evaluate"


STAGE_ORDER = list(Stage)


class OracleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: OracleMode = OracleMode.LQ
    tolerance: float = Field(default=1e-12, gt=0)
    max_iters: int = Field(default=10 ** 6, ge=1)


class PipelineConfig(BaseModel):
    """Every field has an explicit default except the instance path (relative to the config file)."""
    model_config = ConfigDict(extra="forbid")

    instance: str
    stages: List[Stage] = [
        Stage.CERTIFY, Stage.EXTEND, Stage.CALIBRATE, Stage.FEATURES, Stage.PLAN, Stage.BUILD, Stage.EVALUATE,
    ]
    seed: int = 0
    epsilons: List[float] = [0.5, 0.25, 0.1]
    widths: List[int] = [8, 16, 32, 64, 128]
    width_ceiling: int = Field(default=10 ** 6, ge=1)
    refits: int = Field(default=3, ge=0)
    margin: float = Field(default=1.25, ge=1.0)
    certify_samples: int = Field(default=256, ge=1)
    calibrate_samples: int = Field(default=64, ge=1)
    estimate_samples: int = Field(default=512, ge=2)
    feature_samples: int = Field(default=4096, ge=1)
    validation_samples: int = Field(default=512, ge=1)
    test_states: int = Field(default=25, ge=1)
    activation: Activation = Activation.TANH
    oracle: OracleConfig = OracleConfig()
    jobs: int = Field(default=1, ge=1)
    out: str = "reports"

    @field_validator("stages")
    @classmethod
    def _ordered_stages(cls, stages: List[Stage]) -> List[Stage]:
        positions = [STAGE_ORDER.index(stage) for stage in stages]
        if positions != sorted(set(positions)):
            raise ValueError(f"stages must be distinct and follow the order {[s.value for s in STAGE_ORDER]}")
        return stages

    @field_validator("epsilons")
    @classmethod
    def _epsilons_in_unit_interval(cls, epsilons: List[float]) -> List[float]:
        if not epsilons or any(not 0.0 < eps < 1.0 for eps in epsilons):
            raise ValueError("epsilons must be a non-empty list of values in (0, 1)")
        return epsilons

    @field_validator("widths")
    @classmethod
    def _increasing_widths(cls, widths: List[int]) -> List[int]:
        if len(widths) < 3 or any(w < 1 for w in widths) or any(b <= a for a, b in zip(widths, widths[1:])):
            raise ValueError("widths must be at least three strictly increasing positive integers")
        return widths

    def runs(self, stage: Stage) -> bool:
        return stage in self.stages
