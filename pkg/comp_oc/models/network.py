from enum import Enum
from typing import Dict

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from comp_oc.models.graph import CompGraph


class Activation(str, Enum):
    TANH = "tanh"
    SIGMOID = "sigmoid"


class ShallowNet(BaseModel):
    """One hidden layer, linear readout: outer . sigma(inner z + bias)."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    inner_weights: np.ndarray
    inner_bias: np.ndarray
    outer_weights: np.ndarray
    activation: Activation = Activation.TANH
    width: int = Field(ge=1)
    sup_error: float = 0.0
    condition: float = 0.0

    @property
    def size(self) -> int:
        return self.width

    def hidden(self, Z: np.ndarray) -> np.ndarray:
        pre = Z @ self.inner_weights.T + self.inner_bias
        return np.tanh(pre) if self.activation == Activation.TANH else expit(pre)

    def __call__(self, Z: np.ndarray) -> np.ndarray:
        return self.hidden(Z) @ self.outer_weights


class SurrogateNet(BaseModel):
    """A graph whose general nodes are replaced by shallow nets; affine nodes stay exact."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    graph: CompGraph
    width: int = Field(ge=0)
    node_nets: Dict[str, ShallowNet]
    total_size: int = Field(ge=0)
    fit_report: Dict[str, float] = {}


class SurrogateCost(BaseModel):
    """J^NN(x, U) = g^NN(f^NN(... f^NN(x, u_0) ..., u_{N-1}))."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    dynamics: SurrogateNet
    terminal: SurrogateNet
    state_dim: int = Field(ge=1)
    control_dim: int = Field(ge=1)
    horizon: int = Field(ge=1)
    radius: float = Field(gt=0)

    @property
    def size(self) -> int:
        return self.horizon * self.dynamics.total_size + self.terminal.total_size
