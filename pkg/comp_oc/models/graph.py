from enum import Enum
from typing import Optional, List, Tuple, Dict
from pydantic import BaseModel, ConfigDict, Field, model_validator


class NodeKind(str, Enum):
    AFFINE = "affine"
    QUADRATIC_FORM = "quadratic_form"
    SQUARED_NORM = "squared_norm"
    SCALAR_SMOOTH = "scalar_smooth"
    WEIGHTED_SUM = "weighted_sum"


class SmoothFn(str, Enum):
    TANH = "tanh"
    SOFTPLUS = "softplus"
    EXP_NEG_SQ = "exp_neg_sq"
    POLYNOMIAL = "polynomial"


class NodeParams(BaseModel):
    """Coefficient data of a catalog node. Which fields matter depends on the kind:

    affine:          weights . z + bias
    quadratic_form:  z^T matrix z + linear . z + bias
    squared_norm:    scale * ||z - center||^2
    scalar_smooth:   amplitude * s(scale * z + shift)
    weighted_sum:    sum_i weights_i * s(scale * z_i + shift) + bias
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    weights: Optional[List[float]] = None
    bias: float = 0.0
    matrix: Optional[List[List[float]]] = None
    linear: Optional[List[float]] = None
    center: Optional[List[float]] = None
    smooth: Optional[SmoothFn] = None
    coefficients: Optional[List[float]] = None
    scale: float = 1.0
    shift: float = 0.0
    amplitude: float = 1.0


class NodeFunction(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: NodeKind
    params: NodeParams = NodeParams()
    in_dim: int = Field(ge=1)
    domain_radius: float = Field(gt=0)
    smoothness_order: int = Field(default=2, ge=1)

    @property
    def is_affine(self) -> bool:
        return self.kind == NodeKind.AFFINE

    @model_validator(mode="after")
    def _check_params(self):
        p, d = self.params, self.in_dim
        if self.kind in (NodeKind.AFFINE, NodeKind.WEIGHTED_SUM):
            if p.weights is None or len(p.weights) != d:
                raise ValueError(f"{self.kind.value} node needs {d} weights")
        if self.kind == NodeKind.QUADRATIC_FORM:
            if p.matrix is None or len(p.matrix) != d or any(len(row) != d for row in p.matrix):
                raise ValueError(f"quadratic_form node needs a {d}x{d} matrix")
            if p.linear is not None and len(p.linear) != d:
                raise ValueError(f"quadratic_form linear term must have length {d}")
        if self.kind == NodeKind.SQUARED_NORM and p.center is not None and len(p.center) != d:
            raise ValueError(f"squared_norm center must have length {d}")
        if self.kind == NodeKind.SCALAR_SMOOTH and d != 1:
            raise ValueError("scalar_smooth nodes take exactly one input")
        if self.kind in (NodeKind.SCALAR_SMOOTH, NodeKind.WEIGHTED_SUM):
            if p.smooth is None:
                raise ValueError(f"{self.kind.value} node needs a smooth function tag")
            if p.smooth == SmoothFn.POLYNOMIAL and not p.coefficients:
                raise ValueError("polynomial nodes need coefficients")
        return self


class GraphNode(BaseModel):
    """A vertex of a compositional graph; input nodes have no function and carry their box radius."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str
    layer: int = Field(ge=0)
    function: Optional[NodeFunction] = None
    radius: Optional[float] = Field(default=None, gt=0)

    @property
    def is_input(self) -> bool:
        return self.function is None

    @property
    def is_general(self) -> bool:
        return self.function is not None and not self.function.is_affine


class CompGraph(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    nodes: List[GraphNode]
    edges: List[Tuple[str, str]]
    input_dim: int = Field(ge=1)
    output_dim: int = Field(ge=1)

    def node_map(self) -> Dict[str, GraphNode]:
        return {node.id: node for node in self.nodes}

    def input_ids(self) -> List[str]:
        return [node.id for node in self.nodes if node.is_input]

    def output_ids(self) -> List[str]:
        sources = {src for src, _ in self.edges}
        return [node.id for node in self.nodes if not node.is_input and node.id not in sources]

    def parents(self) -> Dict[str, List[str]]:
        # edge order fixes argument order
        result: Dict[str, List[str]] = {node.id: [] for node in self.nodes}
        for src, dst in self.edges:
            result[dst].append(src)
        return result

    def general_nodes(self) -> List[GraphNode]:
        return [node for node in self.nodes if node.is_general]

    def input_radii(self) -> List[float]:
        return [node.radius for node in self.nodes if node.is_input]

    @model_validator(mode="after")
    def _check_structure(self):
        nodes = self.node_map()
        if len(nodes) != len(self.nodes):
            raise ValueError("node ids must be unique")
        for node in self.nodes:
            if node.is_input and (node.layer != 0 or node.radius is None):
                raise ValueError(f"input node '{node.id}' must sit in layer 0 and declare a radius")
            if not node.is_input and node.layer == 0:
                raise ValueError(f"function node '{node.id}' cannot sit in layer 0")
        for src, dst in self.edges:
            if src not in nodes or dst not in nodes:
                raise ValueError(f"edge ({src}, {dst}) references an unknown node")
            if nodes[src].layer >= nodes[dst].layer:
                raise ValueError(f"edge ({src}, {dst}) does not increase the layer number")
        for node_id, srcs in self.parents().items():
            node = nodes[node_id]
            if not node.is_input and len(srcs) != node.function.in_dim:
                raise ValueError(
                    f"node '{node_id}' has fan-in {len(srcs)} but in_dim {node.function.in_dim}"
                )
        if len(self.input_ids()) != self.input_dim:
            raise ValueError(f"graph declares input_dim {self.input_dim} but has {len(self.input_ids())} inputs")
        if len(self.output_ids()) != self.output_dim:
            raise ValueError(f"graph declares output_dim {self.output_dim} but has {len(self.output_ids())} outputs")
        return self
