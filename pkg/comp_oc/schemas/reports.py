"""
Report documents emitted by the pipeline and the subcommands.
"""
from typing import Optional, List, Dict, Any
from pydantic import BaseModel, ConfigDict

from comp_oc.models.features import FeatureTuple
from comp_oc.models.synthesis import ConstantLedger, SynthesisPlan


class EdgeRange(BaseModel):
    """Sampled range of an edge's source value against the target node's box."""
    source: str
    target: str
    low: float
    high: float
    radius: float
    contained: bool


class ValidationReport(BaseModel):
    samples: int
    seed: int
    edges: List[EdgeRange]
    passed: bool

    def failures(self) -> List[EdgeRange]:
        return [edge for edge in self.edges if not edge.contained]


class RateReport(BaseModel):
    """Sup error of the assembled surrogate per width plus the fitted log-log slope."""
    widths: List[int]
    errors: List[float]
    slope: Optional[float] = None
    theoretical_slope: float
    exact: bool = False
    bounds: List[float] = []


class WeakErrorReport(BaseModel):
    epsilon: float
    errors: List[float]
    max_error: float
    mean_error: float
    measured_delta: float
    predicted_bound: float
    bound_holds: bool
    total_size: int
    planned_size: int = 0
    size_bound: float
    size_bound_holds: bool
    all_affine: bool = False


class CertificateSummary(BaseModel):
    verdict: str
    min_eig: float
    samples: int
    skipped: int = 0
    note: str = "sampling-based certificate, not a proof"


class SweepRow(BaseModel):
    """One row of the weak-error table; the column order is fixed for plotting."""
    model_config = ConfigDict(frozen=True)

    epsilon: float
    k_bar: int
    h_bar: float
    delta_bar: float
    n_w: int
    size_total: int
    weak_err_max: float
    weak_err_mean: float
    bound_predicted: float


class EpsilonResult(BaseModel):
    plan: SynthesisPlan
    weak: Optional[WeakErrorReport] = None
    refits: int = 0
    surrogate_width: int = 0


class PipelineReport(BaseModel):
    config: Dict[str, Any]
    instance: str
    seed: int
    certificate: Optional[CertificateSummary] = None
    extended: bool = False
    domain: Optional[Dict[str, Any]] = None
    features: Dict[str, FeatureTuple] = {}
    c_frak: Optional[Dict[str, float]] = None
    ledger: Optional[ConstantLedger] = None
    stage_cost_profile: Optional[Dict[str, float]] = None
    results: List[EpsilonResult] = []
    rate: Optional[RateReport] = None
    timestamp: Optional[str] = None
    content_hash: Optional[str] = None
