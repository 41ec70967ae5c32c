"""
The staged pipeline: certify, extend, calibrate, features, fitrate, plan,
build and evaluate, followed by the report document and CSV tables.
"""
import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Dict, List, Tuple

import logfire
import pandas as pd
from joblib import Parallel, delayed
from pydantic import ValidationError

from comp_oc.exceptions import CertificationFailure
from comp_oc.functions.features import compute_features, synthesis_exponent, corollary_size_profile
from comp_oc.functions.ocp import certify_convexity, extend_system, calibrate_domain, dynamics_graph, sample_omega
from comp_oc.functions.shallow_nn import measure_rate
from comp_oc.functions.synth import (
    estimate_constants, compute_c_frak, plan_synthesis, build_controller, evaluate_controller,
)
from comp_oc.models.features import FeatureTuple
from comp_oc.models.graph import CompGraph
from comp_oc.models.ocp import OcpInstance, SeparatedStageCost, Verdict, ConvexityCertificate
from comp_oc.models.synthesis import ConstantLedger, SynthesisPlan
from comp_oc.parsers.config import config_error
from comp_oc.parsers.instance import load_instance
from comp_oc.schemas.config import PipelineConfig, Stage
from comp_oc.schemas.reports import (
    PipelineReport, CertificateSummary, EpsilonResult, SweepRow, RateReport,
)
from comp_oc.services.oracle import OracleSolver

REPORT_FILE = "report.json"
WEAK_ERROR_TABLE = "weak_error.csv"
RATE_TABLE = "rate.csv"
FEATURE_TABLE = "features.csv"
LEDGER_TABLE = "ledger.csv"
TEST_STATE_SEED_OFFSET = 7


def make_oracle(config: PipelineConfig) -> OracleSolver:
    return OracleSolver(
        mode=config.oracle.mode, tolerance=config.oracle.tolerance, max_iters=config.oracle.max_iters,
    )


def read_instance(config: PipelineConfig, base_dir: Path) -> OcpInstance:
    path = base_dir / config.instance
    try:
        return load_instance(path)
    except ValidationError as e:
        raise config_error(e, str(path))


def rate_graph(inst: OcpInstance) -> CompGraph:
    """Graph used for the width sweep: the terminal cost unless only the dynamics carry general nodes."""
    if inst.terminal_cost.general_nodes():
        return inst.terminal_cost
    dyn = dynamics_graph(inst)
    return dyn if dyn.general_nodes() else inst.terminal_cost


def _solve_epsilon(
        work: OcpInstance,
        original: OcpInstance,
        config: PipelineConfig,
        ledger: ConstantLedger,
        certificate: Optional[ConvexityCertificate],
        c_frak: float,
        r: float,
        epsilon: float,
        oracle: OracleSolver,
) -> EpsilonResult:
    plan = plan_synthesis(ledger, c_frak, r, epsilon, config.width_ceiling)
    if not config.runs(Stage.BUILD):
        return EpsilonResult(plan=plan, surrogate_width=plan.surrogate_width)
    ctrl = build_controller(
        work, plan, ledger, certificate, seed=config.seed, refits=config.refits,
        validation_samples=config.validation_samples, activation=config.activation,
    )
    weak = None
    if config.runs(Stage.EVALUATE):
        states = sample_omega(original, config.test_states, config.seed + TEST_STATE_SEED_OFFSET)
        weak = evaluate_controller(ctrl, original, states, oracle)
    return EpsilonResult(plan=plan, weak=weak, refits=ctrl.refits, surrogate_width=ctrl.surrogate_width)


def content_hash(report: PipelineReport) -> str:
    """SHA-256 of the report without its timestamp and hash fields."""
    payload = report.model_dump(mode="json", by_alias=True, exclude={"timestamp", "content_hash"})
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def run_pipeline(config: PipelineConfig, base_dir: Path) -> PipelineReport:
    with logfire.span("run_pipeline", instance=config.instance, stages=[s.value for s in config.stages],
                      seed=config.seed):
        inst = read_instance(config, base_dir)
        oracle = make_oracle(config)
        seed = config.seed
        report = PipelineReport(
            config=config.model_dump(mode="json"), instance=inst.name, seed=seed,
        )

        cert: Optional[ConvexityCertificate] = None
        # building a controller always needs a certificate, even when it is not reported
        if config.runs(Stage.CERTIFY) or config.runs(Stage.BUILD):
            cert = certify_convexity(inst, config.certify_samples, seed)
            if config.runs(Stage.CERTIFY):
                report.certificate = CertificateSummary(
                    verdict=cert.verdict.value, min_eig=cert.min_eig, samples=cert.samples, skipped=cert.skipped,
                )
            if cert.verdict == Verdict.NOT_CERTIFIED:
                logfire.error("convexity not certified", instance=inst.name, min_eig=cert.min_eig)
                raise CertificationFailure(
                    f"'{inst.name}' is not certified convex (min eigenvalue {cert.min_eig:.3e})"
                )

        work = inst
        if config.runs(Stage.EXTEND) and isinstance(inst.stage_cost, SeparatedStageCost):
            work = extend_system(inst, seed=seed)
            report.extended = True
        if config.runs(Stage.CALIBRATE):
            work = calibrate_domain(work, oracle, config.margin, config.calibrate_samples, seed)
        report.domain = work.domain.model_dump(mode="json")

        features: Dict[str, FeatureTuple] = {}
        c_frak: Optional[Dict[str, float]] = None
        r = 1.0
        needs_features = config.runs(Stage.FEATURES) or config.runs(Stage.PLAN)
        if needs_features:
            f_graph, g_graph = dynamics_graph(work), work.terminal_cost
            features["f"] = compute_features(f_graph, config.feature_samples, seed)
            features["g"] = compute_features(g_graph, config.feature_samples, seed)
            if isinstance(inst.stage_cost, SeparatedStageCost):
                stage = inst.stage_cost
                features["l1"] = compute_features(stage.state_cost, config.feature_samples, seed)
                features["l2"] = compute_features(stage.control_cost, config.feature_samples, seed)
                profile = corollary_size_profile(features["l1"], features["l2"], features["g"], inst.q)
                report.stage_cost_profile = dict(zip(["r", "epsilon_exponent", "structural_factor"], profile))
            c_frak = compute_c_frak(f_graph, g_graph, features["f"], features["g"], work.N, seed=seed)
            r = synthesis_exponent(f_graph, g_graph)
            report.features = features
            report.c_frak = c_frak

        if config.runs(Stage.FITRATE):
            report.rate = measure_rate(rate_graph(work), config.widths, seed, config.activation)

        if config.runs(Stage.PLAN):
            ledger = estimate_constants(work, config.estimate_samples, seed)
            report.ledger = ledger
            jobs = min(config.jobs, len(config.epsilons))
            tasks = (
                delayed(_solve_epsilon)(work, inst, config, ledger, cert, c_frak["c_frak"], r, eps, oracle)
                for eps in config.epsilons
            )
            report.results = list(Parallel(n_jobs=jobs)(tasks)) if jobs > 1 else [
                _solve_epsilon(work, inst, config, ledger, cert, c_frak["c_frak"], r, eps, oracle)
                for eps in config.epsilons
            ]

        report.timestamp = datetime.now(timezone.utc).isoformat()
        report.content_hash = content_hash(report)
        logfire.info("pipeline finished", instance=inst.name, content_hash=report.content_hash)
        return report


def sweep_rows(report: PipelineReport) -> List[SweepRow]:
    rows = []
    for result in report.results:
        plan, weak = result.plan, result.weak
        rows.append(SweepRow(
            epsilon=plan.epsilon,
            k_bar=plan.k_bar,
            h_bar=plan.h_bar,
            delta_bar=plan.delta_bar,
            n_w=result.surrogate_width,
            size_total=weak.total_size if weak is not None else 0,
            weak_err_max=weak.max_error if weak is not None else float("nan"),
            weak_err_mean=weak.mean_error if weak is not None else float("nan"),
            bound_predicted=weak.predicted_bound if weak is not None else plan.predicted_bound,
        ))
    return rows


def weak_error_table(report: PipelineReport) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in sweep_rows(report)], columns=list(SweepRow.model_fields))


def rate_table(rate: RateReport) -> pd.DataFrame:
    return pd.DataFrame({"n_w": rate.widths, "sup_error": rate.errors, "bound": rate.bounds or None})


def feature_table(features: Dict[str, FeatureTuple]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"graph": name, **feat.model_dump(by_alias=True)} for name, feat in features.items()],
        columns=["graph", "r_max", "lambda", "l_max", "v_g"],
    )


def ledger_table(ledger: ConstantLedger, plans: List[SynthesisPlan]) -> pd.DataFrame:
    rows = [
        {"epsilon": None, "constant": key, "value": value}
        for key, value in ledger.model_dump().items() if not isinstance(value, list)
    ]
    for plan in plans:
        rows.extend(
            {"epsilon": plan.epsilon, "constant": key, "value": value}
            for key, value in plan.model_dump().items() if key != "epsilon"
        )
    return pd.DataFrame(rows, columns=["epsilon", "constant", "value"])


def write_outputs(report: PipelineReport, out_dir: Path) -> Dict[str, Path]:
    """Report document plus whichever CSV tables the executed stages produced."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written: Dict[str, Path] = {}
    path = out_dir / REPORT_FILE
    path.write_text(report.model_dump_json(indent=2, by_alias=True), encoding="utf-8")
    written["report"] = path
    tables: List[Tuple[str, str, Optional[pd.DataFrame]]] = [
        ("weak_error", WEAK_ERROR_TABLE, weak_error_table(report) if report.results else None),
        ("rate", RATE_TABLE, rate_table(report.rate) if report.rate else None),
        ("features", FEATURE_TABLE, feature_table(report.features) if report.features else None),
        ("ledger", LEDGER_TABLE,
         ledger_table(report.ledger, [r.plan for r in report.results]) if report.ledger else None),
    ]
    for name, filename, frame in tables:
        if frame is None:
            continue
        path = out_dir / filename
        frame.to_csv(path, index=False)
        written[name] = path
    logfire.info("outputs written", out=str(out_dir), files=sorted(written))
    return written
