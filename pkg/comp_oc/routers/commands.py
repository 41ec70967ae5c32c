"""
Subcommand handlers. Each one maps to a single operation (or a short run of
pipeline stages) and prints its table or document to stdout.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import logfire
from pydantic import ValidationError

from comp_oc.exceptions import CertificationFailure
from comp_oc.functions.features import compute_features
from comp_oc.functions.ocp import certify_convexity, extend_system, calibrate_domain, dynamics_graph
from comp_oc.functions.shallow_nn import measure_rate
from comp_oc.models.ocp import Verdict
from comp_oc.parsers.config import config_error, load_config
from comp_oc.parsers.graph import load_graph
from comp_oc.parsers.instance import load_instance, dump_instance, instance_to_document
from comp_oc.routers.pipeline import (
    run_pipeline, write_outputs, weak_error_table, rate_table, feature_table, make_oracle,
)
from comp_oc.schemas.config import PipelineConfig, Stage


def parse_floats(text: str) -> List[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def parse_ints(text: str) -> List[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _instance(path: str):
    try:
        return load_instance(Path(path))
    except ValidationError as e:
        raise config_error(e, path)


def _emit_document(doc, output: Optional[str] = None):
    text = json.dumps(doc, indent=2)
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")


def _command_config(args: argparse.Namespace, **overrides) -> PipelineConfig:
    config, _ = load_config(Path(args.config) if args.config else None, {
        "instance": str(Path(getattr(args, "instance", None) or args.graph).resolve()),
        "seed": args.seed,
        "jobs": args.jobs,
        "out": args.out,
        **overrides,
    })
    return config


def certify(args: argparse.Namespace) -> int:
    inst = _instance(args.instance)
    cert = certify_convexity(inst, args.samples, _command_config(args).seed)
    _emit_document(cert.model_dump(mode="json"))
    if cert.verdict == Verdict.NOT_CERTIFIED:
        raise CertificationFailure(f"'{inst.name}' is not certified convex")
    return 0


def extend(args: argparse.Namespace) -> int:
    extended = extend_system(_instance(args.instance), seed=_command_config(args).seed)
    if args.output:
        dump_instance(extended, Path(args.output))
    else:
        _emit_document(instance_to_document(extended))
    return 0


def calibrate(args: argparse.Namespace) -> int:
    config = _command_config(args)
    inst = _instance(args.instance)
    calibrated = calibrate_domain(inst, make_oracle(config), args.margin, config.calibrate_samples, config.seed)
    if args.output:
        dump_instance(calibrated, Path(args.output))
    else:
        _emit_document(calibrated.domain.model_dump(mode="json"))
    return 0


def features(args: argparse.Namespace) -> int:
    inst = _instance(args.instance)
    seed = _command_config(args).seed
    table = {
        "f": compute_features(dynamics_graph(inst), args.samples, seed),
        "g": compute_features(inst.terminal_cost, args.samples, seed),
    }
    sys.stdout.write(feature_table(table).to_csv(index=False))
    return 0


def fitrate(args: argparse.Namespace) -> int:
    graph = load_graph(Path(args.graph))
    report = measure_rate(graph, parse_ints(args.widths), _command_config(args).seed)
    sys.stdout.write(rate_table(report).to_csv(index=False))
    logfire.info("fit rate", slope=report.slope, exact=report.exact)
    return 0


def _run_and_write(config: PipelineConfig) -> int:
    report = run_pipeline(config, Path.cwd())
    write_outputs(report, Path(config.out))
    sys.stdout.write(weak_error_table(report).to_csv(index=False))
    return 0


def synth(args: argparse.Namespace) -> int:
    stages = [Stage.CERTIFY, Stage.EXTEND, Stage.CALIBRATE, Stage.FEATURES, Stage.PLAN, Stage.BUILD]
    return _run_and_write(_command_config(args, epsilons=[args.epsilon], stages=stages))


def evaluate(args: argparse.Namespace) -> int:
    stages = [
        Stage.CERTIFY, Stage.EXTEND, Stage.CALIBRATE, Stage.FEATURES, Stage.PLAN, Stage.BUILD, Stage.EVALUATE,
    ]
    return _run_and_write(_command_config(args, epsilons=[args.epsilon], stages=stages))


def sweep(args: argparse.Namespace) -> int:
    """Epsilon sweep (one table row per epsilon) or width sweep (the rate table)."""
    if args.widths:
        config = _command_config(args, widths=parse_ints(args.widths), stages=[
            Stage.EXTEND, Stage.CALIBRATE, Stage.FITRATE,
        ])
        report = run_pipeline(config, Path.cwd())
        write_outputs(report, Path(config.out))
        sys.stdout.write(rate_table(report.rate).to_csv(index=False))
        return 0
    stages = [Stage.EXTEND, Stage.CALIBRATE, Stage.FEATURES, Stage.PLAN]
    if not args.plan_only:
        stages += [Stage.BUILD, Stage.EVALUATE]
    overrides = {"stages": stages}
    if args.epsilon:
        overrides["epsilons"] = parse_floats(args.epsilon)
    return _run_and_write(_command_config(args, **overrides))


def register(subparsers: argparse._SubParsersAction):
    p = subparsers.add_parser("certify", help="sampled convexity certificate of J(x, .)")
    p.add_argument("instance")
    p.add_argument("--samples", type=int, default=256)
    p.set_defaults(handler=certify)

    p = subparsers.add_parser("extend", help="extended-state reformulation of a stage-cost instance")
    p.add_argument("instance")
    p.add_argument("--output")
    p.set_defaults(handler=extend)

    p = subparsers.add_parser("calibrate", help="choose U0, gamma and R from oracle solutions")
    p.add_argument("instance")
    p.add_argument("--margin", type=float, default=1.25)
    p.add_argument("--output")
    p.set_defaults(handler=calibrate)

    p = subparsers.add_parser("features", help="compositional features of the dynamics and terminal cost")
    p.add_argument("instance")
    p.add_argument("--samples", type=int, default=4096)
    p.set_defaults(handler=features)

    p = subparsers.add_parser("fitrate", help="surrogate sup error per width for a graph document")
    p.add_argument("graph")
    p.add_argument("--widths", default="8,16,32,64,128")
    p.set_defaults(handler=fitrate)

    for name, handler, text in (
            ("synth", synth, "plan and build the controller for one epsilon"),
            ("eval", evaluate, "build and score the controller for one epsilon"),
    ):
        p = subparsers.add_parser(name, help=text)
        p.add_argument("instance")
        p.add_argument("--epsilon", type=float, default=0.1)
        p.set_defaults(handler=handler)

    p = subparsers.add_parser("sweep", help="epsilon or width sweep as CSV rows")
    p.add_argument("instance")
    p.add_argument("--epsilon", help="comma-separated epsilons")
    p.add_argument("--widths", help="comma-separated widths (runs the rate sweep instead)")
    p.add_argument("--plan-only", action="store_true", help="stop after the schedule")
    p.set_defaults(handler=sweep)
