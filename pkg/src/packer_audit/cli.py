"""Command-line entry point.

Subcommands mirror the pipeline stages (forge, extract, compose, train,
distill, audit, report) plus run-experiment, which chains them end to end.
Exit codes: 0 ok, 2 config error, 3 IO error, 4 accuracy gate failure,
5 insufficient pool. Errors go to stderr as one JSON object per failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .audit import AuditConfig
from .blackbox import ForestParams
from .composition import CompositionSpec
from .distill import DistillConfig
from .errors import (
    ConfigError,
    GateFailedError,
    InsufficientPoolError,
    IoFailure,
    PackerAuditError,
)
from .experiment import (
    ExperimentConfig,
    run_experiment,
    stage_audit,
    stage_compose,
    stage_distill,
    stage_extract,
    stage_forge,
    stage_report,
    stage_train,
)
from .featurize import FeaturizeParams

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_GATE = 4
EXIT_POOL = 5

WORKERS_ENV = "PACKER_AUDIT_WORKERS"


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _fail(code: int, error: str, message: str, **detail) -> int:
    payload = {"error": error, "message": message}
    payload.update(detail)
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def _featurize_params(args: argparse.Namespace) -> FeaturizeParams:
    return FeaturizeParams(
        ngram_len=args.ngram_len,
        df_min=args.df_min,
        df_max=args.df_max,
        max_per_family=args.max_per_family,
        opcode_lens=tuple(args.opcode_lens),
    )


def _add_workers(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=int, default=_default_workers(),
                   help=f"parallel workers (default ${WORKERS_ENV} or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="packer-audit",
        description="Diagnose artifact reliance in static PE malware classifiers.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forge", help="build a synthetic corpus from a corpus spec")
    p.add_argument("spec", type=Path, help="corpus spec JSON")
    p.add_argument("out", type=Path, help="output corpus directory")
    _add_workers(p)

    p = sub.add_parser("extract", help="build the feature catalog and matrix for a corpus")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--ngram-len", type=int, default=6)
    p.add_argument("--df-min", type=float, default=0.05)
    p.add_argument("--df-max", type=float, default=0.95)
    p.add_argument("--max-per-family", type=int, default=256)
    p.add_argument("--opcode-lens", type=int, nargs="+", default=[2, 3, 4])
    _add_workers(p)

    p = sub.add_parser("compose", help="plan minimally overlapping iteration sample sets")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--total", type=int, required=True)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train the reference classifier for one iteration")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--plan", type=Path, required=True)
    p.add_argument("--iteration", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-trees", type=int, default=32)
    p.add_argument("--max-depth", type=int, default=12)
    p.add_argument("--predictions", type=Path, help="external sample_id,label CSV instead of training")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("distill", help="extract one iteration's surrogate feature set")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--plan", type=Path, required=True)
    p.add_argument("--iteration", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", type=Path, help="model_<t>.json from the train stage")
    p.add_argument("--predictions", type=Path, help="external predictions CSV")
    p.add_argument("--n", type=int, default=20, help="outer sample draws")
    p.add_argument("--students", type=int, default=10)
    p.add_argument("--sample-fraction", type=float, default=0.1)
    p.add_argument("--student-depth", type=int, default=8)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("audit", help="localize and label features against the corpus")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True, help="features directory")
    p.add_argument("--feature", action="append", default=[], help="feature name (repeatable)")
    p.add_argument("--feature-sets", type=Path, nargs="*", default=[],
                   help="featureset_<t>.json files whose ranked names are audited")
    p.add_argument("--majority", type=float, default=0.5)
    p.add_argument("--rich-cooccurrence", type=float, default=0.8)
    p.add_argument("--category-skew", type=float, default=0.75)
    p.add_argument("--context-bytes", type=int, default=32)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("report", help="assemble the trust report from stage outputs")
    p.add_argument("--config", type=Path, required=True, help="experiment config JSON")
    p.add_argument("--experiment-dir", type=Path, required=True)

    p = sub.add_parser("run-experiment", help="run the whole pipeline from a config file")
    p.add_argument("config", type=Path)
    _add_workers(p)

    return parser


def _cmd_forge(args: argparse.Namespace) -> int:
    manifest = stage_forge(args.spec, args.out, workers=args.workers)
    print(json.dumps({"corpus": str(args.out), "samples": len(manifest)}))
    return EXIT_OK


def _cmd_extract(args: argparse.Namespace) -> int:
    catalog, matrix = stage_extract(args.manifest, args.out, _featurize_params(args), workers=args.workers)
    print(json.dumps({"features": len(catalog), "samples": len(matrix.ids), "out": str(args.out)}))
    return EXIT_OK


def _cmd_compose(args: argparse.Namespace) -> int:
    spec = CompositionSpec(
        alpha=args.alpha, beta=args.beta, gamma=args.gamma, delta=args.delta,
        total=args.total, iterations=args.iterations, seed=args.seed,
    )
    plan = stage_compose(args.manifest, spec, args.out)
    print(json.dumps({"plan": str(args.out), "counts": plan.counts}))
    return EXIT_OK


def _cmd_train(args: argparse.Namespace) -> int:
    params = None if args.predictions else ForestParams(n_trees=args.n_trees, max_depth=args.max_depth)
    metrics = stage_train(
        args.manifest, args.features, args.plan, args.iteration, args.seed,
        params, args.predictions, args.out,
    )
    print(json.dumps({"iteration": args.iteration, "metrics": metrics}, sort_keys=True))
    return EXIT_OK


def _cmd_distill(args: argparse.Namespace) -> int:
    cfg = DistillConfig(
        iterations=args.n, students=args.students,
        sample_fraction=args.sample_fraction, max_depth=args.student_depth,
    )
    fs = stage_distill(
        args.features, args.plan, args.iteration, args.seed, cfg,
        args.model, args.predictions, args.out,
    )
    print(json.dumps({"iteration": args.iteration, "features": len(fs.features),
                      "fidelity": fs.fidelity}, sort_keys=True))
    return EXIT_OK


def _cmd_audit(args: argparse.Namespace) -> int:
    from .util import load_json

    names = list(args.feature)
    for path in args.feature_sets:
        raw = load_json(path)
        names.extend(row["name"] for row in raw.get("features", []))
    names = list(dict.fromkeys(names))
    cfg = AuditConfig(
        majority=args.majority, rich_cooccurrence=args.rich_cooccurrence,
        category_skew=args.category_skew, context_bytes=args.context_bytes,
    )
    records = stage_audit(args.manifest, args.features, names, cfg, args.out)
    print(json.dumps({"audited": len(records), "out": str(args.out)}))
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config)
    result = stage_report(config, args.experiment_dir)
    print(json.dumps({"report": str(result.paths["json"]),
                      "artifact_dominance": result.report.artifact_dominance}, sort_keys=True))
    return EXIT_OK


def _cmd_run_experiment(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config)
    result = run_experiment(config, workers=args.workers)
    print(json.dumps({
        "report": str(result.paths["json"]),
        "experiment_id": result.report.experiment_id,
        "artifact_dominance": result.report.artifact_dominance,
        "stability_top10_jaccard": result.report.stability_top10_jaccard,
    }, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "forge": _cmd_forge,
    "extract": _cmd_extract,
    "compose": _cmd_compose,
    "train": _cmd_train,
    "distill": _cmd_distill,
    "audit": _cmd_audit,
    "report": _cmd_report,
    "run-experiment": _cmd_run_experiment,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except json.JSONDecodeError as exc:
        return _fail(EXIT_CONFIG, "ConfigError",
                     f"malformed JSON: {exc.msg}", line=exc.lineno, column=exc.colno)
    except GateFailedError as exc:
        return _fail(EXIT_GATE, "GateFailed", str(exc), iteration=exc.iteration)
    except InsufficientPoolError as exc:
        return _fail(EXIT_POOL, "InsufficientPool", str(exc))
    except IoFailure as exc:
        return _fail(EXIT_IO, "IoFailure", str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_IO, "IoFailure", str(exc))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "ConfigError", str(exc))
    except PackerAuditError as exc:
        return _fail(EXIT_CONFIG, exc.__class__.__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
