"""
HardyLab command line entry point
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from config import settings
from errors import ConfigError, HardyLabError
from experiment_service import SUITES, experiment_service
from martingale import load_martingale
from mixed_norm import MixedExponent
from operators import hardy_norms
from report_service import report_service
from schemas import ExperimentConfig

logger = logging.getLogger("hardylab")

SUITE_HELP = {
    "norm": "Hardy quasi-norms of sampled (or loaded) martingales",
    "doob-check": "Doob maximal bound and pointwise composed-maximal domination",
    "counterexample": "maximal operator divergence on L_(p,inf)",
    "weak-type": "weighted weak-type (1,1) inequality with constant 1",
    "vector-ineq": "vector-valued conditional expectation inequality",
    "atomic-roundtrip": "all atomic decompositions: reconstruction and atom validity",
    "decompose": "single atomic decomposition with manifest",
    "davis": "Davis splitting f = h + g with pointwise certificates",
    "bdg-ratio": "square function against maximal function",
    "transform-bound": "martingale transforms with predictable signs",
    "equivalence-report": "empirical constants between the five Hardy norms",
    "envelope-oracle": "minimal envelope against exhaustive search",
    "regularity": "regularity constant and stopping-set comparison",
}


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config; flags override its fields")
    common.add_argument("--space", help="'dyadic' or path to a space description file")
    common.add_argument("--depth", type=int, help="filtration depth N of the dyadic space")
    common.add_argument("--depths", help="comma separated depths for a stability sweep")
    common.add_argument("--dims", type=int, help="number of coordinates of the dyadic space")
    common.add_argument("--p", action="append", help="exponent vector such as '2,3' or 'inf,2'; repeatable")
    common.add_argument("--trials", type=int, help=f"trials per exponent (default {settings.DEFAULT_TRIALS})")
    common.add_argument("--seed", type=int, help=f"base seed (default {settings.DEFAULT_SEED})")
    common.add_argument("--distribution", choices=["gaussian", "sparse", "sign", "heavy"])
    common.add_argument("--t", type=float, help="aggregation exponent of decompositions")
    common.add_argument("--kind", choices=["s", "P", "Q", "M", "S"], help="decomposition kind")
    common.add_argument("--n", type=int, help="largest shell index of the counterexample")
    common.add_argument("--exponent", type=float, help="inner exponent p of the counterexample")
    common.add_argument("--thresholds", type=int, help="threshold count of the weak-type sweep")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--out", help=f"output directory (default {settings.OUTPUT_DIR})")
    common.add_argument("--svg", action="store_true", help="write ratio histograms")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hardylab",
        description=f"{settings.PROJECT_NAME} {settings.VERSION}: mixed-norm martingale Hardy space experiments",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.VERSION}")
    common = _common_flags()
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run every suite named in --config")
    for name in SUITES:
        cmd = sub.add_parser(name, parents=[common], help=SUITE_HELP[name])
        if name == "norm":
            cmd.add_argument("--input", help="evaluate a saved martingale instead of sampling")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data = {}
    if args.config:
        data = experiment_service.load_config(args.config).model_dump()
    elif args.command == "run":
        raise ConfigError("the run command needs --config")
    data.setdefault("trials", settings.DEFAULT_TRIALS)
    data.setdefault("seed", settings.DEFAULT_SEED)
    data.setdefault("out", settings.OUTPUT_DIR)
    data.setdefault("workers", settings.WORKERS)
    if args.command != "run":
        data["suites"] = [args.command]

    space = dict(data.get("space") or {})
    if args.space:
        if args.space == "dyadic":
            space.update(kind="dyadic", path=None)
        else:
            space.update(kind="file", path=args.space)
    if args.depth is not None:
        space["depth"] = args.depth
    if args.dims is not None:
        space["dims"] = args.dims
    if space:
        data["space"] = space

    if args.depths:
        try:
            data["depths"] = [int(part) for part in args.depths.split(",")]
        except ValueError as e:
            raise ConfigError(f"invalid --depths {args.depths!r}") from e
    if args.p:
        data["exponents"] = [part.split(",") for part in args.p]
    overrides = {
        "trials": args.trials,
        "seed": args.seed,
        "distribution": args.distribution,
        "t": args.t,
        "kind": args.kind,
        "n": args.n,
        "counterexample_p": args.exponent,
        "thresholds": args.thresholds,
        "workers": args.workers,
        "out": args.out,
    }
    data.update({key: value for key, value in overrides.items() if value is not None})
    if args.svg:
        data["svg"] = True
    return experiment_service.validate_config(data)


def evaluate_file(path: str, exponents: List[List[float]]) -> None:
    f = load_martingale(path)
    for row in exponents:
        p = MixedExponent(tuple(row))
        report = hardy_norms(f, p)
        print(json.dumps({"exponent": str(p), **report.model_dump()}))


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=settings.LOG_LEVEL, format=settings.LOG_FORMAT)
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        if args.command == "norm" and args.input:
            evaluate_file(args.input, config.exponents)
            return 0

        result = experiment_service.run(config)
        report_service.report(result, config.out, svg=config.svg)
        if args.command == "decompose":
            rows, error = experiment_service.decomposition_manifest(config)
            if rows:
                report_service.write_rows("decompose-manifest", rows, config.out)
            print(f"reconstruction error: {error!r}")
        print(report_service.summary_table(result.summaries))
        if result.exact_failed:
            logger.error("exact assertions failed; see %s", Path(config.out).resolve())
            return 1
        return 0
    except (HardyLabError, OSError) as e:
        if settings.DEBUG:
            logger.exception("run aborted")
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
