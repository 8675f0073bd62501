import argparse
import json
import logging
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from nonlocal_acf.api.routes.direct_routes import evaluate, parse_point
from nonlocal_acf.core.config import settings
from nonlocal_acf.core.enums import ClaimId, OperatorName
from nonlocal_acf.core.errors import ConfigError, NonlocalACFError
from nonlocal_acf.core.setup import check_dependencies, initialize_app
from nonlocal_acf.models.quadrature import QuadratureSpec
from nonlocal_acf.services import experiment_service

logger = logging.getLogger(__name__)

SUITES_DIR = Path(__file__).resolve().parent.parent / "suites"

# Claims each experiment subcommand accepts
SUBCOMMANDS: Dict[str, List[ClaimId]] = {
    "constants": [ClaimId.CONSTANTS],
    "monotonicity": [ClaimId.MONOTONICITY_G, ClaimId.MONOTONICITY_GRAD, ClaimId.MONOTONICITY_GRAD_F],
    "stability": [ClaimId.STABILITY_G, ClaimId.STABILITY_GRAD],
    "scaling": [ClaimId.SCALING],
    "bound": [ClaimId.BOUND],
    "gradest": [ClaimId.GRADEST],
    "bochner": [ClaimId.BOCHNER_G, ClaimId.BOCHNER_GRAD],
    "limits": [ClaimId.LIMITS],
    "moments": [ClaimId.MOMENTS],
    "greens": [ClaimId.GREENS],
    "meanvalue": [ClaimId.MEANVALUE],
}


def _common(parser: argparse.ArgumentParser, config_help: str):
    parser.add_argument("--config", type=str, default=None, help=config_help)
    parser.add_argument("--out", type=str, default=None, help="Directory for CSV/JSON reports")
    parser.add_argument("--jobs", type=int, default=None, help="Worker threads")
    parser.add_argument("--seed", type=int, default=None, help="Seed for randomized sampling")


def _pointwise(parser: argparse.ArgumentParser):
    parser.add_argument("--n", type=int, default=None, help="Space dimension")
    parser.add_argument("--s", type=float, default=None, help="Fractional order")
    parser.add_argument("--spec", action="append", default=[], metavar="KEY=VALUE",
                        help="QuadratureSpec override (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(prog="nonlocal-acf", description=settings.PROJECT_DESCRIPTION)
    parser.add_argument("--log-level", type=str, default=None, help="Logging level (default from settings)")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"Run a {name} experiment")
        _common(p, f"Experiment TOML (default suites/{name}.toml)")
        if name == "constants":
            _pointwise(p)

    p = sub.add_parser("eval", help="Evaluate one operator at one point")
    _pointwise(p)
    p.add_argument("--operator", type=str, required=True, choices=[o.value for o in OperatorName])
    p.add_argument("--field", type=str, required=True, help="Catalog field id")
    p.add_argument("--point", type=str, default=None, help="Comma-separated coordinates")
    p.add_argument("--radius", type=float, default=None, help="Radius for s_mean, nonlocal_normal and J")

    p = sub.add_parser("verify-all", help="Run every experiment listed in a manifest")
    _common(p, "Manifest of config paths (default suites/manifest.txt)")
    return parser


def parse_spec_overrides(items: Sequence[str]) -> Dict[str, object]:
    """KEY=VALUE pairs; values are read as TOML literals, falling back to strings."""
    overrides = {}
    for item in items:
        key, sep, text = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"malformed --spec '{item}', expected KEY=VALUE")
        try:
            value = tomllib.loads(f"value = {text.strip()}")["value"]
        except tomllib.TOMLDecodeError:
            value = text.strip()
        overrides[key.strip()] = value
    return overrides


def _spec(items: Sequence[str]) -> QuadratureSpec:
    return experiment_service.config_from_dict(
        {"claim": ClaimId.CONSTANTS, "spec": parse_spec_overrides(items)}).quadrature_spec()


def _experiment(args) -> int:
    if args.command == "constants" and (args.n is not None or args.s is not None or args.spec):
        raw = {"claim": ClaimId.CONSTANTS, "n": args.n or 1, "s": args.s if args.s is not None else 0.5,
               "spec": parse_spec_overrides(args.spec)}
        if args.out:
            raw["out_dir"] = args.out
        config = experiment_service.config_from_dict(raw)
    else:
        path = Path(args.config) if args.config else SUITES_DIR / f"{args.command}.toml"
        config = experiment_service.load_config(path, out_dir=args.out, jobs=args.jobs, seed=args.seed)
    if config.claim not in SUBCOMMANDS[args.command]:
        raise ConfigError(f"claim '{config.claim.value}' does not belong to '{args.command}'",
                          context={"allowed": [c.value for c in SUBCOMMANDS[args.command]]})
    try:
        report = experiment_service.run(config)
    except NonlocalACFError as exc:
        experiment_service.write_error_report(config, exc)
        raise
    print(json.dumps({"claim": report.claim.value, "outcome": report.outcome.value, **report.summary},
                     default=str))
    return report.exit_code


def _eval(args) -> int:
    record = evaluate(OperatorName(args.operator), args.field, parse_point(args.point), args.n or 1,
                      args.s if args.s is not None else 0.5, _spec(args.spec), args.radius)
    print(json.dumps(record))
    return 0


def _verify(args) -> int:
    manifest = Path(args.config) if args.config else SUITES_DIR / "manifest.txt"
    summary = experiment_service.verify_all(manifest, args.out, args.jobs, args.seed)
    print(json.dumps(summary.model_dump(mode="json")))
    return summary.exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit status."""
    args = build_parser().parse_args(argv)
    initialize_app(args.log_level)

    # Check dependencies
    if not check_dependencies():
        logging.error("Failed to start: missing dependencies")
        return 1

    try:
        if args.command == "eval":
            return _eval(args)
        if args.command == "verify-all":
            return _verify(args)
        return _experiment(args)
    except NonlocalACFError as exc:
        logger.error("%s", exc)
        print(json.dumps(exc.to_dict(), default=str), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
