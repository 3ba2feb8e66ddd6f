"""
Near-field RSMA simulator – command-line entry point.

Commands:
  solve     – one scenario, one scheme; writes result/report/gains/trace CSVs
              (and mm_diagnostics.csv with --diagnostics)
  sweep     – one parameter over a value list, every scheme, many realizations
  converge  – per-outer-iteration penalty trace of one solve, written to <out>/trace.csv

Examples:
  python main.py solve --profile desk --arch fhb --out output/solve
  python main.py sweep --profile desk --param K --values 2,3,4 --jobs 4 --out output/users
  python main.py converge --config data/desk.conf --out output/converge

Exit codes: 0 success, 1 a realization failed, 2 configuration error.
"""

import argparse
import logging
import logging.handlers
import sys
from typing import List, Optional

from modules.config import DEFAULT_JOBS, LOG_LEVEL, LOGS_DIR, OUTPUT_DIR
from modules.baselines import SchemeSpec
from modules.exceptions import ConfigError
from modules.experiments import SweepSpec, run_convergence, run_solve, run_sweep
from modules.scenario import parse_config, profile_config

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


# ─── Logging ──────────────────────────────────────────────────────────────────
def _setup_logging() -> None:
    fmt = "%(asctime)s [%(levelname)s] %(name)s – %(message)s"
    handlers: list[logging.Handler] = [logging.StreamHandler()]

    log_file = LOGS_DIR / "nearfield_rsma.log"
    rotating = logging.handlers.RotatingFileHandler(
        log_file, maxBytes=5 * 1024 * 1024, backupCount=5, encoding="utf-8"
    )
    handlers.append(rotating)

    logging.basicConfig(level=getattr(logging, LOG_LEVEL, logging.INFO), format=fmt, handlers=handlers)


logger = logging.getLogger(__name__)


# ─── Arguments ────────────────────────────────────────────────────────────────
def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (key = value per line)")
    common.add_argument("--profile", choices=["desk", "full", "paper"], default="full",
                        help="built-in parameter profile applied before --config")
    common.add_argument("--seed", type=int, help="master seed (overrides the scenario)")
    common.add_argument("--realizations", type=int, help="realizations per sweep value")
    common.add_argument("--no-timing", action="store_true", help="write wall_ms = 0 for reproducible files")
    common.add_argument("--far-scoring", choices=["near", "far"], default="near",
                        help="channel model used to score far-field designs")

    parser = argparse.ArgumentParser(prog="nearfield-rsma", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", parents=[common], help="solve one scenario")
    solve.add_argument("--scheme", choices=["rsma", "sdma"], default="rsma")
    solve.add_argument("--arch", choices=["fdb", "fhb", "shb", "ps"], default="fhb")
    solve.add_argument("--field", choices=["near", "far"], default="near")
    solve.add_argument("--out", default=str(OUTPUT_DIR / "solve"))
    solve.add_argument("--diagnostics", action="store_true",
                       help="also write per MM iteration objective and KKT residuals")

    sweep = sub.add_parser("sweep", parents=[common], help="sweep one parameter")
    sweep.add_argument("--param", required=True, help="scenario key to sweep, e.g. K, P_th, N, A, B")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--schemes", default="fhb,shb,ps,sdma,far,fdb", help="comma-separated scheme names")
    sweep.add_argument("--jobs", type=int, default=DEFAULT_JOBS)
    sweep.add_argument("--out", default=str(OUTPUT_DIR))

    converge = sub.add_parser("converge", parents=[common], help="trace the penalty loop")
    converge.add_argument("--scheme", default="fhb", help="scheme name (fhb, shb, ps, sdma, far)")
    converge.add_argument("--out", default=str(OUTPUT_DIR), help="directory that receives trace.csv")
    return parser


def _split(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _load_config(args: argparse.Namespace):
    cfg = profile_config(args.profile)
    if args.config:
        cfg = parse_config(args.config, base=cfg)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.realizations is not None:
        overrides["realizations"] = args.realizations
    return cfg.with_keys(overrides) if overrides else cfg


# ─── Commands ─────────────────────────────────────────────────────────────────
def _run(args: argparse.Namespace) -> int:
    timing = not args.no_timing

    logger.info("Step 1: Loading scenario (profile=%s, config=%s)…", args.profile, args.config)
    cfg = _load_config(args)
    logger.info("Step 1 done: N=%d A=%d Q=%d K=%d M=%d seed=%d", cfg.num_antennas, cfg.num_rf_chains,
                cfg.num_ttds, cfg.num_users, cfg.num_subcarriers, cfg.seed)

    if args.command == "solve":
        arch = "ps_only" if args.arch == "ps" else args.arch
        try:
            spec = SchemeSpec(arch, args.scheme, args.field)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        logger.info("Step 2: Solving %s/%s/%s…", arch, args.scheme, args.field)
        result = run_solve(cfg, spec, args.out, timing=timing, far_scoring=args.far_scoring,
                           diagnostics=args.diagnostics)
        logger.info("Step 2 done: max-min rate %.4f bits/s/Hz → %s", result.max_min_rate, args.out)
        return EXIT_OK

    if args.command == "sweep":
        sweep = SweepSpec(args.param, _split(args.values), _split(args.schemes))
        logger.info("Step 2: Sweeping %s over %s…", sweep.param, list(sweep.values))
        outcome = run_sweep(cfg, sweep, args.out, jobs=max(1, args.jobs), timing=timing,
                            far_scoring=args.far_scoring)
        logger.info("Step 2 done: %s, %s", outcome.rows_path, outcome.summary_path)
        return EXIT_FAILED if outcome.failed else EXIT_OK

    logger.info("Step 2: Tracing convergence of %s…", args.scheme)
    try:
        result = run_convergence(cfg, args.out, scheme=args.scheme, timing=timing)
    except KeyError as e:
        raise ConfigError(f"Unknown scheme '{args.scheme}'.") from e
    logger.info("Step 2 done: %d outer iterations → %s", result.outer_iters, args.out)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    _setup_logging()
    try:
        return _run(args)
    except ConfigError as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except Exception as e:
        logger.exception("Run failed: %s", e)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
