"""Command line front end.

Exit codes: 0 success, 2 invalid configuration or hypothesis violation,
3 solver non-convergence or failed certificate / sweep check.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from . import __version__
from .config import PRESETS, ConfigError, RunConfig
from .model import HypothesisError

OUT_ENV = "MFGDUAL_OUT"

EXIT_OK, EXIT_CONFIG, EXIT_FAIL = 0, 2, 3


def _thread_limit(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _load_config(args) -> RunConfig:
    if args.config is None:
        raise ConfigError("--config is required (a JSON file or a preset name: " + ", ".join(PRESETS) + ")")
    if args.config in PRESETS and not Path(args.config).exists():
        cfg = PRESETS[args.config]()
    else:
        cfg = RunConfig.load(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "tol", None) is not None:
        changes["solver"] = {"gap_tol": args.tol}
    return cfg.replace(**changes) if changes else cfg


def _out_dir(args, cfg: RunConfig, verb: str) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.output:
        return Path(cfg.output)
    root = os.environ.get(OUT_ENV, "runs")
    return Path(root) / f"{verb}-{cfg.config_hash()}"


def cmd_validate(args) -> int:
    cfg = _load_config(args)
    model, grid = cfg.validate()
    print(json.dumps({"valid": True, "config_hash": cfg.config_hash(), "within_hypotheses": model.within_hypotheses,
                      "grid": [grid.d, grid.n, grid.nt]}))
    return EXIT_OK


def cmd_solve(args) -> int:
    from .experiments import run_single

    cfg = _load_config(args)
    cfg.validate()
    out = _out_dir(args, cfg, "solve")
    res = run_single(cfg, out, render=not args.no_plots)
    print(f"{out}: converged={res.state.converged} iter={res.state.iter} "
          f"gap_rel={res.report.gap_relative:.3e} certificate={'pass' if res.passed else 'fail'}")
    return EXIT_OK if res.passed else EXIT_FAIL


def cmd_sweep(args) -> int:
    from .experiments import viscosity_sweep

    cfg = _load_config(args)
    if args.eps:
        cfg = cfg.replace(experiment={"epsilons": args.eps})
    cfg.validate()
    out = _out_dir(args, cfg, "sweep")
    res = viscosity_sweep(cfg, out_dir=out, render=not args.no_plots)
    for row in res.rows:
        print(f"eps={row.parameter:<8g} |m_eps - m_0|_q={row.distances['m_Lq']:.4e} {' '.join(row.flags)}")
    print(f"{out}: checks={res.checks}")
    return EXIT_OK if res.passed else EXIT_FAIL


def cmd_refine(args) -> int:
    from .experiments import refinement_study

    cfg = _load_config(args)
    if args.levels is not None:
        cfg = cfg.replace(experiment={"levels": args.levels})
    out = _out_dir(args, cfg, "refine")
    res = refinement_study(cfg, out_dir=out)
    for row in res.rows:
        print(f"n={int(row.parameter):<6d} {row.distances}")
    print(f"{out}: checks={res.checks}")
    return EXIT_OK if res.passed else EXIT_FAIL


def cmd_report(args) -> int:
    from .plotting import render_run

    run = Path(args.run or args.out or "")
    report_path = run / "report.json"
    if not report_path.exists():
        raise ConfigError(f"{run} is not a run directory (no report.json)")
    data = json.loads(report_path.read_text())
    if not args.no_plots:
        render_run(run)
    keys = ("iteration", "converged", "gap_relative", "continuity_residual", "energy_identity_residual",
            "holder_exponent_fit", "certificate_passed")
    for k in keys:
        print(f"{k:28s} {data.get(k)}")
    return EXIT_OK if data.get("passed") else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config JSON file or preset name")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<verb>-<hash>)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="cap BLAS/OpenMP threads")
    common.add_argument("--tol", type=float, help="relative duality-gap tolerance")
    common.add_argument("--no-plots", action="store_true", help="skip PNG rendering (the plot script is still written)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mfgdual", description="Dual convex solver for degenerate mean field games.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("validate", parents=[common], help="check a config against the model hypotheses")
    sub.add_parser("solve", parents=[common], help="solve one instance and certify it")
    sw = sub.add_parser("sweep-viscosity", parents=[common], help="vanishing-viscosity study")
    sw.add_argument("--eps", type=float, nargs="+", help="descending viscosities")
    rf = sub.add_parser("refine", parents=[common], help="grid refinement study")
    rf.add_argument("--levels", type=int)
    rp = sub.add_parser("report", parents=[common], help="summarize a run directory and render its figures")
    rp.add_argument("run", nargs="?", help="run directory (defaults to --out)")
    return p


COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "sweep-viscosity": cmd_sweep,
    "refine": cmd_refine,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with _thread_limit(args.threads):
            return COMMANDS[args.verb](args)
    except HypothesisError as exc:
        print(f"invalid model: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
