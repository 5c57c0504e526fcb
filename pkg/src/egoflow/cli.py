"""Command-line surface: estimation, sweeps, the fit study, and synth output.

Exit codes: 0 success, 2 usage error, 3 input/file error, 4 estimation
failure.  Human-readable diagnostics go to stderr; result files are written
atomically.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

from .estimator import ESTIMATORS, SolverConfig, estimate
from .exceptions import EgoflowError, EstimationError, FlowFileError
from .flowio import (
    atomic_write_text,
    parse_config_file,
    parse_flow_file,
    parse_intrinsics_file,
    solver_config_from_mapping,
    write_flow_file,
)
from .synth import SceneConfig, generate_scene, likelihood_fit_study, run_outlier_sweep


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="egoflow",
        description="Robust monocular egomotion and inverse depth from optical flow.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate egomotion from a flow file")
    est.add_argument("--flow", required=True, help="input flow file")
    est.add_argument("--intrinsics", help="intrinsics file (required for pixel-mode flow)")
    est.add_argument("--method", required=True, choices=sorted(ESTIMATORS))
    est.add_argument("--config", help="solver config file (key = value lines)")
    est.add_argument(
        "--set",
        action="append",
        default=[],
        dest="overrides",
        metavar="KEY=VALUE",
        help="override a config value (repeatable)",
    )
    est.add_argument("--out", required=True, help="output JSON path")

    sw = sub.add_parser("sweep", help="outlier-fraction sweep over synthetic scenes")
    sw.add_argument("--fractions", required=True, help="comma-separated outlier fractions")
    sw.add_argument("--seeds", type=int, default=100, help="seeds per sweep cell")
    sw.add_argument(
        "--methods", default="raw,erl,lifted", help="comma-separated estimator names"
    )
    sw.add_argument("--points", type=int, default=1500, help="points per synthetic scene")
    sw.add_argument("--base-seed", type=int, default=0)
    sw.add_argument("--config")
    sw.add_argument("--set", action="append", default=[], dest="overrides", metavar="KEY=VALUE")
    sw.add_argument("--out", required=True, help="output CSV path")

    fs = sub.add_parser("fit-study", help="Laplacian vs Gaussian residual-fit study")
    fs.add_argument("--trials", type=int, default=100)
    fs.add_argument("--outliers", type=float, default=0.3)
    fs.add_argument("--points", type=int, default=1500)
    fs.add_argument("--base-seed", type=int, default=0)
    fs.add_argument("--out", required=True, help="output CSV path")

    sy = sub.add_parser("synth", help="emit a generated synthetic flow file")
    sy.add_argument("--seed", type=int, required=True)
    sy.add_argument("--outliers", type=float, default=0.0)
    sy.add_argument("--points", type=int, default=1500)
    sy.add_argument("--out", required=True, help="output flow file path")

    return p


def _load_solver_config(args) -> SolverConfig:
    mapping = {}
    if getattr(args, "config", None):
        mapping.update(parse_config_file(args.config))
    for item in getattr(args, "overrides", []):
        if "=" not in item:
            raise _UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        mapping[key.strip()] = value.strip()
    if mapping:
        return solver_config_from_mapping(mapping)
    return SolverConfig()


def _run_estimate(args) -> int:
    intr = parse_intrinsics_file(args.intrinsics) if args.intrinsics else None
    flow = parse_flow_file(args.flow, intr)
    cfg = _load_solver_config(args)
    est = estimate(flow, args.method, cfg)
    rho = [
        float(v) if ok else None
        for v, ok in zip(est.depths.rho, est.depths.valid)
    ]
    d = est.diagnostics
    payload = {
        "method": d.method,
        "t": [float(v) for v in est.motion.t],
        "omega": [float(v) for v in est.motion.omega],
        "cost": float(est.cost),
        "weights": [float(v) for v in est.weights.w],
        "rho": rho,
        "diagnostics": {
            "grid_winner_index": d.grid_winner_index,
            "grid_winner_cost": float(d.grid_winner_cost),
            "gn_iterations": d.gn_iterations,
            "converged": bool(d.converged),
            "degenerate_point_count": d.degenerate_point_count,
            "weight_fallback": bool(d.weight_fallback),
        },
    }
    atomic_write_text(args.out, json.dumps(payload, indent=2) + "\n")
    return 0


def _parse_csv_list(text: str) -> list:
    return [item.strip() for item in text.split(",") if item.strip()]


def _run_sweep(args) -> int:
    try:
        fractions = [float(f) for f in _parse_csv_list(args.fractions)]
    except ValueError:
        raise _UsageError(f"--fractions must be comma-separated numbers, got {args.fractions!r}")
    if not fractions:
        raise _UsageError("--fractions must name at least one fraction")
    methods = _parse_csv_list(args.methods)
    cfg = _load_solver_config(args)
    result = run_outlier_sweep(
        fractions,
        args.seeds,
        methods,
        solver_cfg=cfg,
        scene_template=SceneConfig(n_points=args.points),
        base_seed=args.base_seed,
    )
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["fraction", "method", "seed", "t_err_deg", "omega_err", "runtime_ms", "converged"]
    )
    for r in result.records:
        writer.writerow(
            [r.fraction, r.method, r.seed, r.t_err_deg, r.omega_err, r.runtime_ms,
             1 if r.converged else 0]
        )
    atomic_write_text(args.out, buf.getvalue())
    return 0


def _run_fit_study(args) -> int:
    records = likelihood_fit_study(
        args.trials,
        scene_template=SceneConfig(n_points=args.points, outlier_fraction=args.outliers),
        base_seed=args.base_seed,
    )
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["trial", "laplace_loglik", "gauss_loglik", "degenerate"])
    for r in records:
        writer.writerow(
            [r.trial, r.laplace_loglik, r.gauss_loglik, 1 if r.degenerate else 0]
        )
    atomic_write_text(args.out, buf.getvalue())
    return 0


def _run_synth(args) -> int:
    labeled = generate_scene(
        SceneConfig(
            n_points=args.points, outlier_fraction=args.outliers, seed=args.seed
        )
    )
    write_flow_file(args.out, labeled.flow)
    return 0


_COMMANDS = {
    "estimate": _run_estimate,
    "sweep": _run_sweep,
    "fit-study": _run_fit_study,
    "synth": _run_synth,
}


def cli_main(argv=None) -> int:
    """Run the CLI; returns the process exit code instead of raising."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors
        return 0 if exc.code in (0, None) else 2
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"egoflow: usage error: {exc}", file=sys.stderr)
        return 2
    except (FlowFileError, ValueError) as exc:
        print(f"egoflow: input error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"egoflow: i/o error: {exc}", file=sys.stderr)
        return 3
    except EstimationError as exc:
        print(f"egoflow: estimation failed: {exc}", file=sys.stderr)
        return 4
    except EgoflowError as exc:
        print(f"egoflow: estimation failed: {exc}", file=sys.stderr)
        return 4


def entry_point():
    sys.exit(cli_main())


if __name__ == "__main__":
    entry_point()
