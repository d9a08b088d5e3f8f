"""
Command-line entry point.

    python main.py solve fixtures/walk_weights --out-dir runs/walk
    python main.py replay runs/walk/trajectory.csv --out-dir runs/walk
    python main.py check-limits runs/walk/trajectory.csv
    python main.py design-scale fixtures/jump_10cm --limit knee:velocity
    python main.py interp runs/walk/trajectory.csv --out-dir runs/walk

Exit codes: 0 ok, 1 input error, 2 non-convergence or scaling cap reached,
3 replay fell or left the deviation bounds.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from config import fixtures_dir, get_settings
from costs import CostError
from costs.wrench_cone import WrenchConeSpec
from hddp_dynamics import DynamicsError
from hddp_gaitplan import (
    ExperimentError,
    ScalingCapError,
    check_solution_limits,
    design_scaling_search,
    load_experiment,
    solve_experiment,
    solver_options,
)
from hddp_limits import LimitSelectorError, check_limits
from hddp_model import ModelError, load_model
from hddp_replay import GroundPlane, PDGains, ReplayError, replay
from hddp_solver import SolverDiagnostics, SolverError
from hddp_trajio import (
    TrajectoryError,
    cop_report,
    interpolate,
    planned_model,
    read_trajectory,
    write_cop_report,
    write_interpolated,
    write_trajectory,
)
from hddp_ui import render_cop_summary, render_limit_report, render_scaling_log, render_solver_log
from hddp_utils import build_manifest, ensure_dir, fmt17, write_manifest

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
EXIT_FELL = 3

INPUT_ERRORS = (
    ModelError,
    ExperimentError,
    TrajectoryError,
    LimitSelectorError,
    ReplayError,
    CostError,
    SolverError,
    FileNotFoundError,
)


def resolve_experiment(name: str) -> Path:
    """``name`` as given, with ``.toml`` appended, or looked up in the fixtures directory."""
    path = Path(name)
    candidates = [path, path.with_name(path.name + ".toml")]
    fixtures = fixtures_dir()
    candidates += [fixtures / path.name, fixtures / (path.name + ".toml")]
    for candidate in candidates:
        if candidate.is_file():
            return candidate
    raise FileNotFoundError(f"{name}: experiment file not found")


def resolve_model(name: str | None) -> Path:
    path = Path(name) if name else fixtures_dir() / "rh5.model"
    if not path.is_file():
        raise FileNotFoundError(f"{path}: model file not found")
    return path


def parse_payload(items: list[str] | None) -> dict[str, float] | None:
    if not items:
        return None
    payload = {}
    for item in items:
        frame, sep, mass = item.partition(":")
        try:
            value = float(mass)
        except ValueError:
            value = -1.0
        if not sep or not frame or value < 0:
            raise ExperimentError(f"--payload expects <frame>:<kg> with kg >= 0, got {item!r}")
        payload[frame] = value
    return payload


def write_diagnostics(diagnostics: SolverDiagnostics, path: Path) -> Path:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["iteration", "cost", "stop", "gap_norm", "step", "reg", "accepted"])
        for r in diagnostics.history:
            writer.writerow(
                [r.iteration, fmt17(r.cost), fmt17(r.stop), fmt17(r.gap_norm), fmt17(r.step), fmt17(r.reg), int(r.accepted)]
            )
    return path


def write_gnuplot(path: Path, data: str, title: str, ylabel: str, series: list[tuple[int, str]]) -> Path:
    """A gnuplot script plotting columns of a CSV that sits next to it."""
    plots = ", \\\n     ".join(f"'{data}' using 1:{col} with lines title '{label}'" for col, label in series)
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set title '{title}'",
        "set xlabel 't [s]'",
        f"set ylabel '{ylabel}'",
        "set grid",
        f"plot {plots}",
        "pause mouse close",
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _finish(manifest, started: float, code: int, summary: dict) -> int:
    manifest.wall_time_s = time.perf_counter() - started
    manifest.exit_code = code
    manifest.summary = summary
    write_manifest(manifest)
    return code


def cmd_solve(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    experiment_path = resolve_experiment(args.experiment)
    model_path = resolve_model(args.model)
    spec = load_experiment(experiment_path)
    payload = parse_payload(args.payload)
    if payload is not None:
        spec.payload = payload
    model = load_model(model_path)
    options = solver_options(
        spec,
        {
            "max_iters": args.max_iters,
            "tol": args.tol,
            "reg_init": args.reg_init,
            "alpha_min": args.alpha_min,
            "acceptance_ratio": args.acceptance_ratio,
            "workers": args.workers,
            "verbose": args.verbose or None,
        },
    )
    out_dir = ensure_dir(args.out_dir)
    manifest = build_manifest("solve", out_dir, options.model_dump(), experiment_path, model_path)

    print(f"Solving {experiment_path.name}: {spec.family} with {spec.knots} knots of {spec.knot_dt:.4g} s")
    problem, solution = solve_experiment(model, spec, options, args.warm_start)
    diagnostics = solution.diagnostics
    traj = write_trajectory(solution, problem.model, out_dir / "trajectory.csv", problem, spec.payload)
    write_diagnostics(diagnostics, out_dir / "diagnostics.csv")

    settings = get_settings()
    weights = spec.weight_values(settings)
    cone = WrenchConeSpec(mu=weights["mu"], coverage=weights["coverage"])
    samples = cop_report(traj, cone)
    write_cop_report(samples, out_dir / "cop.csv")
    if args.gnuplot:
        base = [(2, "x"), (3, "y"), (4, "z")] if traj.free_base else [(2, "q0")]
        write_gnuplot(out_dir / "base.gp", "trajectory.csv", "Floating base", "[m]", base)
        write_gnuplot(out_dir / "diagnostics.gp", "diagnostics.csv", "Solver cost", "cost", [(2, "cost")])

    render_solver_log(diagnostics)
    report = check_solution_limits(problem, solution, settings)
    render_limit_report(report)
    cop_inside = render_cop_summary(samples)
    if not cop_inside:
        print("⚠️  Centre of pressure left the coverage region")

    if solution.converged:
        print(f"✓ Converged after {diagnostics.iterations} iterations, cost {diagnostics.cost:.6e}")
        code = EXIT_OK
    else:
        print(f"❌ Not converged ({diagnostics.stop_reason}); best iterate written to {out_dir / 'trajectory.csv'}")
        code = EXIT_NOT_CONVERGED
    summary = {
        "converged": solution.converged,
        "iterations": diagnostics.iterations,
        "cost": diagnostics.cost,
        "stop_reason": diagnostics.stop_reason,
        "limits_passed": report.passed,
        "cop_inside": cop_inside,
    }
    return _finish(manifest, started, code, summary)


def cmd_replay(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    model_path = resolve_model(args.model)
    base_model = load_model(model_path)
    traj = read_trajectory(args.trajectory, base_model)
    model = planned_model(base_model, traj.payload)
    settings = get_settings(
        {
            "kp": args.kp,
            "substeps": args.substeps,
            "rate": args.rate,
            "max_deviation_xy": args.max_deviation_xy,
            "max_deviation_z": args.max_deviation_z,
            "feedforward": False if args.no_ff else None,
        }
    )
    out_dir = ensure_dir(args.out_dir)
    manifest = build_manifest(
        "replay", out_dir, {k: settings[k] for k in ("kp", "feedforward", "substeps", "rate")}, None, model_path, [args.trajectory]
    )
    interp = interpolate(traj, float(settings["rate"]))
    gains = PDGains.default(model, interp.qs[0], float(settings["kp"]), bool(settings["feedforward"]))
    print(f"Replaying {interp.samples} samples at {settings['rate']} Hz")
    report = replay(model, interp, gains, GroundPlane(), settings)
    report.to_csv(out_dir / "replay.csv")
    if args.gnuplot:
        write_gnuplot(
            out_dir / "replay.gp",
            "replay.csv",
            "Floating base, replay vs plan",
            "[m]",
            [(2, "x"), (3, "y"), (4, "z"), (5, "x_ref"), (6, "y_ref"), (7, "z_ref")],
        )

    dx, dy, dz = report.base_deviation
    print(f"Base deviation: x {dx:.4f} m, y {dy:.4f} m, z {dz:.4f} m; joint RMS {report.joint_tracking_rms:.4f} rad")
    max_xy, max_z = float(settings["max_deviation_xy"]), float(settings["max_deviation_z"])
    if report.fell:
        print(f"❌ Fell at sample {report.fell_step}")
        code = EXIT_FELL
    elif not report.within(max_xy, max_z):
        print(f"❌ Base deviation beyond {max_xy} m (xy) / {max_z} m (z)")
        code = EXIT_FELL
    else:
        print("✓ Replay stayed within the deviation bounds")
        code = EXIT_OK
    summary = {
        "fell": report.fell,
        "fell_step": report.fell_step,
        "base_deviation": [float(x) for x in report.base_deviation],
        "joint_tracking_rms": report.joint_tracking_rms,
        "touchdowns": report.touchdowns,
    }
    return _finish(manifest, started, code, summary)


def cmd_check_limits(args: argparse.Namespace) -> int:
    base_model = load_model(resolve_model(args.model))
    traj = read_trajectory(args.trajectory, base_model)
    model = planned_model(base_model, traj.payload)
    settings = get_settings({"limit_tolerance": args.tolerance})
    if traj.knots:
        qs, vs, us = traj.qs, traj.vs, traj.us
    else:
        qs = vs = us = np.zeros((0, 0))
    report = check_limits(
        model,
        qs,
        vs,
        us,
        tolerance=float(settings["limit_tolerance"]),
        saturation_margin=float(settings["saturation_margin"]),
    )
    render_limit_report(report, title=f"Joint limits of {Path(args.trajectory).name}")
    return EXIT_OK


def cmd_design_scale(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    experiment_path = resolve_experiment(args.experiment)
    model_path = resolve_model(args.model)
    spec = load_experiment(experiment_path)
    model = load_model(model_path)
    options = solver_options(spec, {"max_iters": args.max_iters, "workers": args.workers})
    out_dir = ensure_dir(args.out_dir) if args.out_dir else None

    def on_step(step) -> None:
        state = "feasible" if step.feasible else "infeasible"
        print(f"  factor {step.factor:g}: {state} ({step.iterations} iterations)")

    print(f"Design scaling {args.limit} on {experiment_path.name}")
    try:
        result = design_scaling_search(
            model, spec, args.limit, args.factor_step, args.cap, options, confirm=args.confirm, on_step=on_step
        )
    except ScalingCapError as exc:
        render_scaling_log(args.limit, exc.log)
        print(f"❌ {exc}")
        code, factor, log = EXIT_NOT_CONVERGED, None, exc.log
    else:
        render_scaling_log(args.limit, result.log)
        print(f"✓ Minimal factor for {args.limit}: {result.factor:g}")
        code, factor, log = EXIT_OK, result.factor, result.log

    if out_dir is not None:
        with (out_dir / "scaling.csv").open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["factor", "converged", "iterations", "position_ok", "torque_ok", "velocity_ok", "feasible"])
            for s in log:
                writer.writerow(
                    [fmt17(s.factor), int(s.converged), s.iterations, int(s.report.position_ok), int(s.report.torque_ok), int(s.report.velocity_ok), int(s.feasible)]
                )
        manifest = build_manifest("design-scale", out_dir, {"limit": args.limit, "factor_step": args.factor_step, "cap": args.cap}, experiment_path, model_path)
        _finish(manifest, started, code, {"factor": factor, "tried": [s.factor for s in log]})
    return code


def cmd_interp(args: argparse.Namespace) -> int:
    base_model = load_model(resolve_model(args.model))
    traj = read_trajectory(args.trajectory, base_model)
    interp = interpolate(traj, args.rate)
    out_dir = ensure_dir(args.out_dir)
    path = write_interpolated(interp, out_dir / "interpolated.csv")
    print(f"✓ Wrote {interp.samples} samples to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Whole-body trajectory optimization and replay.")
    sub = parser.add_subparsers(dest="command", required=True)

    solve_p = sub.add_parser("solve", help="Solve an experiment and write trajectory, diagnostics and CoP CSVs.")
    solve_p.add_argument("experiment", help="Experiment TOML file or fixture name.")
    solve_p.add_argument("--model", help="Model file (default: the RH5 fixture).")
    solve_p.add_argument("--out-dir", default="out", help="Output directory.")
    solve_p.add_argument("--payload", action="append", metavar="FRAME:KG", help="Point mass at a frame; replaces the experiment payloads.")
    solve_p.add_argument("--warm-start", choices=["quasi-static", "com-interpolated"], help="Override the warm start.")
    solve_p.add_argument("--max-iters", type=int)
    solve_p.add_argument("--tol", type=float)
    solve_p.add_argument("--reg-init", type=float)
    solve_p.add_argument("--alpha-min", type=float)
    solve_p.add_argument("--acceptance-ratio", type=float)
    solve_p.add_argument("--workers", type=int, help="Threads for knot derivatives.")
    solve_p.add_argument("--verbose", action="store_true", help="Print one line per solver iteration.")
    solve_p.add_argument("--gnuplot", action="store_true", help="Write .gp scripts next to the CSVs.")
    solve_p.set_defaults(handler=cmd_solve)

    replay_p = sub.add_parser("replay", help="Replay a trajectory under PD control.")
    replay_p.add_argument("trajectory")
    replay_p.add_argument("--model")
    replay_p.add_argument("--out-dir", default="out")
    replay_p.add_argument("--kp", type=float, help="Proportional gain for every joint.")
    replay_p.add_argument("--no-ff", action="store_true", help="Drop the torque feedforward.")
    replay_p.add_argument("--substeps", type=int)
    replay_p.add_argument("--rate", type=float, help="Control rate in Hz.")
    replay_p.add_argument("--max-deviation-xy", type=float)
    replay_p.add_argument("--max-deviation-z", type=float)
    replay_p.add_argument("--gnuplot", action="store_true")
    replay_p.set_defaults(handler=cmd_replay)

    limits_p = sub.add_parser("check-limits", help="Tabulate joint-limit usage of a trajectory.")
    limits_p.add_argument("trajectory")
    limits_p.add_argument("--model")
    limits_p.add_argument("--tolerance", type=float, help="Relative slack on position and velocity limits.")
    limits_p.set_defaults(handler=cmd_check_limits)

    scale_p = sub.add_parser("design-scale", help="Find the smallest limit scale that makes an experiment feasible.")
    scale_p.add_argument("experiment")
    scale_p.add_argument("--model")
    scale_p.add_argument("--limit", required=True, metavar="JOINT:KIND", help="e.g. knee:velocity")
    scale_p.add_argument("--factor-step", type=float)
    scale_p.add_argument("--cap", type=float)
    scale_p.add_argument("--confirm", action="store_true", help="Also solve the next factor above the answer.")
    scale_p.add_argument("--max-iters", type=int)
    scale_p.add_argument("--workers", type=int)
    scale_p.add_argument("--out-dir")
    scale_p.set_defaults(handler=cmd_design_scale)

    interp_p = sub.add_parser("interp", help="Write the dense interpolated trajectory.")
    interp_p.add_argument("trajectory")
    interp_p.add_argument("--model")
    interp_p.add_argument("--rate", type=float, default=1000.0)
    interp_p.add_argument("--out-dir", default="out")
    interp_p.set_defaults(handler=cmd_interp)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except INPUT_ERRORS as exc:
        print(f"❌ {exc}")
        return EXIT_INPUT
    except DynamicsError as exc:
        print(f"❌ Dynamics failed: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
