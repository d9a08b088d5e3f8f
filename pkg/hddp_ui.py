from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

try:
    from rich.console import Console
    from rich.table import Table
except ImportError:  # pragma: no cover
    Console = None
    Table = None

from hddp_limits import LimitReport
from hddp_solver import SolverDiagnostics


def _require_rich() -> None:
    if Console is None or Table is None:
        raise RuntimeError("Rich is required for terminal tables. Install with `pip install rich`.")


def _mark(ok: bool) -> str:
    return "[green]✓[/green]" if ok else "[red]✗[/red]"


def _ratio(value: float) -> str:
    return "-" if not np.isfinite(value) else f"{value:.3f}"


def render_limit_report(report: LimitReport, title: str = "Joint limits", console: Console | None = None) -> None:
    """Per-joint worst ratios with a pass/✗ summary for position, torque and velocity."""
    _require_rich()
    console = console or Console()
    table = Table(title=title)
    table.add_column("Joint", style="cyan", no_wrap=True)
    table.add_column("Pos.", justify="right")
    table.add_column("Torque", justify="right")
    table.add_column("Vel.", justify="right")
    for row in report.rows:
        table.add_row(
            row.joint,
            f"{_ratio(row.position_ratio)} {_mark(row.position_ok)}",
            f"{_ratio(row.torque_ratio)} {_mark(row.torque_ok)}",
            f"{_ratio(row.velocity_ratio)} {_mark(row.velocity_ok)}",
        )
    console.print(table)
    console.print(
        f"Pos. {_mark(report.position_ok)}   Torque {_mark(report.torque_ok)}   Vel. {_mark(report.velocity_ok)}"
    )
    for kind in ("position", "torque", "velocity"):
        violators = report.violators(kind)
        if violators:
            console.print(f"⚠️  {kind} exceeded by: {', '.join(violators)}")


def render_solver_log(diagnostics: SolverDiagnostics, last: int = 15, console: Console | None = None) -> None:
    _require_rich()
    console = console or Console()
    table = Table(title=f"Solver ({diagnostics.iterations} iterations, {diagnostics.stop_reason or 'running'})")
    for name in ("Iter", "Cost", "|d1|", "Gap", "Step", "Reg"):
        table.add_column(name, justify="right")
    for record in diagnostics.history[-last:]:
        table.add_row(
            str(record.iteration),
            f"{record.cost:.6e}",
            f"{record.stop:.3e}",
            f"{record.gap_norm:.3e}",
            f"{record.step:.4g}",
            f"{record.reg:.1e}",
            style=None if record.accepted else "dim",
        )
    console.print(table)


def render_scaling_log(selector: str, log: Sequence, console: Console | None = None) -> None:
    """One row per tried factor of a design-scaling search."""
    _require_rich()
    console = console or Console()
    table = Table(title=f"Design scaling of {selector}")
    table.add_column("Factor", justify="right", style="cyan")
    table.add_column("Converged", justify="center")
    table.add_column("Iterations", justify="right")
    table.add_column("Pos.", justify="center")
    table.add_column("Torque", justify="center")
    table.add_column("Vel.", justify="center")
    table.add_column("Feasible", justify="center")
    for step in log:
        report = step.report
        table.add_row(
            f"{step.factor:g}",
            _mark(step.converged),
            str(step.iterations),
            _mark(report.position_ok),
            _mark(report.torque_ok),
            _mark(report.velocity_ok),
            _mark(step.feasible),
        )
    console.print(table)


def render_cop_summary(samples: Iterable, console: Console | None = None) -> bool:
    """Worst CoP excursion per foot; True when every sample is inside its region."""
    _require_rich()
    console = console or Console()
    worst: dict[str, float] = {}
    for sample in samples:
        worst[sample.frame] = max(worst.get(sample.frame, 0.0), sample.excursion)
    table = Table(title="Centre of pressure")
    table.add_column("Foot", style="cyan")
    table.add_column("Worst excursion", justify="right")
    table.add_column("Inside", justify="center")
    for frame, value in sorted(worst.items()):
        table.add_row(frame, f"{value:.3f}", _mark(value <= 1.0))
    console.print(table)
    return all(value <= 1.0 for value in worst.values())
