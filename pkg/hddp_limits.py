"""Joint-limit scaling and trajectory limit checks."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fnmatch import fnmatchcase
from typing import List, Sequence

import numpy as np

from hddp_model import RobotModel

LIMIT_KINDS = ("position", "velocity", "torque")


class LimitSelectorError(ValueError):
    """A ``joint:kind`` selector that names no joint or no limit kind."""


def parse_limit_selector(selector: str) -> tuple[str, str]:
    """Split ``"knee:velocity"`` into its joint pattern and limit kind."""
    pattern, sep, kind = selector.partition(":")
    if not sep or not pattern or kind not in LIMIT_KINDS:
        raise LimitSelectorError(
            f"limit selector must look like <joint>:<{'|'.join(LIMIT_KINDS)}>, got {selector!r}"
        )
    return pattern, kind


def select_joints(model: RobotModel, pattern: str) -> list[str]:
    """Revolute joints matching a glob, an exact name, or a ``_<suffix>`` such as ``knee``."""
    names = model.revolute_joint_names
    if any(ch in pattern for ch in "*?["):
        chosen = [n for n in names if fnmatchcase(n, pattern)]
    else:
        chosen = [n for n in names if n == pattern or n.endswith("_" + pattern)]
    if not chosen:
        raise LimitSelectorError(f"no joint of {model.name} matches {pattern!r}")
    return chosen


def scale_limits(model: RobotModel, pattern: str, kind: str, factor: float) -> RobotModel:
    """Copy of ``model`` with one limit kind of the selected joints multiplied by ``factor``.

    Position ranges are widened about their midpoint.
    """
    if kind not in LIMIT_KINDS:
        raise LimitSelectorError(f"unknown limit kind {kind!r}")
    if not factor > 0:
        raise LimitSelectorError(f"scale factor must be > 0, got {factor}")
    chosen = set(select_joints(model, pattern))
    joints = []
    for joint in model.joints:
        if joint.name not in chosen:
            joints.append(joint)
        elif kind == "position":
            lower, upper = joint.position_limits
            mid, half = 0.5 * (lower + upper), 0.5 * (upper - lower) * factor
            joints.append(replace(joint, position_limits=(mid - half, mid + half)))
        elif kind == "velocity":
            joints.append(replace(joint, velocity_limit=joint.velocity_limit * factor))
        else:
            joints.append(replace(joint, effort_limit=joint.effort_limit * factor))
    return replace(model, joints=tuple(joints))


@dataclass
class JointLimitRow:
    joint: str
    position_ratio: float
    velocity_ratio: float
    torque_ratio: float  # nan for passive joints
    position_ok: bool
    velocity_ok: bool
    torque_ok: bool

    def ratio(self, kind: str) -> float:
        return getattr(self, f"{kind}_ratio")

    def ok(self, kind: str) -> bool:
        return getattr(self, f"{kind}_ok")


@dataclass
class LimitReport:
    """Worst per-joint usage of each limit over a trajectory.

    Ratios are 1.0 exactly at the limit. Positions count from the middle of
    the range (0 at mid-range, 1 at either end).
    """

    rows: List[JointLimitRow] = field(default_factory=list)
    tolerance: float = 0.05
    saturation_margin: float = 1e-6

    def column_ok(self, kind: str) -> bool:
        return all(row.ok(kind) for row in self.rows)

    @property
    def position_ok(self) -> bool:
        return self.column_ok("position")

    @property
    def velocity_ok(self) -> bool:
        return self.column_ok("velocity")

    @property
    def torque_ok(self) -> bool:
        return self.column_ok("torque")

    @property
    def passed(self) -> bool:
        return self.position_ok and self.velocity_ok and self.torque_ok

    def violators(self, kind: str) -> list[str]:
        return [row.joint for row in self.rows if not row.ok(kind)]

    def worst(self, kind: str) -> JointLimitRow | None:
        rows = [row for row in self.rows if np.isfinite(row.ratio(kind))]
        return max(rows, key=lambda row: row.ratio(kind), default=None)


def _as_rows(values, width: int) -> np.ndarray:
    array = np.asarray(values if values is not None else [], dtype=float)
    return array.reshape(-1, width) if width else np.zeros((0, 0))


def check_limits(
    model: RobotModel,
    qs: Sequence[np.ndarray],
    vs: Sequence[np.ndarray],
    us: Sequence[np.ndarray],
    tolerance: float = 0.05,
    saturation_margin: float = 1e-6,
) -> LimitReport:
    """Compare a trajectory against the model's joint limits.

    Position and velocity violations need the worst ratio above
    ``1 + tolerance``. Torques are hard bounds in the optimizer, so a torque
    counts as violated once it saturates: ratio >= 1 - saturation_margin.
    An empty trajectory yields an empty, passing report.
    """
    qs = _as_rows(qs, model.nq)
    vs = _as_rows(vs, model.nv)
    us = _as_rows(us, model.nu)
    report = LimitReport(tolerance=tolerance, saturation_margin=saturation_margin)
    if not (len(qs) or len(vs) or len(us)):
        return report

    lower, upper = model.position_lower, model.position_upper
    mid = np.where(np.isfinite(lower + upper), 0.5 * (lower + upper), 0.0)
    half = 0.5 * (upper - lower)
    q = qs[:, model.joint_q_index]
    position = np.where(np.isfinite(half), np.abs(q - mid) / half, 0.0)
    velocity = np.abs(vs[:, model.joint_v_index]) / model.velocity_limits
    torque = np.abs(us) / model.effort_limits

    pos_max = np.max(position, axis=0, initial=0.0)
    vel_max = np.max(velocity, axis=0, initial=0.0)
    tau_max = np.max(torque, axis=0, initial=0.0)
    actuated = dict(zip(model.actuated_joint_names, tau_max))

    for i, name in enumerate(model.revolute_joint_names):
        tau_ratio = float(actuated.get(name, np.nan))
        report.rows.append(
            JointLimitRow(
                joint=name,
                position_ratio=float(pos_max[i]),
                velocity_ratio=float(vel_max[i]),
                torque_ratio=tau_ratio,
                position_ok=bool(pos_max[i] <= 1.0 + tolerance),
                velocity_ok=bool(vel_max[i] <= 1.0 + tolerance),
                torque_ok=bool(np.isnan(tau_ratio) or tau_ratio < 1.0 - saturation_margin),
            )
        )
    return report
