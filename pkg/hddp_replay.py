"""
Replay of planned motions under joint-space PD control.

The robot is re-integrated at the control rate with a few physics substeps
per tick. The floating base is left uncontrolled. Feet meet a rigid ground
plane through the same KKT contact dynamics the planner uses: an impulse
resolves every touchdown, and Baumgarte terms hold the contact where it
landed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from config import get_settings
from hddp_dynamics import (
    ContactSet,
    DynamicsError,
    State,
    contact_forward_dynamics,
    frame_placement,
    frame_velocity,
    impulse_dynamics,
    integrate_state,
    mass_matrix,
)
from hddp_model import RobotModel
from hddp_trajio import InterpolatedTrajectory
from hddp_utils import fmt17
from spatial import Placement

# critically damped position and velocity correction of active contacts
REPLAY_BAUMGARTE = (20.0, 400.0)


class ReplayError(Exception):
    """Inputs that cannot be replayed (dimension mismatch, bad gains)."""


@dataclass
class PDGains:
    kp: np.ndarray
    kd: np.ndarray
    feedforward: bool = True

    def __post_init__(self) -> None:
        self.kp = np.atleast_1d(np.asarray(self.kp, dtype=float))
        self.kd = np.atleast_1d(np.asarray(self.kd, dtype=float))
        if self.kp.shape != self.kd.shape:
            raise ReplayError(f"kp has {self.kp.size} entries, kd has {self.kd.size}")
        if np.any(self.kp < 0) or np.any(self.kd < 0):
            raise ReplayError("PD gains must be >= 0")

    @classmethod
    def default(cls, model: RobotModel, q: np.ndarray, kp: float = 300.0, feedforward: bool = True) -> "PDGains":
        """Uniform ``kp`` with kd = 2 sqrt(kp * joint inertia), the inertia read off M(q)."""
        inertia = np.diag(mass_matrix(model, q))[model.actuated_dofs]
        gains = np.full(model.nu, float(kp))
        return cls(gains, 2.0 * np.sqrt(gains * inertia), feedforward)


@dataclass(frozen=True)
class GroundPlane:
    height: float = 0.0

    def clearance(self, position: np.ndarray) -> float:
        return float(position[2] - self.height)

    def project(self, placement: Placement) -> Placement:
        point = placement.translation.copy()
        point[2] = self.height
        return Placement(placement.rotation.copy(), point)


def contact_event_detector(
    model: RobotModel, state: State, frames: Sequence[str], ground: GroundPlane = GroundPlane()
) -> ContactSet:
    """Frames at or below the ground and not moving up, with their contact references."""
    active, references = [], {}
    for frame in frames:
        placement = frame_placement(model, state.q, frame)
        vz = frame_velocity(model, state, frame)[2]
        if ground.clearance(placement.translation) <= 0.0 and vz <= 0.0:
            active.append(frame)
            references[frame] = ground.project(placement)
    return ContactSet(tuple(active), references)


class ContactEventDetector:
    """Stateful touchdown and lift-off logic with a hysteresis band.

    A foot becomes active when it reaches the ground while descending, but
    only once it has been above the band since its last contact (or when it
    sinks below the band). It is released when its normal force pulls, or
    when the plan says swing and the force vanishes.
    """

    def __init__(self, frames: Sequence[str], ground: GroundPlane = GroundPlane(), hysteresis: float = 0.002):
        self.frames = tuple(frames)
        self.ground = ground
        self.hysteresis = float(hysteresis)
        self.active = {f: False for f in self.frames}
        self.armed = {f: True for f in self.frames}
        self.activations = {f: 0 for f in self.frames}

    def initialize(self, heights: Dict[str, float], planned: Dict[str, bool]) -> None:
        for frame in self.frames:
            on_ground = planned.get(frame, False) and heights[frame] <= self.hysteresis
            self.active[frame] = bool(on_ground)
            self.armed[frame] = not on_ground

    def observe(self, frame: str, height: float, vz: float) -> bool:
        """Update an inactive foot; True when it touches down now."""
        if self.active[frame]:
            return False
        if height > self.hysteresis:
            self.armed[frame] = True
        if (self.armed[frame] and height <= 0.0 and vz <= 0.0) or height < -self.hysteresis:
            self.active[frame] = True
            self.armed[frame] = False
            self.activations[frame] += 1
            return True
        return False

    def release(self, frame: str, normal_force: float, planned_swing: bool) -> bool:
        """Deactivate a foot whose contact force no longer pushes; True when released."""
        if not self.active[frame]:
            return False
        if normal_force < 0.0 or (planned_swing and normal_force <= 0.0):
            self.active[frame] = False
            return True
        return False

    def active_frames(self) -> tuple[str, ...]:
        return tuple(f for f in self.frames if self.active[f])


@dataclass
class ReplayReport:
    base_deviation: np.ndarray
    joint_tracking_rms: float
    fell: bool
    fell_step: Optional[int] = None
    frames: tuple[str, ...] = ()
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    base: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    planned_base: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    joint_error: np.ndarray = field(default_factory=lambda: np.zeros(0))
    contact_forces: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 6)))
    touchdowns: Dict[str, int] = field(default_factory=dict)

    def within(self, max_xy: float, max_z: float) -> bool:
        dx, dy, dz = self.base_deviation
        return not self.fell and dx <= max_xy and dy <= max_xy and dz <= max_z

    def to_csv(self, path: str | Path) -> Path:
        """Per-tick base position, plan, tracking error and contact wrenches."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            header = ["t", "x", "y", "z", "x_ref", "y_ref", "z_ref", "joint_rms"]
            for frame in self.frames:
                header += [f"{frame}_{axis}" for axis in ("fx", "fy", "fz", "tx", "ty", "tz")]
            writer.writerow(header)
            for k in range(len(self.times)):
                row = [fmt17(self.times[k])]
                row += [fmt17(x) for x in self.base[k]]
                row += [fmt17(x) for x in self.planned_base[k]]
                row.append(fmt17(self.joint_error[k]))
                for j in range(len(self.frames)):
                    row += [fmt17(x) for x in self.contact_forces[k, j]]
                writer.writerow(row)
        return path


def _solve_contacts(model, state, tau, detector: ContactEventDetector, references, planned_swing):
    """Contact dynamics, dropping feet that would pull until every active force pushes."""
    while True:
        active = detector.active_frames()
        contacts = ContactSet(active, {f: references[f] for f in active})
        result = contact_forward_dynamics(model, state, contacts, tau, *REPLAY_BAUMGARTE)
        released = [f for f, w in result.wrenches.items() if detector.release(f, float(w[2]), planned_swing[f])]
        if not released:
            return contacts, result


def replay(
    model: RobotModel,
    interpolated: InterpolatedTrajectory,
    gains: Optional[PDGains] = None,
    ground: GroundPlane = GroundPlane(),
    settings: dict | None = None,
) -> ReplayReport:
    """Track ``interpolated`` with PD control and report how far the base strays.

    Per tick: tau = kp (q_ref - q) + kd (v_ref - v) [+ u_ref], clamped to the
    effort limits, held over the substeps. The run stops early and reports
    ``fell`` when the base sinks more than the fall threshold below the plan
    or the state stops being finite.
    """
    settings = settings or get_settings()
    substeps = int(settings["substeps"])
    fall_threshold = float(settings["fall_threshold"])
    traj = interpolated
    if traj.qs.shape[1] != model.nq or traj.vs.shape[1] != model.nv or traj.us.shape[1] != model.nu:
        raise ReplayError(
            f"trajectory has nq={traj.qs.shape[1]}, nv={traj.vs.shape[1]}, nu={traj.us.shape[1]}; "
            f"model {model.name} has {model.nq}, {model.nv}, {model.nu}"
        )
    for frame in traj.frames:
        if not model.has_frame(frame):
            raise ReplayError(f"contact frame {frame} is not in model {model.name}")
    state = State(traj.qs[0].copy(), traj.vs[0].copy())
    gains = gains or PDGains.default(model, state.q, float(settings["kp"]), bool(settings["feedforward"]))
    if gains.kp.size != model.nu:
        raise ReplayError(f"gains have {gains.kp.size} entries, model has {model.nu} actuated joints")

    actuated = np.array([model.joints[i].actuated for i in model.revolute_joints], dtype=bool)
    q_idx = model.joint_q_index[actuated]
    v_idx = model.joint_v_index[actuated]
    limit = model.effort_limits
    dt = 1.0 / traj.rate
    h = dt / substeps

    frames = traj.frames
    detector = ContactEventDetector(frames, ground, float(settings["hysteresis"]))
    placements = {f: frame_placement(model, state.q, f) for f in frames}
    detector.initialize(
        {f: ground.clearance(p.translation) for f, p in placements.items()},
        {f: bool(traj.active[0, j]) for j, f in enumerate(frames)},
    )
    references = {f: ground.project(placements[f]) for f in detector.active_frames()}

    n = traj.samples
    base = np.zeros((n, 3))
    planned = np.zeros((n, 3))
    joint_error = np.zeros(n)
    forces = np.zeros((n, len(frames), 6))
    if model.has_free_base:
        base[0], planned[0] = state.q[:3], traj.qs[0, :3]
    fell, fell_step, last = False, None, n - 1

    for i in range(n - 1):
        tau = gains.kp * (traj.qs[i, q_idx] - state.q[q_idx]) + gains.kd * (traj.vs[i, v_idx] - state.v[v_idx])
        if gains.feedforward:
            tau = tau + traj.us[i]
        tau = np.clip(tau, -limit, limit)
        planned_swing = {f: not traj.active[i, j] for j, f in enumerate(frames)}
        try:
            for _ in range(substeps):
                landed = []
                for frame in frames:
                    placement = frame_placement(model, state.q, frame)
                    vz = frame_velocity(model, state, frame)[2]
                    if detector.observe(frame, ground.clearance(placement.translation), vz):
                        landed.append(frame)
                        references[frame] = ground.project(placement)
                if landed:
                    active = detector.active_frames()
                    impact = impulse_dynamics(model, state, ContactSet(active, {f: references[f] for f in active}))
                    state = State(state.q, impact.v_plus)
                contacts, result = _solve_contacts(model, state, tau, detector, references, planned_swing)
                state = integrate_state(model, state, result.vdot, h)
        except (DynamicsError, np.linalg.LinAlgError, FloatingPointError):
            fell, fell_step, last = True, i + 1, i
            break

        k = i + 1
        for j, frame in enumerate(frames):
            if frame in result.wrenches:
                forces[k, j] = result.wrenches[frame]
        joint_error[k] = float(np.sqrt(np.mean((traj.qs[k, model.joint_q_index] - state.q[model.joint_q_index]) ** 2)))
        if model.has_free_base:
            base[k], planned[k] = state.q[:3], traj.qs[k, :3]
        if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.v))):
            fell, fell_step, last = True, k, k
            break
        if model.has_free_base and state.q[2] < traj.qs[k, 2] - fall_threshold:
            fell, fell_step, last = True, k, k
            break

    span = slice(0, last + 1)
    finite = np.all(np.isfinite(base[span]), axis=1) & np.all(np.isfinite(planned[span]), axis=1)
    deviation = np.abs(base[span][finite] - planned[span][finite])
    return ReplayReport(
        base_deviation=np.max(deviation, axis=0, initial=0.0),
        joint_tracking_rms=float(np.sqrt(np.mean(joint_error[1 : last + 1] ** 2))) if last > 0 else 0.0,
        fell=fell,
        fell_step=fell_step,
        frames=frames,
        times=traj.times[span].copy(),
        base=base[span],
        planned_base=planned[span],
        joint_error=joint_error[span],
        contact_forces=forces[span],
        touchdowns=dict(detector.activations),
    )
