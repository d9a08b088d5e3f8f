"""
Gait problems for the experiment families.

An experiment file is a TOML document::

    [motion]      name, length, height (+ feet, depth, repetitions, jumps, stance)
    [timing]      total_time and either knot_dt or knots, impacts
    [constraints] foot, com, friction, cop, joint, posture, torque
    [weights]     one weight per constraint family, mu, coverage
    [warm_start]  kind = "quasi-static" | "com-interpolated"
    [payload]     <hand frame> = <kg>
    [solver]      any SolverOptions field (optional)

Omitted values fall back to the motion's row of the characteristics table
and to the configured default weights. ``build_problem`` turns a spec into a
shooting problem: a contact schedule of running knots, one impulse knot at
every touchdown, and a terminal knot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from config import get_settings
from costs import (
    ComTracking,
    ControlReg,
    CopBarrier,
    CostTerm,
    FramePlacement,
    FrictionConeBarrier,
    JointLimitBarrier,
    PostureReg,
    WrenchConeSpec,
)
from hddp_dynamics import GRAVITY, ContactSet, State, center_of_mass, frame_placement, gravity_compensation
from hddp_knots import ContactKnot, ImpulseKnot, KnotModel, TerminalKnot
from hddp_limits import LimitReport, check_limits, parse_limit_selector, scale_limits
from hddp_model import RobotModel, attach_payload
from hddp_solver import IterationRecord, ShootingProblem, Solution, SolverOptions, solve
from spatial import Placement, quat_to_matrix, so3_exp, so3_log

MAX_KNOTS = 10_000
KNOT_DIVISION_TOLERANCE = 1e-9

CONSTRAINT_FLAGS = ("foot", "com", "friction", "cop", "joint", "posture", "torque")

MOTION_FAMILIES = {
    "stand": "stand",
    "walk_weights": "walk",
    "walk_fast": "walk",
    "squat_weights": "squat",
    "jump_1cm": "jump",
    "jump_10cm": "jump",
    "jump_obstacles": "obstacle_jump",
}

# length m, height m, total time s, knot dt s
MOTION_TABLE = {
    "stand": (0.0, 0.0, 0.3, 0.03),
    "walk_weights": (0.5, 0.05, 1.5, 0.03),
    "walk_fast": (0.7, 0.1, 0.7, 0.03),
    "squat_weights": (0.0, 0.2, 2.0, 0.03),
    "jump_1cm": (0.0, 0.01, 0.9, 0.01),
    "jump_10cm": (0.0, 0.1, 0.9, 0.01),
    "jump_obstacles": (0.6, 0.25, 2.7, 0.01),
}

DEFAULT_CONSTRAINTS = {
    "stand": frozenset({"friction", "cop", "joint", "posture", "torque"}),
    "walk_weights": frozenset({"foot", "friction", "cop", "joint", "posture", "torque"}),
    "walk_fast": frozenset({"foot", "com", "joint", "posture", "torque"}),
    "squat_weights": frozenset(CONSTRAINT_FLAGS),
    "jump_1cm": frozenset({"foot", "friction", "cop", "joint", "posture", "torque"}),
    "jump_10cm": frozenset({"foot", "friction", "cop", "joint", "posture", "torque"}),
    "jump_obstacles": frozenset({"foot", "friction", "cop", "joint", "torque"}),
}

# double support, single support, double support, single support
WALK_PHASE_SPLIT = (0.15, 0.35, 0.15, 0.35)

# bent-knee stance, degrees, matched on the joint name suffix
DEFAULT_STANCE_DEG = {"hip3": 15.0, "knee": 30.0, "ankle_pitch": 15.0}


class ExperimentError(Exception):
    """The experiment file does not describe a buildable problem."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ScalingCapError(Exception):
    """No limit scale factor up to the cap gives a trajectory inside all limits."""

    def __init__(self, selector: str, cap: float, log: list):
        self.selector = selector
        self.cap = cap
        self.log = log
        super().__init__(f"no factor <= {cap:g} on {selector} yields a feasible trajectory")


# ----------------------------------------------------------------------
# experiment file
# ----------------------------------------------------------------------
class MotionSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Literal["stand", "walk_weights", "walk_fast", "squat_weights", "jump_1cm", "jump_10cm", "jump_obstacles"]
    length: Optional[float] = Field(None, ge=0)
    height: Optional[float] = Field(None, ge=0)
    depth: Optional[float] = Field(None, ge=0)
    repetitions: int = Field(1, ge=1)
    jumps: int = Field(3, ge=1)
    feet: List[str] = Field(default_factory=lambda: ["left_foot", "right_foot"])
    stance: Dict[str, float] = Field(default_factory=dict)

    @field_validator("feet")
    @classmethod
    def _two_feet(cls, feet: List[str]) -> List[str]:
        if len(feet) != 2 or feet[0] == feet[1]:
            raise ValueError("motion needs exactly two distinct feet (left, right)")
        return feet


class TimingSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    total_time: Optional[float] = Field(None, gt=0)
    knot_dt: Optional[float] = Field(None, gt=0)
    knots: Optional[int] = Field(None, ge=1)
    impacts: bool = True


class ConstraintsSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    foot: Optional[bool] = None
    com: Optional[bool] = None
    friction: Optional[bool] = None
    cop: Optional[bool] = None
    joint: Optional[bool] = None
    posture: Optional[bool] = None
    torque: Optional[bool] = None


class WeightsSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    foot: Optional[float] = Field(None, ge=0)
    com: Optional[float] = Field(None, ge=0)
    friction: Optional[float] = Field(None, ge=0)
    cop: Optional[float] = Field(None, ge=0)
    joint: Optional[float] = Field(None, ge=0)
    posture: Optional[float] = Field(None, ge=0)
    torque: Optional[float] = Field(None, ge=0)
    mu: Optional[float] = Field(None, gt=0)
    coverage: Optional[float] = Field(None, gt=0, le=1)


class WarmStartSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["quasi-static", "com-interpolated"] = "quasi-static"


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    motion: MotionSection
    timing: TimingSection = Field(default_factory=TimingSection)
    constraints: ConstraintsSection = Field(default_factory=ConstraintsSection)
    weights: WeightsSection = Field(default_factory=WeightsSection)
    warm_start: WarmStartSection = Field(default_factory=WarmStartSection)
    payload: Dict[str, float] = Field(default_factory=dict)
    solver: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("payload")
    @classmethod
    def _non_negative_payload(cls, payload: Dict[str, float]) -> Dict[str, float]:
        for frame, mass in payload.items():
            if mass < 0:
                raise ValueError(f"payload at {frame} must be >= 0 kg, got {mass}")
        return payload

    @field_validator("solver")
    @classmethod
    def _known_solver_keys(cls, solver: Dict[str, Any]) -> Dict[str, Any]:
        SolverOptions(**solver)
        return solver

    @model_validator(mode="after")
    def _fill_from_table(self) -> "ExperimentSpec":
        length, height, total_time, knot_dt = MOTION_TABLE[self.motion.name]
        if self.motion.length is None:
            self.motion.length = length
        if self.motion.height is None:
            self.motion.height = height
        if self.motion.depth is None:
            self.motion.depth = self.motion.height
        timing = self.timing
        if timing.total_time is None:
            timing.total_time = total_time
        if timing.knots is not None:
            timing.knot_dt = timing.total_time / timing.knots
        else:
            if timing.knot_dt is None:
                timing.knot_dt = knot_dt
            ratio = timing.total_time / timing.knot_dt
            if abs(ratio - round(ratio)) > KNOT_DIVISION_TOLERANCE * max(1.0, ratio):
                raise ValueError(
                    f"total_time {timing.total_time:g} s is not a whole number of knot_dt "
                    f"{timing.knot_dt:g} s ({ratio:.6g} knots); set [timing] knots instead"
                )
            timing.knots = int(round(ratio))
        if timing.knots > MAX_KNOTS:
            raise ValueError(f"{timing.knots} knots exceeds the maximum of {MAX_KNOTS}")
        return self

    @property
    def family(self) -> str:
        return MOTION_FAMILIES[self.motion.name]

    @property
    def knots(self) -> int:
        return int(self.timing.knots)

    @property
    def knot_dt(self) -> float:
        return float(self.timing.knot_dt)

    @property
    def total_time(self) -> float:
        return float(self.timing.total_time)

    @property
    def constraint_set(self) -> frozenset:
        flags = set(DEFAULT_CONSTRAINTS[self.motion.name])
        for name in CONSTRAINT_FLAGS:
            value = getattr(self.constraints, name)
            if value is True:
                flags.add(name)
            elif value is False:
                flags.discard(name)
        return frozenset(flags)

    def weight_values(self, settings: dict | None = None) -> dict[str, float]:
        """Weights of every constraint family plus mu and coverage, defaults filled in."""
        settings = settings or get_settings()
        values = {name: float(settings[f"weight_{name}"]) for name in CONSTRAINT_FLAGS}
        values["mu"] = float(settings["mu"])
        values["coverage"] = float(settings["coverage"])
        for key, value in self.weights.model_dump().items():
            if value is not None:
                values[key] = float(value)
        return values


def parse_experiment(data: dict, path: str | None = None) -> ExperimentSpec:
    try:
        return ExperimentSpec.model_validate(data)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'experiment'}: {err['msg']}" for err in exc.errors()
        )
        raise ExperimentError(problems, path) from None


def load_experiment(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except OSError as exc:
        raise ExperimentError(f"cannot read experiment file: {exc.strerror or exc}", str(path)) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ExperimentError(f"malformed TOML: {exc}", str(path)) from None
    return parse_experiment(data, str(path))


def experiment_model(model: RobotModel, spec: ExperimentSpec) -> RobotModel:
    """The model with the experiment's hand payloads attached."""
    for frame, mass in sorted(spec.payload.items()):
        if not model.has_frame(frame):
            raise ExperimentError(f"payload frame {frame} is not in model {model.name}")
        model = attach_payload(model, frame, mass)
    return model


# ----------------------------------------------------------------------
# contact schedule
# ----------------------------------------------------------------------
@dataclass
class Phase:
    """A run of knots sharing one contact set.

    ``swings`` maps each moving foot to its (start, goal) placement; the foot
    follows ``swing_reference`` with apex height ``apex``.
    """

    knots: int
    contacts: Tuple[str, ...]
    swings: Dict[str, Tuple[Placement, Placement]] = field(default_factory=dict)
    apex: float = 0.0

    def __post_init__(self) -> None:
        self.contacts = tuple(self.contacts)
        if self.knots < 1:
            raise ExperimentError(f"phase with contacts {self.contacts} needs at least one knot")
        overlap = set(self.swings) & set(self.contacts)
        if overlap:
            raise ExperimentError(f"{', '.join(sorted(overlap))} cannot swing while in contact")


@dataclass
class PhaseSchedule:
    phases: List[Phase]
    knot_dt: float

    def __post_init__(self) -> None:
        if not self.phases:
            raise ExperimentError("empty contact schedule")
        if not self.knot_dt > 0:
            raise ExperimentError(f"knot_dt must be > 0, got {self.knot_dt}")

    @property
    def horizon(self) -> int:
        return sum(p.knots for p in self.phases)

    @property
    def durations(self) -> list[float]:
        return [p.knots * self.knot_dt for p in self.phases]

    def touchdowns(self, index: int, feet: Sequence[str]) -> tuple[str, ...]:
        """Feet landing at the end of phase ``index``; the last phase lands every swinging foot."""
        phase = self.phases[index]
        if index + 1 < len(self.phases):
            after = self.phases[index + 1].contacts
        else:
            after = tuple(feet) if phase.swings or not phase.contacts else phase.contacts
        return tuple(f for f in after if f not in phase.contacts)

    def contacts_after(self, index: int, feet: Sequence[str]) -> tuple[str, ...]:
        if index + 1 < len(self.phases):
            return self.phases[index + 1].contacts
        return tuple(feet)


def split_knots(total: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder split of ``total`` knots by ``fractions``."""
    raw = np.asarray(fractions, dtype=float) / float(np.sum(fractions)) * total
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[: total - int(counts.sum())]] += 1
    return counts.tolist()


def swing_reference(start: Placement, goal: Placement, apex: float, t: float) -> Placement:
    """Swing-foot placement at phase fraction ``t``.

    Ground-plane position and orientation move linearly (orientation along
    the geodesic); height follows a half-sine peaking at
    ``max(start z, goal z) + apex`` at t = 0.5. Endpoints are exact.
    """
    if not 0.0 <= t <= 1.0:
        raise ExperimentError(f"phase fraction must be in [0, 1], got {t}")
    if t == 0.0:
        return Placement(start.rotation.copy(), start.translation.copy())
    if t == 1.0:
        return Placement(goal.rotation.copy(), goal.translation.copy())
    p0, p1 = start.translation, goal.translation
    position = (1.0 - t) * p0 + t * p1
    top = max(p0[2], p1[2]) + apex
    position[2] += (top - 0.5 * (p0[2] + p1[2])) * math.sin(math.pi * t)
    rotation = start.rotation @ so3_exp(t * so3_log(start.rotation.T @ goal.rotation))
    return Placement(rotation, position)


def _shifted(placement: Placement, dx: float) -> Placement:
    return Placement(placement.rotation.copy(), placement.translation + np.array([dx, 0.0, 0.0]))


def stance_state(
    model: RobotModel,
    feet: Sequence[str] = ("left_foot", "right_foot"),
    angles: Optional[Dict[str, float]] = None,
) -> State:
    """Nominal bent-knee stance: soles on the ground and the CoM over the origin.

    Joints start at zero (clipped into range); ``angles`` (degrees, matched
    on the joint name or its ``_<suffix>``) bend them. Only the base is
    translated, so the stance is the same for every payload.
    """
    q = np.zeros(model.nq)
    if model.has_free_base:
        q[3] = 1.0
    joints = np.clip(np.zeros(model.position_lower.size), model.position_lower, model.position_upper)
    table = DEFAULT_STANCE_DEG if angles is None else angles
    for i, name in enumerate(model.revolute_joint_names):
        for key, degrees in table.items():
            if name == key or name.endswith("_" + key):
                joints[i] = np.clip(math.radians(degrees), model.position_lower[i], model.position_upper[i])
    q[model.joint_q_index] = joints
    if model.has_free_base:
        soles = [frame_placement(model, q, f).translation[2] for f in feet if model.has_frame(f)]
        if soles:
            q[2] -= float(np.mean(soles))
        q[:2] -= center_of_mass(model, q)[:2]
    return State(q, np.zeros(model.nv))


def _walk_schedule(spec: ExperimentSpec, feet, placements) -> tuple[PhaseSchedule, float]:
    left, right = feet
    length = spec.motion.length
    n = split_knots(spec.knots, WALK_PHASE_SPLIT)
    phases = [
        Phase(n[0], (left, right)),
        Phase(n[1], (left,), {right: (placements[right], _shifted(placements[right], length))}, spec.motion.height),
        Phase(n[2], (left, right)),
        Phase(n[3], (right,), {left: (placements[left], _shifted(placements[left], length))}, spec.motion.height),
    ]
    return PhaseSchedule(phases, spec.knot_dt), length


def _jump_phases(knots: int, dt: float, apex: float, feet, placements, advance: float) -> list[Phase]:
    flight = int(round(2.0 * math.sqrt(2.0 * apex / GRAVITY) / dt)) if apex > 0 else 0
    if flight < 1:
        raise ExperimentError(f"jump apex {apex} m gives no flight knot at dt = {dt} s")
    crouch = (knots - flight) // 2
    landing = knots - flight - crouch
    if crouch < 1 or landing < 1:
        raise ExperimentError(f"{knots} knots cannot hold a {flight}-knot flight with crouch and landing")
    swings = {f: (placements[f], _shifted(placements[f], advance)) for f in feet}
    return [Phase(crouch, tuple(feet)), Phase(flight, (), swings, apex), Phase(landing, tuple(feet))]


def build_schedule(model: RobotModel, spec: ExperimentSpec, stance: State) -> tuple[PhaseSchedule, float]:
    """Contact schedule and the forward travel of the whole motion."""
    feet = spec.motion.feet
    for frame in feet:
        if not model.has_frame(frame):
            raise ExperimentError(f"foot frame {frame} is not in model {model.name}")
    placements = {f: frame_placement(model, stance.q, f) for f in feet}
    family = spec.family
    if family == "walk":
        return _walk_schedule(spec, feet, placements)
    if family in ("stand", "squat"):
        return PhaseSchedule([Phase(spec.knots, tuple(feet))], spec.knot_dt), 0.0
    if family == "jump":
        return PhaseSchedule(_jump_phases(spec.knots, spec.knot_dt, spec.motion.height, feet, placements, 0.0), spec.knot_dt), 0.0

    jumps = spec.motion.jumps
    advance = spec.motion.length / jumps
    phases: list[Phase] = []
    for count in split_knots(spec.knots, [1.0] * jumps):
        cycle = _jump_phases(count, spec.knot_dt, spec.motion.height, feet, placements, advance)
        phases.extend(cycle)
        placements = {f: cycle[1].swings[f][1] for f in feet}
    return PhaseSchedule(phases, spec.knot_dt), spec.motion.length


# ----------------------------------------------------------------------
# problem assembly
# ----------------------------------------------------------------------
@dataclass
class GaitProblem(ShootingProblem):
    """Shooting problem plus what it was built from."""

    model: Optional[RobotModel] = None
    spec: Optional[ExperimentSpec] = None
    schedule: Optional[PhaseSchedule] = None
    stance: Optional[State] = None
    com_path: Optional[Tuple[np.ndarray, np.ndarray]] = None

    @property
    def knot_times(self) -> np.ndarray:
        """Start time of every knot (terminal included); impulse knots take no time."""
        dts = [0.0 if knot.is_impulse else knot.dt for knot in self.running]
        return np.concatenate([[0.0], np.cumsum(dts)])


def _com_reference(spec: ExperimentSpec, com0: np.ndarray, travel: float) -> Callable[[float], np.ndarray]:
    total = spec.total_time
    if spec.family == "squat":
        depth, reps = spec.motion.depth, spec.motion.repetitions

        def squat(t: float) -> np.ndarray:
            drop = 0.5 * depth * (1.0 - math.cos(2.0 * math.pi * reps * t / total))
            return com0 - np.array([0.0, 0.0, drop])

        return squat
    return lambda t: com0 + np.array([travel * t / total, 0.0, 0.0])


class _CostBuilder:
    def __init__(self, model: RobotModel, spec: ExperimentSpec, stance: State):
        self.flags = spec.constraint_set
        self.w = spec.weight_values()
        self.cone = WrenchConeSpec(mu=self.w["mu"], coverage=self.w["coverage"])
        self.stance = stance.x

    def state_terms(self) -> list[CostTerm]:
        terms: list[CostTerm] = []
        if "joint" in self.flags:
            terms.append(JointLimitBarrier(self.w["joint"]))
        if "posture" in self.flags:
            terms.append(PostureReg(self.w["posture"], self.stance))
        return terms

    def feet(self, targets: Dict[str, Placement]) -> list[CostTerm]:
        if "foot" not in self.flags:
            return []
        return [FramePlacement(self.w["foot"], frame, target) for frame, target in targets.items()]

    def com(self, reference: Optional[np.ndarray]) -> list[CostTerm]:
        if "com" not in self.flags or reference is None:
            return []
        return [ComTracking(self.w["com"], reference)]

    def running(self, contacts: Sequence[str], targets, com_reference) -> list[CostTerm]:
        terms = self.feet(targets) + self.com(com_reference)
        if "friction" in self.flags:
            terms += [FrictionConeBarrier(self.w["friction"], f, self.cone) for f in contacts]
        if "cop" in self.flags:
            terms += [CopBarrier(self.w["cop"], f, self.cone) for f in contacts]
        terms += self.state_terms()
        if "torque" in self.flags:
            terms.append(ControlReg(self.w["torque"]))
        return terms


def build_problem(model: RobotModel, spec: ExperimentSpec, payload: bool = True) -> GaitProblem:
    """Shooting problem for an experiment.

    With ``payload`` the experiment payloads are attached first; the
    problem's ``model`` is the one its knots integrate.
    """
    if payload:
        model = experiment_model(model, spec)
    settings = get_settings()
    stance = stance_state(model, spec.motion.feet, spec.motion.stance or None)
    schedule, travel = build_schedule(model, spec, stance)
    com0 = center_of_mass(model, stance.q)
    com_reference = _com_reference(spec, com0, travel)
    costs = _CostBuilder(model, spec, stance)
    feet = spec.motion.feet
    baumgarte = (float(settings["baumgarte_alpha"]), float(settings["baumgarte_beta"]))

    placements = {f: frame_placement(model, stance.q, f) for f in feet}
    running: list[KnotModel] = []
    pending: Dict[str, Placement] = {}
    k = 0
    for index, phase in enumerate(schedule.phases):
        contacts = ContactSet(phase.contacts, {f: placements[f] for f in phase.contacts})
        for j in range(phase.knots):
            targets = {f: swing_reference(s, g, phase.apex, j / phase.knots) for f, (s, g) in phase.swings.items()}
            targets.update(pending)
            pending = {}
            terms = costs.running(phase.contacts, targets, com_reference(k * spec.knot_dt))
            running.append(ContactKnot(model, spec.knot_dt, terms, contacts, None, None, *baumgarte))
            k += 1
        for frame, (_, goal) in phase.swings.items():
            placements[frame] = goal
        landing = schedule.touchdowns(index, feet)
        if not landing:
            continue
        landed = {f: placements[f] for f in landing}
        if spec.timing.impacts:
            after = schedule.contacts_after(index, feet)
            impulse_contacts = ContactSet(after, {f: placements[f] for f in after})
            running.append(ImpulseKnot(model, impulse_contacts, costs.feet(landed) + costs.state_terms()))
        else:
            pending = landed

    terminal_terms = costs.feet(placements) + costs.com(com_reference(spec.total_time)) + costs.state_terms()
    terminal = TerminalKnot(model, terminal_terms)
    return GaitProblem(
        stance.x,
        running,
        terminal,
        model=model,
        spec=spec,
        schedule=schedule,
        stance=stance,
        com_path=(com0, com0 + np.array([travel, 0.0, 0.0])),
    )


# ----------------------------------------------------------------------
# warm starts
# ----------------------------------------------------------------------
def quasi_static_warm_start(
    model: RobotModel, problem: ShootingProblem, kind: Optional[str] = None
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Initial states and controls for the solver.

    ``quasi-static`` replicates the initial state; ``com-interpolated``
    translates the base so the CoM moves linearly along the problem's CoM
    path at constant velocity. Controls are the torques holding each state
    still on its knot's contacts (zero in flight, clamped to the bounds).
    """
    if kind is None:
        spec = getattr(problem, "spec", None)
        kind = spec.warm_start.kind if spec is not None else "quasi-static"
    if kind not in ("quasi-static", "com-interpolated"):
        raise ExperimentError(f"unknown warm start {kind!r}")
    nq = model.nq
    x0 = problem.x0
    knots = [*problem.running]
    dts = [0.0 if knot.is_impulse else knot.dt for knot in knots]
    times = np.concatenate([[0.0], np.cumsum(dts)])
    total = times[-1] if times[-1] > 0 else 1.0

    com_path = getattr(problem, "com_path", None)
    xs = []
    for t in times:
        x = x0.copy()
        if kind == "com-interpolated" and com_path is not None and model.has_free_base:
            start, goal = com_path
            x[:3] += (goal - start) * t / total
            x[nq : nq + 3] = quat_to_matrix(x0[3:7]).T @ ((goal - start) / total)
        xs.append(x)

    us = []
    for t, knot in enumerate(knots):
        if knot.nu == 0:
            us.append(np.zeros(0))
        elif not len(knot.contacts):
            us.append(np.zeros(knot.nu))
        else:
            tau, _ = gravity_compensation(model, State.from_vector(xs[t], nq), knot.contacts)
            us.append(knot.clamp(tau))
    return xs, us


# ----------------------------------------------------------------------
# solving and design scaling
# ----------------------------------------------------------------------
def solver_options(spec: ExperimentSpec | None = None, overrides: dict | None = None) -> SolverOptions:
    """Settings < experiment ``[solver]`` block < ``overrides`` (None values ignored)."""
    settings = get_settings()
    values = {key: settings[key] for key in SolverOptions.model_fields if key in settings}
    if spec is not None:
        values.update(spec.solver)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return SolverOptions(**values)


def solve_experiment(
    model: RobotModel,
    spec: ExperimentSpec,
    options: SolverOptions | None = None,
    warm_start: str | None = None,
    callback: Optional[Callable[[IterationRecord], None]] = None,
) -> tuple[GaitProblem, Solution]:
    problem = build_problem(model, spec)
    init_xs, init_us = quasi_static_warm_start(problem.model, problem, warm_start)
    solution = solve(problem, init_xs, init_us, options or solver_options(spec), callback)
    return problem, solution


def solution_arrays(problem: ShootingProblem, solution: Solution) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked q, v of every state and u of every controlled knot."""
    nq = problem.x0.size - (problem.terminal.ndx // 2)
    xs = np.asarray(solution.xs)
    us = [u for u, knot in zip(solution.us, problem.running) if knot.nu]
    nu = max((knot.nu for knot in problem.running), default=0)
    return xs[:, :nq], xs[:, nq:], np.asarray(us).reshape(-1, nu)


def check_solution_limits(problem: GaitProblem, solution: Solution, settings: dict | None = None) -> LimitReport:
    settings = settings or get_settings()
    qs, vs, us = solution_arrays(problem, solution)
    return check_limits(
        problem.model,
        qs,
        vs,
        us,
        tolerance=float(settings["limit_tolerance"]),
        saturation_margin=float(settings["saturation_margin"]),
    )


@dataclass
class ScalingStep:
    factor: float
    converged: bool
    iterations: int
    report: LimitReport

    @property
    def feasible(self) -> bool:
        return self.converged and self.report.passed


@dataclass
class ScalingResult:
    selector: str
    factor: float
    log: List[ScalingStep]


def design_scaling_search(
    model: RobotModel,
    spec: ExperimentSpec,
    limit: str,
    factor_step: float | None = None,
    cap: float | None = None,
    options: SolverOptions | None = None,
    confirm: bool = False,
    on_step: Optional[Callable[[ScalingStep], None]] = None,
) -> ScalingResult:
    """Smallest limit multiplier in 1, 1 + step, 1 + 2 step, ... that yields a trajectory inside all limits.

    ``limit`` is ``<joint pattern>:<position|velocity|torque>``. With
    ``confirm`` the next factor is solved as well and logged, so the log
    shows that feasibility persists above the answer.
    """
    settings = get_settings()
    step = float(factor_step if factor_step is not None else settings["factor_step"])
    cap = float(cap if cap is not None else settings["factor_cap"])
    if not step > 0:
        raise ExperimentError(f"factor step must be > 0, got {step}")
    pattern, kind = parse_limit_selector(limit)
    options = options or solver_options(spec)

    def attempt(factor: float) -> ScalingStep:
        scaled = scale_limits(model, pattern, kind, factor)
        problem, solution = solve_experiment(scaled, spec, options)
        entry = ScalingStep(factor, solution.converged, solution.diagnostics.iterations, check_solution_limits(problem, solution, settings))
        if on_step:
            on_step(entry)
        return entry

    log: list[ScalingStep] = []
    n = 0
    while 1.0 + n * step <= cap * (1 + 1e-12):
        factor = 1.0 + n * step
        entry = attempt(factor)
        log.append(entry)
        if entry.feasible:
            if confirm and factor + step <= cap * (1 + 1e-12):
                log.append(attempt(factor + step))
            return ScalingResult(limit, factor, log)
        n += 1
    raise ScalingCapError(limit, cap, log)
