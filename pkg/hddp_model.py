"""
Robot model: kinematic tree, inertial parameters, joint limits and named frames.

Models are loaded from a line-oriented text file::

    model <name>
    body  <name> mass=<kg> com=<x,y,z> inertia=<ixx,iyy,izz,ixy,ixz,iyz>
    joint <name> type=<revolute|free> parent=<body|world> child=<body>
          axis=<x,y,z> xyz=<x,y,z> rpy=<r,p,y> limits=<lo,hi> vmax=<v> taumax=<t>
    frame <name> body=<body> xyz=<x,y,z> rpy=<r,p,y>

(one record per line, ``#`` starts a comment). The ``model`` record is optional;
without it the model is named after the file stem. A model has at most one
free-floating joint; when present it is the first joint and its parent is
``world``. Models without one are fixed-base.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from hddp_dynamics import State
from hddp_utils import fmt17
from spatial import Placement

WORLD = "world"
AXIS_TOLERANCE = 1e-12


class ModelError(Exception):
    """Base error for model files and model invariants."""


class ModelParseError(ModelError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = path or "<model>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}")


class TopologyError(ModelError):
    """Kinematic structure is not a single rooted tree in parent-first order."""


class ModelInvariantError(ModelError):
    def __init__(self, owner: str, field_name: str, message: str):
        self.owner = owner
        self.field = field_name
        super().__init__(f"{owner}.{field_name}: {message}")


@dataclass(frozen=True, eq=False)
class BodySpec:
    name: str
    mass: float
    com_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotational_inertia: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))


@dataclass(frozen=True, eq=False)
class JointSpec:
    name: str
    type: str  # "revolute" or "free"
    parent: str
    child: str
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    parent_frame_transform: Placement = field(default_factory=Placement)
    position_limits: tuple[float, float] = (-np.inf, np.inf)
    velocity_limit: float = np.inf
    effort_limit: float = np.inf
    actuated: bool = True

    @property
    def is_free(self) -> bool:
        return self.type == "free"

    @property
    def nq(self) -> int:
        return 7 if self.is_free else 1

    @property
    def nv(self) -> int:
        return 6 if self.is_free else 1


@dataclass(frozen=True, eq=False)
class FrameSpec:
    name: str
    body: str
    placement: Placement = field(default_factory=Placement)


@dataclass(frozen=True, eq=False)
class RobotModel:
    """Immutable kinematic tree. Index helpers are derived lazily and cached."""

    bodies: tuple[BodySpec, ...]
    joints: tuple[JointSpec, ...]
    frames: tuple[FrameSpec, ...] = ()
    name: str = "robot"

    def __post_init__(self) -> None:
        _check_bodies(self.bodies)
        _check_joints(self.joints)
        _check_topology(self.bodies, self.joints)
        names = [b.name for b in self.bodies] + [f.name for f in self.frames]
        if len(set(names)) != len(names):
            raise ModelInvariantError(self.name, "frames", "frame and body names must be unique")
        body_names = {b.name for b in self.bodies}
        for frame in self.frames:
            if frame.body not in body_names:
                raise TopologyError(f"frame {frame.name} references unknown body {frame.body}")

    # ------------------------------------------------------------------
    # dimensions
    # ------------------------------------------------------------------
    @cached_property
    def has_free_base(self) -> bool:
        return bool(self.joints) and self.joints[0].is_free

    @cached_property
    def nq(self) -> int:
        return sum(j.nq for j in self.joints)

    @cached_property
    def nv(self) -> int:
        return sum(j.nv for j in self.joints)

    @cached_property
    def nu(self) -> int:
        return sum(1 for j in self.joints if not j.is_free and j.actuated)

    @cached_property
    def total_mass(self) -> float:
        return float(sum(b.mass for b in self.bodies))

    # ------------------------------------------------------------------
    # indexing
    # ------------------------------------------------------------------
    @cached_property
    def body_index(self) -> dict[str, int]:
        return {b.name: i for i, b in enumerate(self.bodies)}

    @cached_property
    def joint_index(self) -> dict[str, int]:
        return {j.name: i for i, j in enumerate(self.joints)}

    @cached_property
    def idx_q(self) -> tuple[int, ...]:
        return tuple(np.cumsum([0] + [j.nq for j in self.joints])[:-1].tolist())

    @cached_property
    def idx_v(self) -> tuple[int, ...]:
        return tuple(np.cumsum([0] + [j.nv for j in self.joints])[:-1].tolist())

    @cached_property
    def parent_body(self) -> tuple[int, ...]:
        """Parent body index of each joint, -1 for the world."""
        return tuple(-1 if j.parent == WORLD else self.body_index[j.parent] for j in self.joints)

    @cached_property
    def child_body(self) -> tuple[int, ...]:
        return tuple(self.body_index[j.child] for j in self.joints)

    @cached_property
    def body_joint(self) -> tuple[int, ...]:
        """Joint moving each body, -1 for a body welded to the world."""
        owner = [-1] * len(self.bodies)
        for j, child in enumerate(self.child_body):
            owner[child] = j
        return tuple(owner)

    @cached_property
    def support(self) -> tuple[tuple[int, ...], ...]:
        """Joint indices from the root down to each body."""
        chains = []
        for b in range(len(self.bodies)):
            chain = []
            j = self.body_joint[b]
            while j >= 0:
                chain.append(j)
                parent = self.parent_body[j]
                j = self.body_joint[parent] if parent >= 0 else -1
            chains.append(tuple(reversed(chain)))
        return tuple(chains)

    @cached_property
    def support_dofs(self) -> tuple[np.ndarray, ...]:
        out = []
        for chain in self.support:
            dofs = [self.idx_v[j] + k for j in chain for k in range(self.joints[j].nv)]
            out.append(np.array(dofs, dtype=int))
        return tuple(out)

    @cached_property
    def frame_lookup(self) -> dict[str, tuple[int, Placement]]:
        """Body index and body-local placement of every named frame (bodies included)."""
        lookup = {b.name: (i, Placement()) for i, b in enumerate(self.bodies)}
        for frame in self.frames:
            lookup[frame.name] = (self.body_index[frame.body], frame.placement)
        return lookup

    @cached_property
    def revolute_joints(self) -> tuple[int, ...]:
        return tuple(i for i, j in enumerate(self.joints) if not j.is_free)

    @cached_property
    def actuated_dofs(self) -> np.ndarray:
        return np.array(
            [self.idx_v[i] for i in self.revolute_joints if self.joints[i].actuated], dtype=int
        )

    @cached_property
    def actuation_matrix(self) -> np.ndarray:
        """Selection matrix S (nv x nu) mapping joint torques into generalized forces."""
        s = np.zeros((self.nv, self.nu))
        s[self.actuated_dofs, np.arange(self.nu)] = 1.0
        return s

    @cached_property
    def joint_q_index(self) -> np.ndarray:
        return np.array([self.idx_q[i] for i in self.revolute_joints], dtype=int)

    @cached_property
    def joint_v_index(self) -> np.ndarray:
        return np.array([self.idx_v[i] for i in self.revolute_joints], dtype=int)

    @cached_property
    def position_lower(self) -> np.ndarray:
        return np.array([self.joints[i].position_limits[0] for i in self.revolute_joints])

    @cached_property
    def position_upper(self) -> np.ndarray:
        return np.array([self.joints[i].position_limits[1] for i in self.revolute_joints])

    @cached_property
    def velocity_limits(self) -> np.ndarray:
        return np.array([self.joints[i].velocity_limit for i in self.revolute_joints])

    @cached_property
    def effort_limits(self) -> np.ndarray:
        return np.array(
            [self.joints[i].effort_limit for i in self.revolute_joints if self.joints[i].actuated]
        )

    @cached_property
    def body_masses(self) -> np.ndarray:
        return np.array([b.mass for b in self.bodies], dtype=float)

    @cached_property
    def body_coms(self) -> np.ndarray:
        return np.array([b.com_offset for b in self.bodies], dtype=float).reshape(-1, 3)

    @cached_property
    def body_inertias(self) -> np.ndarray:
        return np.array([b.rotational_inertia for b in self.bodies], dtype=float).reshape(-1, 3, 3)

    @cached_property
    def revolute_joint_names(self) -> tuple[str, ...]:
        return tuple(self.joints[i].name for i in self.revolute_joints)

    @cached_property
    def actuated_joint_names(self) -> tuple[str, ...]:
        return tuple(self.joints[i].name for i in self.revolute_joints if self.joints[i].actuated)

    def frame_names(self) -> list[str]:
        return list(self.frame_lookup)

    def has_frame(self, name: str) -> bool:
        return name in self.frame_lookup


# ----------------------------------------------------------------------
# invariants
# ----------------------------------------------------------------------
def _check_bodies(bodies) -> None:
    for body in bodies:
        if body.mass < 0:
            raise ModelInvariantError(body.name, "mass", f"must be >= 0, got {body.mass}")
        inertia = np.asarray(body.rotational_inertia, dtype=float)
        if inertia.shape != (3, 3):
            raise ModelInvariantError(body.name, "rotational_inertia", "must be 3x3")
        if not np.allclose(inertia, inertia.T, atol=1e-12):
            raise ModelInvariantError(body.name, "rotational_inertia", "must be symmetric")
        principal = np.linalg.eigvalsh(inertia)
        scale = max(1.0, float(np.max(np.abs(principal))))
        if principal[0] < -1e-12 * scale:
            raise ModelInvariantError(body.name, "rotational_inertia", "must be positive semidefinite")
        a, b, c = principal
        if a + b < c - 1e-9 * scale:
            raise ModelInvariantError(
                body.name, "rotational_inertia", "principal moments violate the triangle inequality"
            )


def _check_joints(joints) -> None:
    for index, joint in enumerate(joints):
        if joint.type not in ("revolute", "free"):
            raise ModelInvariantError(joint.name, "type", f"unknown joint type {joint.type!r}")
        if joint.is_free:
            if index != 0 or joint.parent != WORLD:
                raise TopologyError(
                    f"free-floating joint {joint.name} must be the first joint and attach to world"
                )
            if not np.allclose(joint.parent_frame_transform.rotation, np.eye(3)) or np.any(
                joint.parent_frame_transform.translation
            ):
                raise ModelInvariantError(joint.name, "parent_frame_transform", "must be identity")
            continue
        if abs(np.linalg.norm(joint.axis) - 1.0) > AXIS_TOLERANCE:
            raise ModelInvariantError(joint.name, "axis", "must have unit norm")
        lower, upper = joint.position_limits
        if not lower < upper:
            raise ModelInvariantError(joint.name, "position_limits", f"lower {lower} >= upper {upper}")
        if not joint.velocity_limit > 0:
            raise ModelInvariantError(joint.name, "velocity_limit", "must be > 0")
        if joint.actuated and not joint.effort_limit > 0:
            raise ModelInvariantError(joint.name, "effort_limit", "must be > 0 for actuated joints")


def _check_topology(bodies, joints) -> None:
    body_names = [b.name for b in bodies]
    known = set(body_names)
    if len(known) != len(body_names):
        raise TopologyError("duplicate body names")
    if len({j.name for j in joints}) != len(joints):
        raise TopologyError("duplicate joint names")
    if sum(1 for j in joints if j.is_free) > 1:
        raise TopologyError("more than one free-floating joint")

    parent_of: dict[str, str] = {}
    for joint in joints:
        if joint.child not in known:
            raise TopologyError(f"joint {joint.name} child {joint.child} is not a body")
        if joint.parent != WORLD and joint.parent not in known:
            raise TopologyError(f"joint {joint.name} parent {joint.parent} is not a body")
        if joint.child == joint.parent:
            raise TopologyError(f"joint {joint.name} connects {joint.child} to itself")
        if joint.child in parent_of:
            raise TopologyError(f"body {joint.child} has more than one parent joint")
        parent_of[joint.child] = joint.parent

    roots = [name for name in body_names if name not in parent_of]
    roots += [j.child for j in joints if j.parent == WORLD]
    if len(roots) != 1:
        raise TopologyError(f"expected exactly one root, found {len(roots)}: {', '.join(roots)}")

    for name in body_names:
        seen = {name}
        node = parent_of.get(name)
        while node is not None and node != WORLD:
            if node in seen:
                raise TopologyError(f"cycle through body {name}")
            seen.add(node)
            node = parent_of.get(node)

    placed = {name for name in body_names if name not in parent_of}
    for joint in joints:
        if joint.parent != WORLD and joint.parent not in placed:
            raise TopologyError(f"joint {joint.name} is listed before the joint moving {joint.parent}")
        placed.add(joint.child)


# ----------------------------------------------------------------------
# file format
# ----------------------------------------------------------------------
_BODY_KEYS = {"mass", "com", "inertia"}
_JOINT_KEYS = {"type", "parent", "child", "axis", "xyz", "rpy", "limits", "vmax", "taumax", "actuated"}
_FRAME_KEYS = {"body", "xyz", "rpy"}


def _floats(value: str, count: int, key: str, path: str, line: int) -> np.ndarray:
    try:
        numbers = np.array([float(part) for part in value.split(",")], dtype=float)
    except ValueError:
        raise ModelParseError(f"{key}: expected numbers, got {value!r}", path, line) from None
    if numbers.size != count:
        raise ModelParseError(f"{key}: expected {count} values, got {numbers.size}", path, line)
    return numbers


def _parse_fields(tokens: list[str], allowed: set[str], path: str, line: int) -> dict[str, str]:
    fields: dict[str, str] = {}
    for token in tokens:
        key, sep, value = token.partition("=")
        if not sep or not value:
            raise ModelParseError(f"expected key=value, got {token!r}", path, line)
        if key not in allowed:
            raise ModelParseError(f"unknown key {key!r}", path, line)
        if key in fields:
            raise ModelParseError(f"duplicate key {key!r}", path, line)
        fields[key] = value
    return fields


def _require(fields: dict, key: str, kind: str, path: str, line: int) -> str:
    if key not in fields:
        raise ModelParseError(f"{kind} is missing {key}=", path, line)
    return fields[key]


def parse_model(text: str, path: str = "<model>") -> RobotModel:
    name = Path(path).stem if path != "<model>" else "robot"
    bodies: list[BodySpec] = []
    joints: list[JointSpec] = []
    frames: list[FrameSpec] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        kind, *rest = content.split()
        if not rest:
            raise ModelParseError(f"{kind} record needs a name", path, lineno)
        record_name, tokens = rest[0], rest[1:]

        if kind == "model":
            if tokens:
                raise ModelParseError("model record takes only a name", path, lineno)
            name = record_name
        elif kind == "body":
            f = _parse_fields(tokens, _BODY_KEYS, path, lineno)
            try:
                mass = float(_require(f, "mass", "body", path, lineno))
            except ValueError:
                raise ModelParseError(f"mass: expected a number, got {f['mass']!r}", path, lineno) from None
            com = _floats(f.get("com", "0,0,0"), 3, "com", path, lineno)
            ixx, iyy, izz, ixy, ixz, iyz = _floats(f.get("inertia", "0,0,0,0,0,0"), 6, "inertia", path, lineno)
            inertia = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
            bodies.append(BodySpec(record_name, mass, com, inertia))
        elif kind == "joint":
            f = _parse_fields(tokens, _JOINT_KEYS, path, lineno)
            jtype = _require(f, "type", "joint", path, lineno)
            if jtype not in ("revolute", "free"):
                raise ModelParseError(f"type: expected revolute or free, got {jtype!r}", path, lineno)
            placement = Placement.from_xyz_rpy(
                _floats(f.get("xyz", "0,0,0"), 3, "xyz", path, lineno),
                _floats(f.get("rpy", "0,0,0"), 3, "rpy", path, lineno),
            )
            common = dict(
                name=record_name,
                type=jtype,
                parent=_require(f, "parent", "joint", path, lineno),
                child=_require(f, "child", "joint", path, lineno),
                parent_frame_transform=placement,
            )
            if jtype == "free":
                joints.append(JointSpec(**common, actuated=False))
                continue
            lower, upper = _floats(_require(f, "limits", "joint", path, lineno), 2, "limits", path, lineno)
            actuated = f.get("actuated", "true").lower()
            if actuated not in ("true", "false"):
                raise ModelParseError(f"actuated: expected true or false, got {actuated!r}", path, lineno)
            joints.append(
                JointSpec(
                    **common,
                    axis=_floats(_require(f, "axis", "joint", path, lineno), 3, "axis", path, lineno),
                    position_limits=(float(lower), float(upper)),
                    velocity_limit=float(_floats(_require(f, "vmax", "joint", path, lineno), 1, "vmax", path, lineno)[0]),
                    effort_limit=float(_floats(f.get("taumax", "inf"), 1, "taumax", path, lineno)[0]),
                    actuated=actuated == "true",
                )
            )
        elif kind == "frame":
            f = _parse_fields(tokens, _FRAME_KEYS, path, lineno)
            frames.append(
                FrameSpec(
                    record_name,
                    _require(f, "body", "frame", path, lineno),
                    Placement.from_xyz_rpy(
                        _floats(f.get("xyz", "0,0,0"), 3, "xyz", path, lineno),
                        _floats(f.get("rpy", "0,0,0"), 3, "rpy", path, lineno),
                    ),
                )
            )
        else:
            raise ModelParseError(f"unknown record type {kind!r}", path, lineno)

    if not bodies:
        raise ModelParseError("model defines no bodies", path)
    return RobotModel(tuple(bodies), tuple(joints), tuple(frames), name)


def load_model(path: str | Path) -> RobotModel:
    """Parse a model file. Raises ModelError subclasses on malformed input."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelParseError(f"cannot read model file: {exc.strerror or exc}", str(path)) from exc
    return parse_model(text, str(path))


def neutral_state(model: RobotModel) -> State:
    """Identity base at the origin, every joint at mid-range, zero velocity."""
    q = np.zeros(model.nq)
    if model.has_free_base:
        q[3] = 1.0
    mid = 0.5 * (model.position_lower + model.position_upper)
    q[model.joint_q_index] = np.where(np.isfinite(mid), mid, 0.0)
    return State(q, np.zeros(model.nv))


def _point_inertia(mass: float, offset: np.ndarray) -> np.ndarray:
    return mass * (float(offset @ offset) * np.eye(3) - np.outer(offset, offset))


def attach_payload(model: RobotModel, frame: str, mass: float) -> RobotModel:
    """Rigidly attach a point mass at ``frame``, merging it into the frame's body."""
    if mass < 0:
        raise ModelInvariantError(frame, "payload", "mass must be >= 0")
    if frame not in model.frame_lookup:
        raise ModelInvariantError(model.name, "frames", f"unknown frame {frame}")
    if mass == 0:
        return model
    body_id, placement = model.frame_lookup[frame]
    body = model.bodies[body_id]
    point = placement.translation
    total = body.mass + mass
    com = (body.mass * body.com_offset + mass * point) / total
    inertia = (
        body.rotational_inertia
        + _point_inertia(body.mass, body.com_offset - com)
        + _point_inertia(mass, point - com)
    )
    bodies = list(model.bodies)
    bodies[body_id] = replace(body, mass=total, com_offset=com, rotational_inertia=inertia)
    return replace(model, bodies=tuple(bodies))


def _vec(values) -> str:
    return ",".join(fmt17(float(v)) for v in np.ravel(values))


def _rpy(rotation: np.ndarray) -> str:
    return _vec(Rotation.from_matrix(rotation).as_euler("xyz"))


def dump_model(model: RobotModel) -> str:
    """Canonical text form of a model; loading it yields an equivalent model."""
    lines = [f"model {model.name}"]
    for body in model.bodies:
        i = body.rotational_inertia
        lines.append(
            f"body {body.name} mass={fmt17(body.mass)} com={_vec(body.com_offset)} "
            f"inertia={_vec([i[0, 0], i[1, 1], i[2, 2], i[0, 1], i[0, 2], i[1, 2]])}"
        )
    for joint in model.joints:
        t = joint.parent_frame_transform
        head = (
            f"joint {joint.name} type={joint.type} parent={joint.parent} child={joint.child} "
            f"xyz={_vec(t.translation)} rpy={_rpy(t.rotation)}"
        )
        if joint.is_free:
            lines.append(head)
            continue
        lines.append(
            f"{head} axis={_vec(joint.axis)} limits={_vec(joint.position_limits)} "
            f"vmax={fmt17(joint.velocity_limit)} taumax={fmt17(joint.effort_limit)} "
            f"actuated={'true' if joint.actuated else 'false'}"
        )
    for frame in model.frames:
        lines.append(
            f"frame {frame.name} body={frame.body} xyz={_vec(frame.placement.translation)} "
            f"rpy={_rpy(frame.placement.rotation)}"
        )
    return "\n".join(lines) + "\n"


def model_hash(model: RobotModel) -> str:
    return hashlib.sha256(dump_model(model).encode("utf-8")).hexdigest()
