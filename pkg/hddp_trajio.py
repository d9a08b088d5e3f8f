"""
Trajectory files and their 1 kHz interpolation.

A trajectory file is UTF-8 CSV with a ``#`` metadata header::

    # hddp-trajectory version=1
    # model_hash=<sha256 of the model with its payloads>
    # knot_dt=<s>
    # knots=<N>
    # nq=<nq> nv=<nv> nu=<nu>
    # frames=<contact frame>,<contact frame>
    # payload=<frame>:<kg>,...
    t,q0..,v0..,u0..,<frame>_active,<frame>_fx,..,<frame>_tz,...

N + 1 state rows; the last row leaves the control and wrench cells empty.
Impulse knots are merged into the row after them: the pre-impact state is
dropped, so times are strictly increasing. Floats carry 17 significant
digits, which makes write -> read -> write byte-stable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from costs.wrench_cone import COP_MIN_NORMAL_FORCE, WrenchConeSpec, cop_from_wrench
from hddp_model import RobotModel, attach_payload, model_hash
from hddp_utils import fmt17
from spatial import matrix_to_quat, quat_normalize, quat_to_matrix, right_jacobian, right_jacobian_inv, so3_exp, so3_log

FORMAT_VERSION = 1
WRENCH_AXES = ("fx", "fy", "fz", "tx", "ty", "tz")


class TrajectoryError(Exception):
    """Base error for trajectory files."""


class TrajectoryParseError(TrajectoryError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = path or "<trajectory>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}")


class HashMismatchError(TrajectoryError):
    def __init__(self, expected: str, found: str, path: str | None = None):
        self.expected = expected
        self.found = found
        super().__init__(
            f"{path or '<trajectory>'}: trajectory was planned for model {expected[:12]}, "
            f"the given model hashes to {found[:12]}"
        )


@dataclass
class TrajectoryFile:
    model_hash: str
    knot_dt: float
    times: np.ndarray  # (N + 1,)
    qs: np.ndarray  # (N + 1, nq)
    vs: np.ndarray  # (N + 1, nv)
    us: np.ndarray  # (N, nu)
    frames: tuple[str, ...] = ()
    active: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=bool))  # (N, nf)
    wrenches: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 6)))  # (N, nf, 6)
    payload: Dict[str, float] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @property
    def knots(self) -> int:
        return len(self.times) - 1

    @property
    def nq(self) -> int:
        return self.qs.shape[1]

    @property
    def nv(self) -> int:
        return self.vs.shape[1]

    @property
    def nu(self) -> int:
        return self.us.shape[1]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def free_base(self) -> bool:
        return self.nq == self.nv + 1

    def wrench(self, frame: str) -> np.ndarray:
        return self.wrenches[:, self.frames.index(frame)]


def planned_model(model: RobotModel, payload: Dict[str, float]) -> RobotModel:
    for frame, mass in sorted(payload.items()):
        model = attach_payload(model, frame, mass)
    return model


def trajectory_from_solution(
    solution, problem, model: RobotModel, payload: Optional[Dict[str, float]] = None
) -> TrajectoryFile:
    """Rows of a solved problem: one per timed knot plus the final state.

    ``model`` is the model the knots integrate (payloads attached) and
    ``payload`` what was attached, so readers can rebuild it.
    """
    nq = model.nq
    frames: list[str] = []
    for knot in problem.running:
        for name in knot.contacts:
            if name not in frames:
                frames.append(name)
    times, xs, us, active, wrenches = [], [], [], [], []
    t = 0.0
    for k, knot in enumerate(problem.running):
        if knot.is_impulse:
            continue
        times.append(t)
        xs.append(solution.xs[k])
        us.append(solution.us[k])
        active.append([name in knot.contacts for name in frames])
        wrenches.append([solution.wrenches[k].get(name, np.zeros(6)) for name in frames])
        t += knot.dt
    times.append(t)
    xs.append(solution.xs[-1])
    xs = np.asarray(xs, dtype=float)
    dts = [knot.dt for knot in problem.running if not knot.is_impulse]
    return TrajectoryFile(
        model_hash=model_hash(model),
        knot_dt=float(dts[0]) if dts else 0.0,
        times=np.asarray(times),
        qs=xs[:, :nq],
        vs=xs[:, nq:],
        us=np.asarray(us, dtype=float).reshape(len(us), model.nu),
        frames=tuple(frames),
        active=np.asarray(active, dtype=bool).reshape(len(us), len(frames)),
        wrenches=np.asarray(wrenches, dtype=float).reshape(len(us), len(frames), 6),
        payload=dict(payload or {}),
    )


def _header(traj: TrajectoryFile) -> list[str]:
    payload = ",".join(f"{frame}:{fmt17(mass)}" for frame, mass in sorted(traj.payload.items()))
    return [
        f"# hddp-trajectory version={traj.version}",
        f"# model_hash={traj.model_hash}",
        f"# knot_dt={fmt17(traj.knot_dt)}",
        f"# knots={traj.knots}",
        f"# nq={traj.nq} nv={traj.nv} nu={traj.nu}",
        f"# frames={','.join(traj.frames)}",
        f"# payload={payload}",
    ]


def _columns(traj: TrajectoryFile) -> list[str]:
    cols = ["t"]
    cols += [f"q{i}" for i in range(traj.nq)]
    cols += [f"v{i}" for i in range(traj.nv)]
    cols += [f"u{i}" for i in range(traj.nu)]
    for frame in traj.frames:
        cols.append(f"{frame}_active")
        cols += [f"{frame}_{axis}" for axis in WRENCH_AXES]
    return cols


def save_trajectory(traj: TrajectoryFile, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        for line in _header(traj):
            handle.write(line + "\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(_columns(traj))
        for k in range(traj.knots + 1):
            row = [fmt17(traj.times[k])]
            row += [fmt17(x) for x in traj.qs[k]]
            row += [fmt17(x) for x in traj.vs[k]]
            if k < traj.knots:
                row += [fmt17(x) for x in traj.us[k]]
                for j in range(len(traj.frames)):
                    row.append("1" if traj.active[k, j] else "0")
                    row += [fmt17(x) for x in traj.wrenches[k, j]]
            else:
                row += [""] * (traj.nu + 7 * len(traj.frames))
            writer.writerow(row)
    return path


def write_trajectory(solution, model: RobotModel, path: str | Path, problem, payload=None) -> TrajectoryFile:
    """Write a solution of ``problem`` to ``path`` and return what was written."""
    traj = trajectory_from_solution(solution, problem, model, payload)
    save_trajectory(traj, path)
    return traj


def _parse_header(lines: list[tuple[int, str]], path: str) -> dict:
    meta: dict[str, str] = {}
    for lineno, line in lines:
        body = line[1:].strip()
        if body.startswith("hddp-trajectory"):
            body = body[len("hddp-trajectory") :].strip()
        for token in body.split():
            key, sep, value = token.partition("=")
            if not sep:
                raise TrajectoryParseError(f"malformed header token {token!r}", path, lineno)
            meta[key] = value
    for key in ("version", "model_hash", "knot_dt", "knots", "nq", "nv", "nu"):
        if key not in meta:
            raise TrajectoryParseError(f"header is missing {key}=", path)
    return meta


def read_trajectory(path: str | Path, model: Optional[RobotModel] = None) -> TrajectoryFile:
    """Load a trajectory file.

    With ``model`` the header hash must match the model with the file's
    payloads attached (HashMismatchError otherwise).
    """
    path = Path(path)
    name = str(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TrajectoryParseError(f"cannot read trajectory file: {exc.strerror or exc}", name) from exc
    numbered = list(enumerate(text.splitlines(), start=1))
    header = [(n, line) for n, line in numbered if line.startswith("#")]
    body = [(n, line) for n, line in numbered if line.strip() and not line.startswith("#")]
    meta = _parse_header(header, name)

    try:
        version = int(meta["version"])
        knots, nq, nv, nu = (int(meta[k]) for k in ("knots", "nq", "nv", "nu"))
        knot_dt = float(meta["knot_dt"])
    except ValueError:
        raise TrajectoryParseError("non-numeric header value", name) from None
    if version != FORMAT_VERSION:
        raise TrajectoryParseError(f"unsupported format version {version}", name)
    frames = tuple(f for f in meta.get("frames", "").split(",") if f)
    payload = {}
    for item in filter(None, meta.get("payload", "").split(",")):
        frame, _, mass = item.partition(":")
        try:
            payload[frame] = float(mass)
        except ValueError:
            raise TrajectoryParseError(f"bad payload entry {item!r}", name) from None

    if not body:
        raise TrajectoryParseError("no column header", name)
    columns_line, rows = body[0], body[1:]
    width = 1 + nq + nv + nu + 7 * len(frames)
    if len(next(csv.reader([columns_line[1]]))) != width:
        raise TrajectoryParseError(f"expected {width} columns", name, columns_line[0])
    if len(rows) != knots + 1:
        raise TrajectoryParseError(f"expected {knots + 1} state rows, found {len(rows)}", name)

    times = np.zeros(knots + 1)
    qs, vs = np.zeros((knots + 1, nq)), np.zeros((knots + 1, nv))
    us = np.zeros((knots, nu))
    active = np.zeros((knots, len(frames)), dtype=bool)
    wrenches = np.zeros((knots, len(frames), 6))
    for k, (lineno, line) in enumerate(rows):
        cells = next(csv.reader([line]))
        if len(cells) != width:
            raise TrajectoryParseError(f"expected {width} cells, found {len(cells)}", name, lineno)
        last = k == knots
        try:
            times[k] = float(cells[0])
            qs[k] = [float(c) for c in cells[1 : 1 + nq]]
            vs[k] = [float(c) for c in cells[1 + nq : 1 + nq + nv]]
            if last:
                if any(cells[1 + nq + nv :]):
                    raise TrajectoryParseError("final row must leave controls and wrenches empty", name, lineno)
                continue
            offset = 1 + nq + nv
            us[k] = [float(c) for c in cells[offset : offset + nu]]
            offset += nu
            for j in range(len(frames)):
                flag = cells[offset]
                if flag not in ("0", "1"):
                    raise TrajectoryParseError(f"active flag must be 0 or 1, got {flag!r}", name, lineno)
                active[k, j] = flag == "1"
                wrenches[k, j] = [float(c) for c in cells[offset + 1 : offset + 7]]
                offset += 7
        except ValueError:
            raise TrajectoryParseError("non-numeric cell", name, lineno) from None
    if np.any(np.diff(times) <= 0):
        raise TrajectoryParseError("times must be strictly increasing", name)

    traj = TrajectoryFile(meta["model_hash"], knot_dt, times, qs, vs, us, frames, active, wrenches, payload, version)
    if model is not None:
        found = model_hash(planned_model(model, payload))
        if found != traj.model_hash:
            raise HashMismatchError(traj.model_hash, found, name)
    return traj


# ----------------------------------------------------------------------
# interpolation
# ----------------------------------------------------------------------
@dataclass
class InterpolatedTrajectory:
    """Dense samples at ``rate`` Hz.

    Joints and base position are cubic Hermite splines through the knot
    positions with the knot velocities as slopes; the base orientation is a
    Hermite spline of its log relative to the first knot. Controls are
    linear between knots; contact flags and wrenches are held per knot.
    """

    rate: float
    times: np.ndarray
    qs: np.ndarray
    vs: np.ndarray
    us: np.ndarray
    active: np.ndarray
    wrenches: np.ndarray
    frames: tuple[str, ...]
    knot_indices: np.ndarray
    source: TrajectoryFile
    _splines: dict = field(default_factory=dict, repr=False)

    @property
    def samples(self) -> int:
        return len(self.times)

    def at(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Interpolated (q, v) at arbitrary times inside the horizon."""
        return _evaluate(self.source, self._splines, np.atleast_1d(np.asarray(t, dtype=float)))


def _splines(traj: TrajectoryFile) -> dict:
    times = traj.times
    out = {}
    if traj.free_base:
        out["joints"] = CubicHermiteSpline(times, traj.qs[:, 7:], traj.vs[:, 6:], axis=0)
        rotations = quat_to_matrix(traj.qs[:, 3:7])
        dpos = np.einsum("kij,kj->ki", rotations, traj.vs[:, :3])
        out["position"] = CubicHermiteSpline(times, traj.qs[:, :3], dpos, axis=0)
        # orientation: one segment per interval, log of the rotation relative to its first knot
        omegas = traj.vs[:, 3:6]
        rel = so3_log(np.einsum("kji,kjl->kil", rotations[:-1], rotations[1:])).reshape(-1, 3)
        ends = np.einsum("kij,kj->ki", right_jacobian_inv(rel), omegas[1:])
        out["orientation"] = [
            CubicHermiteSpline(times[k : k + 2], np.stack([np.zeros(3), rel[k]]), np.stack([omegas[k], ends[k]]), axis=0)
            for k in range(len(rel))
        ]
        out["rotations"] = rotations
    else:
        out["joints"] = CubicHermiteSpline(times, traj.qs, traj.vs, axis=0)
    return out


def _evaluate(traj: TrajectoryFile, splines: dict, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    joints = splines["joints"]
    if not traj.free_base:
        return joints(t), joints(t, 1)
    n = t.size
    qs, vs = np.zeros((n, traj.nq)), np.zeros((n, traj.nv))
    qs[:, 7:], vs[:, 6:] = joints(t), joints(t, 1)
    segment = np.clip(np.searchsorted(traj.times, t, side="right") - 1, 0, traj.knots - 1)
    phis, dphis = np.zeros((n, 3)), np.zeros((n, 3))
    for k in np.unique(segment):
        mask = segment == k
        phis[mask] = splines["orientation"][k](t[mask])
        dphis[mask] = splines["orientation"][k](t[mask], 1)
    rotations = splines["rotations"][segment] @ so3_exp(phis)
    qs[:, :3] = splines["position"](t)
    qs[:, 3:7] = quat_normalize(matrix_to_quat(rotations))
    vs[:, :3] = np.einsum("kji,kj->ki", rotations, splines["position"](t, 1))
    vs[:, 3:6] = np.einsum("kij,kj->ki", right_jacobian(phis), dphis)
    return qs, vs


def interpolate(traj: TrajectoryFile, rate: float = 1000.0) -> InterpolatedTrajectory:
    """Resample at ``rate`` Hz: round(duration * rate) + 1 samples from the first knot time."""
    if traj.knots < 1:
        raise TrajectoryError("interpolation needs at least two knots")
    if not rate > 0:
        raise TrajectoryError(f"sample rate must be > 0, got {rate}")
    count = int(round(traj.duration * rate)) + 1
    times = traj.times[0] + np.arange(count) / rate
    times[-1] = min(times[-1], traj.times[-1])
    splines = _splines(traj)
    qs, vs = _evaluate(traj, splines, times)

    control_times = traj.times[:-1]
    us = np.column_stack([np.interp(times, control_times, traj.us[:, i]) for i in range(traj.nu)]) if traj.nu else np.zeros((count, 0))
    knot = np.clip(np.searchsorted(traj.times, times, side="right") - 1, 0, traj.knots - 1)
    knot_indices = np.array([int(np.argmin(np.abs(times - t))) for t in traj.times])
    return InterpolatedTrajectory(
        rate=float(rate),
        times=times,
        qs=qs,
        vs=vs,
        us=us,
        active=traj.active[knot],
        wrenches=traj.wrenches[knot],
        frames=traj.frames,
        knot_indices=knot_indices,
        source=traj,
        _splines=splines,
    )


def write_interpolated(interp: InterpolatedTrajectory, path: str | Path) -> Path:
    """Dense CSV (t, q, v, u, contact flags) for the ``interp`` command."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(f"# hddp-interpolated rate={fmt17(interp.rate)} samples={interp.samples}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            ["t"]
            + [f"q{i}" for i in range(interp.qs.shape[1])]
            + [f"v{i}" for i in range(interp.vs.shape[1])]
            + [f"u{i}" for i in range(interp.us.shape[1])]
            + [f"{frame}_active" for frame in interp.frames]
        )
        for k in range(interp.samples):
            writer.writerow(
                [fmt17(interp.times[k])]
                + [fmt17(x) for x in interp.qs[k]]
                + [fmt17(x) for x in interp.vs[k]]
                + [fmt17(x) for x in interp.us[k]]
                + ["1" if a else "0" for a in interp.active[k]]
            )
    return path


# ----------------------------------------------------------------------
# centre-of-pressure report
# ----------------------------------------------------------------------
@dataclass
class CopSample:
    time: float
    frame: str
    cop: np.ndarray
    bound: np.ndarray

    @property
    def excursion(self) -> float:
        """Largest |cop| / bound over both axes; <= 1 inside the region."""
        return float(np.max(np.abs(self.cop) / self.bound))

    @property
    def inside(self) -> bool:
        return self.excursion <= 1.0


def cop_report(traj: TrajectoryFile, cone: WrenchConeSpec) -> list[CopSample]:
    """CoP of every loaded contact per knot. Unloaded feet (fz <= 1 N) are skipped."""
    samples = []
    for k in range(len(traj.us)):
        for j, frame in enumerate(traj.frames):
            wrench = traj.wrenches[k, j]
            if not traj.active[k, j] or wrench[2] <= COP_MIN_NORMAL_FORCE:
                continue
            samples.append(CopSample(float(traj.times[k]), frame, cop_from_wrench(wrench), cone.cop_bound))
    return samples


def write_cop_report(samples: list[CopSample], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["t", "frame", "cop_x", "cop_y", "bound_x", "bound_y", "excursion"])
        for s in samples:
            writer.writerow(
                [fmt17(s.time), s.frame, fmt17(s.cop[0]), fmt17(s.cop[1]), fmt17(s.bound[0]), fmt17(s.bound[1]), fmt17(s.excursion)]
            )
    return path
