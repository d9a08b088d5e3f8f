"""
Rigid-body algorithms on the kinematic tree.

Everything is computed in world coordinates with origin-referenced spatial
vectors ordered (linear, angular). The floating base velocity is expressed in
the base frame, so the configuration retraction is

    p' = p + R dp,    R' = R exp(dtheta)

and ``state_difference`` is its exact inverse.

The private recursions carry a leading batch axis so derivative code can
evaluate many perturbed states in one sweep; the public functions take a
single state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from spatial import (
    Placement,
    axis_angle_matrix,
    force_cross,
    motion_cross,
    quat_conjugate,
    quat_exp,
    quat_log,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
    right_jacobian,
    right_jacobian_inv,
    shift_to_point,
    skew,
    so3_exp,
    so3_log,
    spatial_inertia,
)

if TYPE_CHECKING:
    from hddp_model import RobotModel

GRAVITY = 9.81
FD_STEP_Q = 1e-6
# the KKT residual is quadratic in v, so any central step is exact there
FD_STEP_V = 1e-3
# smallest over largest Cholesky pivot before a matrix counts as singular
PIVOT_RATIO = 1e-12


class DynamicsError(Exception):
    """Raised for inputs the rigid-body algorithms cannot evaluate."""


class UnknownFrameError(DynamicsError):
    pass


class ContactSingularityError(DynamicsError):
    """The stacked contact Jacobian lost row rank (over-constrained contact geometry)."""

    def __init__(self, rank: int, expected: int, frames: Iterable[str] = ()):
        self.rank = rank
        self.expected = expected
        self.frames = tuple(frames)
        super().__init__(
            f"contact Jacobian has rank {rank} < {expected} for frames {', '.join(self.frames)}"
        )


@dataclass(eq=False)
class State:
    """Configuration q (base position, base quaternion w-first, joints) and tangent v."""

    q: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        self.q = np.array(self.q, dtype=float).reshape(-1)
        self.v = np.array(self.v, dtype=float).reshape(-1)
        if self.q.size == self.v.size + 1:
            self.q[3:7] = quat_normalize(self.q[3:7])

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.q, self.v])

    @classmethod
    def from_vector(cls, x: np.ndarray, nq: int) -> "State":
        return cls(x[:nq], x[nq:])

    def copy(self) -> "State":
        return State(self.q.copy(), self.v.copy())

    def check(self, model: "RobotModel") -> None:
        if self.q.size != model.nq or self.v.size != model.nv:
            raise DynamicsError(
                f"state has dim(q)={self.q.size}, dim(v)={self.v.size}; "
                f"model expects {model.nq}, {model.nv}"
            )


@dataclass(frozen=True, eq=False)
class ContactSet:
    """Frames in rigid 6D contact, with optional reference placements."""

    active: tuple[str, ...] = ()
    references: dict[str, Placement] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "active", tuple(self.active))
        if len(set(self.active)) != len(self.active):
            raise DynamicsError(f"duplicate contact frames in {self.active}")

    def __len__(self) -> int:
        return len(self.active)

    def __iter__(self):
        return iter(self.active)

    def __contains__(self, name: str) -> bool:
        return name in self.active

    @property
    def rows(self) -> int:
        return 6 * len(self.active)

    def validate(self, model: "RobotModel") -> None:
        for name in self.active:
            if not model.has_frame(name):
                raise UnknownFrameError(f"unknown contact frame {name}")


@dataclass
class ContactDynamicsResult:
    vdot: np.ndarray
    wrenches: dict[str, np.ndarray]

    @property
    def lam(self) -> np.ndarray:
        if not self.wrenches:
            return np.zeros(0)
        return np.concatenate(list(self.wrenches.values()))


@dataclass
class ContactDynamicsDerivatives:
    result: ContactDynamicsResult
    dvdot_dx: np.ndarray
    dvdot_du: np.ndarray
    dlam_dx: np.ndarray
    dlam_du: np.ndarray


@dataclass
class ImpulseResult:
    v_plus: np.ndarray
    impulses: dict[str, np.ndarray]

    @property
    def lam(self) -> np.ndarray:
        if not self.impulses:
            return np.zeros(0)
        return np.concatenate(list(self.impulses.values()))


@dataclass
class ImpulseDerivatives:
    result: ImpulseResult
    dvplus_dx: np.ndarray
    dlam_dx: np.ndarray


# ----------------------------------------------------------------------
# batched recursions
# ----------------------------------------------------------------------
@dataclass
class _Kinematics:
    rot: np.ndarray  # (B, nb, 3, 3)
    pos: np.ndarray  # (B, nb, 3)
    cols: list  # per joint (B, 6, nv_j) motion subspace in world coordinates


def _kinematics(model: "RobotModel", Q: np.ndarray) -> _Kinematics:
    batch = Q.shape[0]
    nb = len(model.bodies)
    rot = np.broadcast_to(np.eye(3), (batch, nb, 3, 3)).copy()
    pos = np.zeros((batch, nb, 3))
    cols = [None] * len(model.joints)
    for j, joint in enumerate(model.joints):
        pb, cb, iq = model.parent_body[j], model.child_body[j], model.idx_q[j]
        t = joint.parent_frame_transform
        if joint.is_free:
            r = quat_to_matrix(Q[:, iq + 3 : iq + 7])
            p = Q[:, iq : iq + 3]
            rot[:, cb], pos[:, cb] = r, p
            s = np.zeros((batch, 6, 6))
            s[:, :3, :3] = r
            s[:, :3, 3:] = skew(p) @ r
            s[:, 3:, 3:] = r
            cols[j] = s
            continue
        if pb < 0:
            r_joint = np.broadcast_to(t.rotation, (batch, 3, 3))
            p_joint = np.broadcast_to(t.translation, (batch, 3))
        else:
            r_joint = rot[:, pb] @ t.rotation
            p_joint = pos[:, pb] + rot[:, pb] @ t.translation
        rot[:, cb] = r_joint @ axis_angle_matrix(joint.axis, Q[:, iq])
        pos[:, cb] = p_joint
        axis = rot[:, cb] @ joint.axis
        cols[j] = np.concatenate([np.cross(pos[:, cb], axis), axis], axis=-1)[..., None]
    return _Kinematics(rot, pos, cols)


def _joint_twists(model: "RobotModel", kin: _Kinematics, V: np.ndarray) -> list:
    out = []
    for j, joint in enumerate(model.joints):
        iv = model.idx_v[j]
        out.append(np.einsum("bij,bj->bi", kin.cols[j], V[:, iv : iv + joint.nv]))
    return out


def _body_twists(model: "RobotModel", kin: _Kinematics, joint_twists: list) -> np.ndarray:
    batch = kin.pos.shape[0]
    twists = np.zeros((batch, len(model.bodies), 6))
    for j in range(len(model.joints)):
        pb, cb = model.parent_body[j], model.child_body[j]
        twists[:, cb] = joint_twists[j] if pb < 0 else twists[:, pb] + joint_twists[j]
    return twists


def _body_accelerations(
    model: "RobotModel",
    kin: _Kinematics,
    twists: np.ndarray,
    joint_twists: list,
    A: np.ndarray | None,
    gravity: bool,
) -> np.ndarray:
    batch = kin.pos.shape[0]
    acc = np.zeros((batch, len(model.bodies), 6))
    root = np.zeros(6)
    if gravity:
        root[2] = GRAVITY
    acc[:] = root
    for j, joint in enumerate(model.joints):
        pb, cb, iv = model.parent_body[j], model.child_body[j], model.idx_v[j]
        a = root if pb < 0 else acc[:, pb]
        a = a + motion_cross(twists[:, cb], joint_twists[j])
        if A is not None:
            a = a + np.einsum("bij,bj->bi", kin.cols[j], A[:, iv : iv + joint.nv])
        acc[:, cb] = a
    return acc


def _world_inertias(model: "RobotModel", kin: _Kinematics) -> np.ndarray:
    com = kin.pos + np.einsum("bnij,nj->bni", kin.rot, model.body_coms)
    rot_inertia = kin.rot @ model.body_inertias @ np.swapaxes(kin.rot, -1, -2)
    mass = np.broadcast_to(model.body_masses, com.shape[:-1])
    return spatial_inertia(mass, com, rot_inertia)


def _rnea(
    model: "RobotModel",
    kin: _Kinematics,
    V: np.ndarray | None,
    A: np.ndarray | None,
    gravity: bool,
    inertias: np.ndarray | None = None,
) -> np.ndarray:
    batch = kin.pos.shape[0]
    if V is None:
        V = np.zeros((batch, model.nv))
    inertias = _world_inertias(model, kin) if inertias is None else inertias
    jt = _joint_twists(model, kin, V)
    twists = _body_twists(model, kin, jt)
    acc = _body_accelerations(model, kin, twists, jt, A, gravity)
    forces = np.einsum("bnij,bnj->bni", inertias, acc) + force_cross(
        twists, np.einsum("bnij,bnj->bni", inertias, twists)
    )
    tau = np.zeros((batch, model.nv))
    for j in reversed(range(len(model.joints))):
        pb, cb, iv = model.parent_body[j], model.child_body[j], model.idx_v[j]
        tau[:, iv : iv + model.joints[j].nv] = np.einsum("bij,bi->bj", kin.cols[j], forces[:, cb])
        if pb >= 0:
            forces[:, pb] += forces[:, cb]
    return tau


def _crba(model: "RobotModel", kin: _Kinematics, inertias: np.ndarray | None = None) -> np.ndarray:
    """Composite-rigid-body mass matrix."""
    batch = kin.pos.shape[0]
    composite = (_world_inertias(model, kin) if inertias is None else inertias).copy()
    for j in reversed(range(len(model.joints))):
        pb = model.parent_body[j]
        if pb >= 0:
            composite[:, pb] += composite[:, model.child_body[j]]
    mass = np.zeros((batch, model.nv, model.nv))
    for j, joint in enumerate(model.joints):
        iv, n = model.idx_v[j], joint.nv
        force = composite[:, model.child_body[j]] @ kin.cols[j]
        mass[:, iv : iv + n, iv : iv + n] = np.swapaxes(kin.cols[j], -1, -2) @ force
        pb = model.parent_body[j]
        k = model.body_joint[pb] if pb >= 0 else -1
        while k >= 0:
            ik, nk = model.idx_v[k], model.joints[k].nv
            block = np.swapaxes(kin.cols[k], -1, -2) @ force
            mass[:, ik : ik + nk, iv : iv + n] = block
            mass[:, iv : iv + n, ik : ik + nk] = np.swapaxes(block, -1, -2)
            parent = model.parent_body[k]
            k = model.body_joint[parent] if parent >= 0 else -1
    return mass


def _resolve_frame(model: "RobotModel", frame: str) -> tuple[int, Placement]:
    try:
        return model.frame_lookup[frame]
    except KeyError:
        raise UnknownFrameError(f"unknown frame {frame}") from None


def _frame_pose(model, kin, frame):
    body, local = _resolve_frame(model, frame)
    rot = kin.rot[:, body] @ local.rotation
    pos = kin.pos[:, body] + kin.rot[:, body] @ local.translation
    return body, rot, pos


def _body_jacobian(model: "RobotModel", kin: _Kinematics, body: int) -> np.ndarray:
    """Origin-referenced world Jacobian of a body (B, 6, nv)."""
    batch = kin.pos.shape[0]
    jac = np.zeros((batch, 6, model.nv))
    chain = model.support[body]
    if chain:
        jac[:, :, model.support_dofs[body]] = np.concatenate([kin.cols[j] for j in chain], axis=-1)
    return jac


def _frame_jacobian_lwa(model, kin, frame):
    body, rot, pos = _frame_pose(model, kin, frame)
    return shift_to_point(pos) @ _body_jacobian(model, kin, body), rot, pos


def _rotate_local(rot: np.ndarray, vec6: np.ndarray) -> np.ndarray:
    """World-aligned (linear, angular) -> frame-local, for vectors (B,6) or matrices (B,6,n)."""
    rt = np.swapaxes(rot, -1, -2)
    if vec6.ndim == 2:
        return np.concatenate(
            [np.einsum("bij,bj->bi", rt, vec6[:, :3]), np.einsum("bij,bj->bi", rt, vec6[:, 3:])], axis=-1
        )
    return np.concatenate([rt @ vec6[:, :3], rt @ vec6[:, 3:]], axis=1)


def _contact_terms(model, kin, contacts: ContactSet, V, drift_acc, alpha=0.0, beta=0.0):
    """Stacked local contact Jacobian (B, 6k, nv) and stabilized drift (B, 6k)."""
    jacs, drifts = [], []
    for name in contacts.active:
        body, rot, pos = _frame_pose(model, kin, name)
        jac_lwa = shift_to_point(pos) @ _body_jacobian(model, kin, body)
        jac = _rotate_local(rot, jac_lwa)
        acc_point = np.einsum("bij,bj->bi", shift_to_point(pos), drift_acc[:, body])
        gamma = _rotate_local(rot, acc_point)
        if alpha:
            gamma = gamma + 2.0 * alpha * np.einsum("bij,bj->bi", jac, V)
        if beta and name in contacts.references:
            ref = contacts.references[name]
            err_lin = np.einsum("ij,bj->bi", ref.rotation.T, pos - ref.translation)
            err_ang = so3_log(np.einsum("ij,bjk->bik", ref.rotation.T, rot)).reshape(-1, 3)
            gamma = gamma + beta * np.concatenate([err_lin, err_ang], axis=-1)
        jacs.append(jac)
        drifts.append(gamma)
    return np.concatenate(jacs, axis=1), np.concatenate(drifts, axis=1)


def _drift_accelerations(model, kin, V):
    jt = _joint_twists(model, kin, V)
    twists = _body_twists(model, kin, jt)
    return _body_accelerations(model, kin, twists, jt, None, gravity=False)


def _batch(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(1, -1)


# ----------------------------------------------------------------------
# public single-state API
# ----------------------------------------------------------------------
def forward_kinematics(model: "RobotModel", q: np.ndarray) -> dict[str, Placement]:
    """World placements of every body and named frame."""
    kin = _kinematics(model, _batch(q))
    out = {}
    for name, (body, local) in model.frame_lookup.items():
        body_placement = Placement(kin.rot[0, body].copy(), kin.pos[0, body].copy())
        out[name] = body_placement.compose(local)
    return out


def frame_placement(model: "RobotModel", q: np.ndarray, frame: str) -> Placement:
    kin = _kinematics(model, _batch(q))
    _, rot, pos = _frame_pose(model, kin, frame)
    return Placement(rot[0], pos[0])


def frame_jacobian(model: "RobotModel", q: np.ndarray, frame: str) -> np.ndarray:
    """Local-world-aligned Jacobian: ``J @ v`` is the frame's (linear, angular) velocity."""
    kin = _kinematics(model, _batch(q))
    jac, _, _ = _frame_jacobian_lwa(model, kin, frame)
    return jac[0]


def frame_velocity(model: "RobotModel", state: State, frame: str) -> np.ndarray:
    return frame_jacobian(model, state.q, frame) @ state.v


def mass_matrix(model: "RobotModel", q: np.ndarray) -> np.ndarray:
    return _crba(model, _kinematics(model, _batch(q)))[0]


def inverse_dynamics(model: "RobotModel", q: np.ndarray, v: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Recursive Newton-Euler: generalized forces for acceleration ``a`` under gravity."""
    kin = _kinematics(model, _batch(q))
    return _rnea(model, kin, _batch(v), _batch(a), gravity=True)[0]


def bias_forces(model: "RobotModel", q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """h(q, v): Coriolis, centrifugal and gravity terms."""
    kin = _kinematics(model, _batch(q))
    return _rnea(model, kin, _batch(v), None, gravity=True)[0]


def kinetic_energy(model: "RobotModel", state: State) -> float:
    return 0.5 * float(state.v @ mass_matrix(model, state.q) @ state.v)


def potential_energy(model: "RobotModel", q: np.ndarray) -> float:
    return model.total_mass * GRAVITY * float(center_of_mass(model, q)[2])


def center_of_mass(model: "RobotModel", q: np.ndarray) -> np.ndarray:
    kin = _kinematics(model, _batch(q))
    com = kin.pos[0] + np.einsum("nij,nj->ni", kin.rot[0], model.body_coms)
    return model.body_masses @ com / model.total_mass


def com_jacobian(model: "RobotModel", q: np.ndarray) -> np.ndarray:
    """3 x nv Jacobian of the centre of mass."""
    kin = _kinematics(model, _batch(q))
    jac = np.zeros((3, model.nv))
    for body, mass in enumerate(model.body_masses):
        if mass == 0.0:
            continue
        com = kin.pos[0, body] + kin.rot[0, body] @ model.body_coms[body]
        origin = _body_jacobian(model, kin, body)[0]
        jac += mass * (origin[:3] - skew(com) @ origin[3:])
    return jac / model.total_mass


def contact_jacobian(model: "RobotModel", q: np.ndarray, contacts: ContactSet) -> np.ndarray:
    """Stacked frame-local 6D contact Jacobian (6k x nv)."""
    if not contacts.active:
        return np.zeros((0, model.nv))
    contacts.validate(model)
    kin = _kinematics(model, _batch(q))
    zero = np.zeros((1, len(model.bodies), 6))
    jac, _ = _contact_terms(model, kin, contacts, np.zeros((1, model.nv)), zero)
    return jac[0]


def contact_drift(model: "RobotModel", state: State, contacts: ContactSet) -> np.ndarray:
    """Jdot v of the stacked contact Jacobian."""
    if not contacts.active:
        return np.zeros(0)
    contacts.validate(model)
    kin = _kinematics(model, _batch(state.q))
    V = _batch(state.v)
    _, gamma = _contact_terms(model, kin, contacts, V, _drift_accelerations(model, kin, V))
    return gamma[0]


def _factor(matrix: np.ndarray):
    factor = cho_factor(matrix, lower=False, check_finite=False)
    diag = np.abs(np.diag(factor[0]))
    if diag.min() ** 2 <= PIVOT_RATIO * diag.max() ** 2:
        raise LinAlgError("ill-conditioned factor")
    return factor


@dataclass
class _KKT:
    mass: tuple
    jac: np.ndarray
    m_inv_jt: np.ndarray
    schur: tuple | None

    def solve(self, top: np.ndarray, bottom: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Solve [[M, -J^T], [J, 0]] [a; b] = [top; bottom]."""
        if self.schur is None:
            return cho_solve(self.mass, top, check_finite=False), np.zeros((0,) + top.shape[1:])
        b = cho_solve(self.schur, bottom - self.jac @ cho_solve(self.mass, top, check_finite=False), check_finite=False)
        a = cho_solve(self.mass, top + self.jac.T @ b, check_finite=False)
        return a, b


def _kkt(model, mass_matrix_q: np.ndarray, jac: np.ndarray, contacts: ContactSet) -> _KKT:
    try:
        mass = _factor(mass_matrix_q)
    except LinAlgError:
        raise DynamicsError("mass matrix is not positive definite") from None
    if jac.shape[0] == 0:
        return _KKT(mass, jac, np.zeros((model.nv, 0)), None)
    m_inv_jt = cho_solve(mass, jac.T, check_finite=False)
    try:
        schur = _factor(jac @ m_inv_jt)
    except LinAlgError:
        rank = int(np.linalg.matrix_rank(jac))
        raise ContactSingularityError(rank, jac.shape[0], contacts.active) from None
    return _KKT(mass, jac, m_inv_jt, schur)


def _split_wrenches(contacts: ContactSet, lam: np.ndarray) -> dict[str, np.ndarray]:
    return {name: lam[6 * i : 6 * i + 6].copy() for i, name in enumerate(contacts.active)}


def _evaluate(model, state: State, contacts: ContactSet, alpha: float, beta: float):
    state.check(model)
    contacts.validate(model)
    Q, V = _batch(state.q), _batch(state.v)
    kin = _kinematics(model, Q)
    inertias = _world_inertias(model, kin)
    mass = _crba(model, kin, inertias)[0]
    bias = _rnea(model, kin, V, None, gravity=True, inertias=inertias)[0]
    if contacts.active:
        jac, gamma = _contact_terms(model, kin, contacts, V, _drift_accelerations(model, kin, V), alpha, beta)
        jac, gamma = jac[0], gamma[0]
    else:
        jac, gamma = np.zeros((0, model.nv)), np.zeros(0)
    return mass, bias, jac, gamma


def forward_dynamics(model: "RobotModel", state: State, tau: np.ndarray) -> np.ndarray:
    """Unconstrained M vdot = S tau - h."""
    return contact_forward_dynamics(model, state, ContactSet(), tau).vdot


def _contact_solve(model, state, contacts, tau, alpha, beta):
    tau = np.asarray(tau, dtype=float).reshape(-1)
    if tau.size != model.nu:
        raise DynamicsError(f"tau has {tau.size} entries, model has nu={model.nu}")
    mass, bias, jac, gamma = _evaluate(model, state, contacts, alpha, beta)
    kkt = _kkt(model, mass, jac, contacts)
    vdot, lam = kkt.solve(model.actuation_matrix @ tau - bias, -gamma)
    return kkt, vdot, lam


def contact_forward_dynamics(
    model: "RobotModel",
    state: State,
    contacts: ContactSet,
    tau: np.ndarray,
    baumgarte_alpha: float = 0.0,
    baumgarte_beta: float = 0.0,
) -> ContactDynamicsResult:
    """Solve [[M, J^T], [J, 0]] [vdot; -lam] = [S tau - h; -Jdot v] for vdot and contact wrenches."""
    _, vdot, lam = _contact_solve(model, state, contacts, tau, baumgarte_alpha, baumgarte_beta)
    return ContactDynamicsResult(vdot, _split_wrenches(contacts, lam))


def _perturbed_batch(model, state: State):
    """Central perturbations of (q, v) along every tangent direction."""
    nv = model.nv
    eye = np.eye(nv)
    q_plus = integrate_configuration(model, np.broadcast_to(state.q, (nv, model.nq)), FD_STEP_Q * eye)
    q_minus = integrate_configuration(model, np.broadcast_to(state.q, (nv, model.nq)), -FD_STEP_Q * eye)
    Q = np.concatenate([q_plus, q_minus, np.broadcast_to(state.q, (2 * nv, model.nq))])
    V = np.concatenate(
        [np.broadcast_to(state.v, (2 * nv, nv)), state.v + FD_STEP_V * eye, state.v - FD_STEP_V * eye]
    )
    return Q, V


def _central_columns(values: np.ndarray, nv: int) -> np.ndarray:
    """(4nv, m) stacked +q,-q,+v,-v evaluations -> (m, 2nv) derivative."""
    dq = (values[:nv] - values[nv : 2 * nv]) / (2 * FD_STEP_Q)
    dv = (values[2 * nv : 3 * nv] - values[3 * nv :]) / (2 * FD_STEP_V)
    return np.concatenate([dq, dv]).T


def contact_dynamics_derivatives(
    model: "RobotModel",
    state: State,
    contacts: ContactSet,
    tau: np.ndarray,
    baumgarte_alpha: float = 0.0,
    baumgarte_beta: float = 0.0,
) -> ContactDynamicsDerivatives:
    """Contact dynamics and its sensitivities through the KKT implicit function.

    The KKT residual r(x, z) = [ID(q, v, vdot) - J^T lam - S tau; J vdot + gamma]
    vanishes at the solution z = (vdot, lam), so dz/dx = -A^{-1} dr/dx and
    dz/du = A^{-1} [S; 0]. dr/dx is a batched central difference of the
    recursive Newton-Euler pass at fixed z.
    """
    kkt, vdot, lam = _contact_solve(model, state, contacts, tau, baumgarte_alpha, baumgarte_beta)
    result = ContactDynamicsResult(vdot, _split_wrenches(contacts, lam))
    nv, rows = model.nv, contacts.rows

    Q, V = _perturbed_batch(model, state)
    kin = _kinematics(model, Q)
    residual = _rnea(model, kin, V, np.broadcast_to(vdot, V.shape), gravity=True)
    if rows:
        jac, gamma = _contact_terms(
            model, kin, contacts, V, _drift_accelerations(model, kin, V), baumgarte_alpha, baumgarte_beta
        )
        residual = residual - np.einsum("bij,i->bj", jac, lam)
        residual = np.concatenate([residual, np.einsum("bij,j->bi", jac, vdot) + gamma], axis=1)
    dr_dx = _central_columns(residual, nv)

    dvdot_dx, dlam_dx = kkt.solve(-dr_dx[:nv], -dr_dx[nv:])
    dvdot_du, dlam_du = kkt.solve(model.actuation_matrix, np.zeros((rows, model.nu)))
    return ContactDynamicsDerivatives(result, dvdot_dx, dvdot_du, dlam_dx.reshape(rows, 2 * nv), dlam_du.reshape(rows, model.nu))


def impulse_dynamics(model: "RobotModel", state: State, contacts: ContactSet) -> ImpulseResult:
    """Zero-restitution impact: M (v+ - v-) = J^T Lambda, J v+ = 0."""
    kkt, v_plus, lam = _impulse_solve(model, state, contacts)
    return ImpulseResult(v_plus, _split_wrenches(contacts, lam))


def _impulse_solve(model, state, contacts):
    state.check(model)
    contacts.validate(model)
    kin = _kinematics(model, _batch(state.q))
    mass = _crba(model, kin)[0]
    if contacts.active:
        zero = np.zeros((1, len(model.bodies), 6))
        jac = _contact_terms(model, kin, contacts, _batch(state.v), zero)[0][0]
    else:
        jac = np.zeros((0, model.nv))
    kkt = _kkt(model, mass, jac, contacts)
    v_plus, lam = kkt.solve(mass @ state.v, np.zeros(jac.shape[0]))
    return kkt, v_plus, lam


def impulse_dynamics_derivatives(model: "RobotModel", state: State, contacts: ContactSet) -> ImpulseDerivatives:
    kkt, v_plus, lam = _impulse_solve(model, state, contacts)
    nv, rows = model.nv, contacts.rows
    eye = np.eye(nv)
    Q = np.concatenate(
        [
            integrate_configuration(model, np.broadcast_to(state.q, (nv, model.nq)), FD_STEP_Q * eye),
            integrate_configuration(model, np.broadcast_to(state.q, (nv, model.nq)), -FD_STEP_Q * eye),
        ]
    )
    kin = _kinematics(model, Q)
    delta = np.broadcast_to(v_plus - state.v, (2 * nv, nv))
    residual = _rnea(model, kin, None, delta, gravity=False)
    if rows:
        zero = np.zeros((2 * nv, len(model.bodies), 6))
        jac, _ = _contact_terms(model, kin, contacts, np.zeros((2 * nv, nv)), zero)
        residual = residual - np.einsum("bij,i->bj", jac, lam)
        residual = np.concatenate([residual, np.einsum("bij,j->bi", jac, v_plus)], axis=1)
    dr_dq = ((residual[:nv] - residual[nv:]) / (2 * FD_STEP_Q)).T
    dr_dv = np.zeros((nv + rows, nv))
    dr_dv[:nv] = -mass_matrix(model, state.q)
    dr_dx = np.concatenate([dr_dq, dr_dv], axis=1)
    dv_dx, dlam_dx = kkt.solve(-dr_dx[:nv], -dr_dx[nv:])
    return ImpulseDerivatives(ImpulseResult(v_plus, _split_wrenches(contacts, lam)), dv_dx, dlam_dx.reshape(rows, 2 * nv))


def gravity_compensation(
    model: "RobotModel", state: State, contacts: ContactSet
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Joint torques and contact wrenches holding ``state`` with zero acceleration.

    Base rows are balanced by the minimum-norm contact wrenches. Without
    contacts a floating base cannot be held; the joints then only carry the
    load of their own subtrees.
    """
    bias = bias_forces(model, state.q, state.v)
    if contacts.active and model.has_free_base:
        jac = contact_jacobian(model, state.q, contacts)
        lam, *_ = np.linalg.lstsq(jac[:, :6].T, bias[:6], rcond=None)
        generalized = bias - jac.T @ lam
    else:
        lam = np.zeros(contacts.rows)
        generalized = bias
    return generalized[model.actuated_dofs], _split_wrenches(contacts, lam)


# ----------------------------------------------------------------------
# manifold operations
# ----------------------------------------------------------------------
def integrate_configuration(model: "RobotModel", q: np.ndarray, dq: np.ndarray) -> np.ndarray:
    """q (+) dq for batches of configurations (..., nq) and tangents (..., nv)."""
    q = np.asarray(q, dtype=float)
    dq = np.asarray(dq, dtype=float)
    out = np.array(np.broadcast_to(q, np.broadcast_shapes(q.shape[:-1], dq.shape[:-1]) + (model.nq,)))
    out[..., model.joint_q_index] += dq[..., model.joint_v_index]
    if model.has_free_base:
        rot = quat_to_matrix(q[..., 3:7])
        out[..., :3] = q[..., :3] + np.einsum("...ij,...j->...i", rot, dq[..., :3])
        out[..., 3:7] = quat_normalize(quat_multiply(q[..., 3:7], quat_exp(dq[..., 3:6])))
    return out


def difference_configuration(model: "RobotModel", q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Tangent dq with q1 (+) dq = q2."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    shape = np.broadcast_shapes(q1.shape[:-1], q2.shape[:-1]) + (model.nv,)
    out = np.zeros(shape)
    out[..., model.joint_v_index] = q2[..., model.joint_q_index] - q1[..., model.joint_q_index]
    if model.has_free_base:
        rot = quat_to_matrix(q1[..., 3:7])
        out[..., :3] = np.einsum("...ji,...j->...i", rot, q2[..., :3] - q1[..., :3])
        out[..., 3:6] = quat_log(quat_multiply(quat_conjugate(q1[..., 3:7]), q2[..., 3:7]))
    return out


def integrate_state(model: "RobotModel", state: State, vdot: np.ndarray, dt: float) -> State:
    """Semi-implicit Euler: v' = v + vdot dt, q' = q (+) v' dt."""
    if not dt > 0:
        raise DynamicsError(f"dt must be > 0, got {dt}")
    v_next = state.v + np.asarray(vdot, dtype=float) * dt
    return State(integrate_configuration(model, state.q, v_next * dt), v_next)


def state_difference(model: "RobotModel", s1: State, s2: State) -> np.ndarray:
    """2nv tangent (q-log difference, v2 - v1)."""
    return np.concatenate([difference_configuration(model, s1.q, s2.q), s2.v - s1.v])


def integrate_tangent(model: "RobotModel", x: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """State-vector retraction x (+) dx with x = (q, v) and dx in 2nv."""
    nq, nv = model.nq, model.nv
    return np.concatenate(
        [integrate_configuration(model, x[..., :nq], dx[..., :nv]), x[..., nq:] + dx[..., nv:]], axis=-1
    )


def difference_tangent(model: "RobotModel", x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    nq = model.nq
    return np.concatenate(
        [difference_configuration(model, x1[..., :nq], x2[..., :nq]), x2[..., nq:] - x1[..., nq:]], axis=-1
    )


def integrate_jacobians(model: "RobotModel", q: np.ndarray, dq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of q (+) dq w.r.t. q and dq, both expressed in the tangent at the result."""
    nv = model.nv
    jq, jdq = np.eye(nv), np.eye(nv)
    if model.has_free_base:
        dp, dtheta = dq[:3], dq[3:6]
        rt = so3_exp(dtheta).T
        jq[:3, :3] = rt
        jq[:3, 3:6] = -rt @ skew(dp)
        jq[3:6, 3:6] = rt
        jdq[:3, :3] = rt
        jdq[3:6, 3:6] = right_jacobian(dtheta)
    return jq, jdq


def difference_jacobian(model: "RobotModel", q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Jacobian of ``difference_configuration(q1, q2)`` w.r.t. q2."""
    jac = np.eye(model.nv)
    if model.has_free_base:
        r1 = quat_to_matrix(q1[3:7])
        r2 = quat_to_matrix(q2[3:7])
        jac[:3, :3] = r1.T @ r2
        jac[3:6, 3:6] = right_jacobian_inv(difference_configuration(model, q1, q2)[3:6])
    return jac
