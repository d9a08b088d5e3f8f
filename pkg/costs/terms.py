"""Concrete cost terms used by the gait builder."""

from __future__ import annotations

from typing import Optional

import numpy as np

from costs.base_cost import CostError, CostTerm, NodeContext, Residual
from costs.wrench_cone import (
    COP_MIN_NORMAL_FORCE,
    WrenchConeSpec,
    cop_from_wrench,
    cop_jacobian,
    friction_cone_jacobian,
    friction_cone_residual,
)
from hddp_dynamics import (
    center_of_mass,
    com_jacobian,
    difference_configuration,
    difference_jacobian,
    frame_jacobian,
    frame_placement,
)
from spatial import Placement, right_jacobian_inv, so3_log


def _com(ctx: NodeContext):
    return ctx.cached("com", lambda: center_of_mass(ctx.model, ctx.state.q))


def _com_jacobian(ctx: NodeContext):
    return ctx.cached("com_jacobian", lambda: com_jacobian(ctx.model, ctx.state.q))


def _placement(ctx: NodeContext, frame: str) -> Placement:
    return ctx.cached(("placement", frame), lambda: frame_placement(ctx.model, ctx.state.q, frame))


def _frame_jacobian(ctx: NodeContext, frame: str) -> np.ndarray:
    return ctx.cached(("jacobian", frame), lambda: frame_jacobian(ctx.model, ctx.state.q, frame))


class ComTracking(CostTerm):
    kind = "com_tracking"

    def __init__(self, weight: float, reference):
        super().__init__(weight)
        self.reference = np.asarray(reference, dtype=float).reshape(3)

    def residual(self, ctx, jacobians):
        r = _com(ctx) - self.reference
        if not jacobians:
            return Residual(r)
        jac_x = np.zeros((3, ctx.ndx))
        jac_x[:, : ctx.model.nv] = _com_jacobian(ctx)
        return Residual(r, jac_x)


class FramePlacement(CostTerm):
    """Position offset and rotation log error of a frame against a reference placement."""

    kind = "frame_placement"

    def __init__(self, weight: float, frame: str, reference: Placement):
        super().__init__(weight)
        self.frame = frame
        self.reference = reference

    def residual(self, ctx, jacobians):
        placement = _placement(ctx, self.frame)
        error_rot = so3_log(self.reference.rotation.T @ placement.rotation)
        r = np.concatenate([placement.translation - self.reference.translation, error_rot])
        if not jacobians:
            return Residual(r)
        jac = _frame_jacobian(ctx, self.frame)
        jac_x = np.zeros((6, ctx.ndx))
        nv = ctx.model.nv
        jac_x[:3, :nv] = jac[:3]
        jac_x[3:, :nv] = right_jacobian_inv(error_rot) @ placement.rotation.T @ jac[3:]
        return Residual(r, jac_x)


class PostureReg(CostTerm):
    """Weighted tangent distance of the state to a nominal state.

    Component weights default to 0 on the base position (so walking and
    jumping are not pulled back), 1 elsewhere.
    """

    kind = "posture_reg"

    def __init__(self, weight: float, reference: np.ndarray, component_weights: Optional[np.ndarray] = None):
        super().__init__(weight)
        self.reference = np.asarray(reference, dtype=float).reshape(-1)
        self.component_weights = None if component_weights is None else np.asarray(component_weights, dtype=float)

    def _weights(self, ctx) -> np.ndarray:
        if self.component_weights is not None:
            return self.component_weights
        w = np.ones(ctx.ndx)
        if ctx.model.has_free_base:
            w[:3] = 0.0
        return w

    def residual(self, ctx, jacobians):
        model = ctx.model
        if self.reference.size != model.nq + model.nv:
            raise CostError(f"posture reference has {self.reference.size} entries, state has {model.nq + model.nv}")
        q_ref, v_ref = self.reference[: model.nq], self.reference[model.nq :]
        w = self._weights(ctx)
        diff = np.concatenate([difference_configuration(model, q_ref, ctx.state.q), ctx.state.v - v_ref])
        r = w * diff
        if not jacobians:
            return Residual(r)
        jac_x = np.eye(ctx.ndx)
        jac_x[: model.nv, : model.nv] = difference_jacobian(model, q_ref, ctx.state.q)
        return Residual(r, w[:, None] * jac_x)


class ControlReg(CostTerm):
    kind = "control_reg"

    def __init__(self, weight: float, reference: Optional[np.ndarray] = None):
        super().__init__(weight)
        self.reference = None if reference is None else np.asarray(reference, dtype=float)

    def residual(self, ctx, jacobians):
        u = np.asarray(ctx.control, dtype=float)
        r = u if self.reference is None else u - self.reference
        if not jacobians:
            return Residual(r)
        return Residual(r, np.zeros((r.size, ctx.ndx)), np.eye(r.size))


class JointLimitBarrier(CostTerm):
    """Joint positions and rates kept inside the model's position and velocity limits."""

    kind = "joint_limit_barrier"
    bounded = True

    def __init__(self, weight: float, velocity_scale: Optional[np.ndarray] = None):
        super().__init__(weight)
        self.velocity_scale = velocity_scale

    def residual(self, ctx, jacobians):
        model = ctx.model
        r = np.concatenate([ctx.state.q[model.joint_q_index], ctx.state.v[model.joint_v_index]])
        if not jacobians:
            return Residual(r)
        n = model.joint_v_index.size
        jac_x = np.zeros((2 * n, ctx.ndx))
        jac_x[np.arange(n), model.joint_v_index] = 1.0
        jac_x[n + np.arange(n), model.nv + model.joint_v_index] = 1.0
        return Residual(r, jac_x)

    def bounds(self, ctx):
        model = ctx.model
        vmax = model.velocity_limits
        if self.velocity_scale is not None:
            vmax = vmax * self.velocity_scale
        lower = np.concatenate([model.position_lower, -vmax])
        upper = np.concatenate([model.position_upper, vmax])
        return lower, upper


class _WrenchTerm(CostTerm):
    bounded = True
    needs_wrench = True

    def __init__(self, weight: float, frame: str, spec: WrenchConeSpec):
        super().__init__(weight)
        self.frame = frame
        self.spec = spec

    def _chain(self, ctx: NodeContext, jac_wrench: np.ndarray):
        rows = ctx.wrench_rows(self.frame)
        if ctx.dlam_dx is None or ctx.dlam_du is None:
            raise CostError(f"{self.kind} at {self.frame} needs wrench sensitivities")
        return jac_wrench @ ctx.dlam_dx[rows], jac_wrench @ ctx.dlam_du[rows]

    def _wrench(self, ctx: NodeContext) -> np.ndarray:
        ctx.wrench_rows(self.frame)
        return ctx.wrenches[self.frame]


class FrictionConeBarrier(_WrenchTerm):
    """Unilaterality and linearized Coulomb friction of one foot wrench."""

    kind = "friction_cone_barrier"

    def residual(self, ctx, jacobians):
        wrench = self._wrench(ctx)
        r, _, _ = friction_cone_residual(wrench, self.spec)
        if not jacobians:
            return Residual(r)
        return Residual(r, *self._chain(ctx, friction_cone_jacobian(wrench, self.spec)))

    def bounds(self, ctx):
        return np.zeros(3), np.full(3, np.inf)


class CopBarrier(_WrenchTerm):
    """Centre of pressure inside ``coverage`` of the sole.

    An unloaded foot (fz at or below 1 N) contributes nothing; the friction
    term already penalizes pulling.
    """

    kind = "cop_barrier"

    def residual(self, ctx, jacobians):
        wrench = self._wrench(ctx)
        if wrench[2] <= COP_MIN_NORMAL_FORCE:
            zero = np.zeros(2)
            if not jacobians:
                return Residual(zero)
            return Residual(zero, np.zeros((2, ctx.ndx)), np.zeros((2, ctx.nu)))
        r = cop_from_wrench(wrench)
        if not jacobians:
            return Residual(r)
        return Residual(r, *self._chain(ctx, cop_jacobian(wrench)))

    def bounds(self, ctx):
        bound = self.spec.cop_bound
        return -bound, bound
