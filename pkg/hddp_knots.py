"""
Knot models: one shooting node each.

A knot maps (x, u) to the next state and a stage cost. The solver only sees
this interface, so the same sweep runs over contact-dynamics knots, impulse
knots at touchdown and the linear-quadratic knots used to check the solver
against closed-form Riccati solutions.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from costs import CostEvaluation, CostTerm, NodeContext, compose_node_cost
from hddp_dynamics import (
    ContactSet,
    DynamicsError,
    State,
    contact_dynamics_derivatives,
    contact_forward_dynamics,
    difference_tangent,
    impulse_dynamics,
    impulse_dynamics_derivatives,
    integrate_configuration,
    integrate_jacobians,
    integrate_tangent,
)
from hddp_model import RobotModel


@dataclass
class KnotData:
    x_next: np.ndarray
    cost: float
    wrenches: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class KnotDerivatives:
    x_next: np.ndarray
    cost: CostEvaluation
    Fx: np.ndarray
    Fu: np.ndarray
    wrenches: Dict[str, np.ndarray] = field(default_factory=dict)


class KnotModel(ABC):
    """
    Abstract base class for shooting nodes.

    ``nx`` is the stored state size, ``ndx`` its tangent size. Terminal knots
    have no dynamics; impulse knots have no control and dt = 0.
    """

    nx: int
    ndx: int
    nu: int
    dt: float = 0.0
    is_impulse: bool = False
    terminal: bool = False
    contacts: ContactSet = ContactSet()

    def __init__(self, control_lower: Optional[np.ndarray] = None, control_upper: Optional[np.ndarray] = None):
        lower = np.full(self.nu, -np.inf) if control_lower is None else np.asarray(control_lower, dtype=float)
        upper = np.full(self.nu, np.inf) if control_upper is None else np.asarray(control_upper, dtype=float)
        if lower.shape != (self.nu,) or upper.shape != (self.nu,):
            raise ValueError(f"control bounds must have {self.nu} entries")
        if np.any(lower > upper):
            raise ValueError("control lower bound exceeds upper bound")
        self.control_lower = lower
        self.control_upper = upper

    @property
    def has_bounds(self) -> bool:
        return bool(np.any(np.isfinite(self.control_lower)) or np.any(np.isfinite(self.control_upper)))

    def clamp(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.control_lower, self.control_upper)

    @abstractmethod
    def calc(self, x: np.ndarray, u: np.ndarray) -> KnotData:
        """Next state and stage cost."""

    @abstractmethod
    def calc_diff(self, x: np.ndarray, u: np.ndarray) -> KnotDerivatives:
        """Next state, cost derivatives and dynamics Jacobians Fx (ndx x ndx), Fu (ndx x nu)."""

    @abstractmethod
    def integrate(self, x: np.ndarray, dx: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def difference(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        """Tangent dx with integrate(x1, dx) = x2."""


class _RobotKnot(KnotModel):
    def __init__(
        self,
        model: RobotModel,
        costs: Sequence[CostTerm] = (),
        contacts: Optional[ContactSet] = None,
        control_lower=None,
        control_upper=None,
    ):
        self.model = model
        self.nx = model.nq + model.nv
        self.ndx = 2 * model.nv
        self.contacts = contacts or ContactSet()
        self.contacts.validate(model)
        self.costs = list(costs)
        super().__init__(control_lower, control_upper)

    def integrate(self, x, dx):
        return integrate_tangent(self.model, x, dx)

    def difference(self, x1, x2):
        return difference_tangent(self.model, x1, x2)

    def _state(self, x: np.ndarray) -> State:
        return State.from_vector(x, self.model.nq)

    def _context(self, state, u, wrenches=None, dlam_dx=None, dlam_du=None) -> NodeContext:
        return NodeContext(self.model, state, u, self.contacts, wrenches or {}, dlam_dx, dlam_du)


class ContactKnot(_RobotKnot):
    """Running knot: KKT contact dynamics then semi-implicit Euler over ``dt``.

    The stage cost is ``dt`` times the weighted sum of its terms.
    """

    def __init__(
        self,
        model: RobotModel,
        dt: float,
        costs: Sequence[CostTerm] = (),
        contacts: Optional[ContactSet] = None,
        control_lower=None,
        control_upper=None,
        baumgarte_alpha: float = 0.0,
        baumgarte_beta: float = 0.0,
    ):
        if not dt > 0:
            raise DynamicsError(f"running knot needs dt > 0, got {dt}")
        self.nu = model.nu
        self.dt = float(dt)
        self.baumgarte = (baumgarte_alpha, baumgarte_beta)
        if control_lower is None and control_upper is None:
            control_lower, control_upper = -model.effort_limits, model.effort_limits
        super().__init__(model, costs, contacts, control_lower, control_upper)

    def _next_state(self, state: State, vdot: np.ndarray) -> np.ndarray:
        v_next = state.v + vdot * self.dt
        q_next = integrate_configuration(self.model, state.q, v_next * self.dt)
        return np.concatenate([q_next, v_next])

    def calc(self, x, u):
        state = self._state(x)
        result = contact_forward_dynamics(self.model, state, self.contacts, u, *self.baumgarte)
        ctx = self._context(state, u, result.wrenches)
        cost = compose_node_cost(self.costs, ctx, derivatives=False).value
        return KnotData(self._next_state(state, result.vdot), self.dt * cost, result.wrenches)

    def calc_diff(self, x, u):
        model, dt = self.model, self.dt
        nv = model.nv
        state = self._state(x)
        der = contact_dynamics_derivatives(model, state, self.contacts, u, *self.baumgarte)
        ctx = self._context(state, u, der.result.wrenches, der.dlam_dx, der.dlam_du)
        cost = compose_node_cost(self.costs, ctx).scaled(dt)

        v_next = state.v + der.result.vdot * dt
        jq, jdq = integrate_jacobians(model, state.q, v_next * dt)
        dvn_dx = dt * der.dvdot_dx
        dvn_dx[:, nv:] += np.eye(nv)
        dvn_du = dt * der.dvdot_du
        Fx = np.zeros((2 * nv, 2 * nv))
        Fx[:nv] = dt * jdq @ dvn_dx
        Fx[:nv, :nv] += jq
        Fx[nv:] = dvn_dx
        Fu = np.vstack([dt * jdq @ dvn_du, dvn_du])
        x_next = np.concatenate([integrate_configuration(model, state.q, v_next * dt), v_next])
        return KnotDerivatives(x_next, cost, Fx, Fu, der.result.wrenches)


class ImpulseKnot(_RobotKnot):
    """Touchdown: velocity reset by zero-restitution impulse dynamics, no control."""

    is_impulse = True

    def __init__(self, model: RobotModel, contacts: ContactSet, costs: Sequence[CostTerm] = ()):
        self.nu = 0
        for term in costs:
            if term.needs_wrench or term.kind == "control_reg":
                raise ValueError(f"impulse knots only take state costs, got {term.kind}")
        super().__init__(model, costs, contacts)

    def calc(self, x, u=None):
        state = self._state(x)
        result = impulse_dynamics(self.model, state, self.contacts)
        cost = compose_node_cost(self.costs, self._context(state, np.zeros(0)), derivatives=False).value
        return KnotData(np.concatenate([state.q, result.v_plus]), cost, result.impulses)

    def calc_diff(self, x, u=None):
        nv = self.model.nv
        state = self._state(x)
        der = impulse_dynamics_derivatives(self.model, state, self.contacts)
        cost = compose_node_cost(self.costs, self._context(state, np.zeros(0)))
        Fx = np.zeros((2 * nv, 2 * nv))
        Fx[:nv, :nv] = np.eye(nv)
        Fx[nv:] = der.dvplus_dx
        x_next = np.concatenate([state.q, der.result.v_plus])
        return KnotDerivatives(x_next, cost, Fx, np.zeros((2 * nv, 0)), der.result.impulses)


class TerminalKnot(_RobotKnot):
    terminal = True

    def __init__(self, model: RobotModel, costs: Sequence[CostTerm] = ()):
        self.nu = 0
        super().__init__(model, costs)

    def calc(self, x, u=None):
        cost = compose_node_cost(self.costs, self._context(self._state(x), np.zeros(0)), derivatives=False)
        return KnotData(np.asarray(x, dtype=float).copy(), cost.value)

    def calc_diff(self, x, u=None):
        cost = compose_node_cost(self.costs, self._context(self._state(x), np.zeros(0)))
        ndx = self.ndx
        return KnotDerivatives(np.asarray(x, dtype=float).copy(), cost, np.eye(ndx), np.zeros((ndx, 0)))


class LQKnot(KnotModel):
    """x' = A x + B u + c with cost 0.5 x^T Q x + q^T x + 0.5 u^T R u + r^T u + x^T N u."""

    def __init__(self, A, B, Q, R, c=None, q=None, r=None, N=None, control_lower=None, control_upper=None, terminal=False):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.asarray(B, dtype=float).reshape(self.A.shape[0], -1)
        self.nx = self.ndx = self.A.shape[0]
        self.nu = 0 if terminal else self.B.shape[1]
        if terminal:
            self.B = np.zeros((self.nx, 0))
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self.R = np.zeros((self.nu, self.nu)) if terminal else np.atleast_2d(np.asarray(R, dtype=float))
        self.c = np.zeros(self.nx) if c is None else np.asarray(c, dtype=float)
        self.q = np.zeros(self.nx) if q is None else np.asarray(q, dtype=float)
        self.r = np.zeros(self.nu) if r is None else np.asarray(r, dtype=float)
        self.N = np.zeros((self.nx, self.nu)) if N is None else np.asarray(N, dtype=float)
        self.terminal = terminal
        self.dt = 0.0 if terminal else 1.0
        super().__init__(control_lower, control_upper)

    def _cost(self, x, u) -> float:
        return float(0.5 * x @ self.Q @ x + self.q @ x + 0.5 * u @ self.R @ u + self.r @ u + x @ self.N @ u)

    def calc(self, x, u=None):
        u = np.zeros(self.nu) if u is None else np.asarray(u, dtype=float)
        x_next = x.copy() if self.terminal else self.A @ x + self.B @ u + self.c
        return KnotData(x_next, self._cost(x, u))

    def calc_diff(self, x, u=None):
        u = np.zeros(self.nu) if u is None else np.asarray(u, dtype=float)
        cost = CostEvaluation(
            self._cost(x, u),
            self.Q @ x + self.q + self.N @ u,
            self.R @ u + self.r + self.N.T @ x,
            self.Q.copy(),
            self.N.copy(),
            self.R.copy(),
        )
        if self.terminal:
            return KnotDerivatives(x.copy(), cost, np.eye(self.nx), np.zeros((self.nx, 0)))
        return KnotDerivatives(self.A @ x + self.B @ u + self.c, cost, self.A.copy(), self.B.copy())

    def integrate(self, x, dx):
        return x + dx

    def difference(self, x1, x2):
        return x2 - x1
