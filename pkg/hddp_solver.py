"""
Box-FDDP: feasibility-driven differential dynamic programming with control bounds.

Each iteration linearizes every knot, runs a Riccati sweep whose control
subproblem is a box-constrained QP, and rolls the dynamics forward along
the resulting policy

    u_t' = clamp(u_t + alpha k_t + K_t (x_t' - x_t))

Iterates may carry gaps (defects) between the rolled-out and the stored
next state. A step of length alpha shrinks every gap by (1 - alpha), so a
full step closes them and the iterate becomes feasible.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from boxqp import BoxQPError, solve_box_qp
from hddp_dynamics import DynamicsError
from hddp_knots import KnotDerivatives, KnotModel


class SolverError(Exception):
    """Base error for ill-posed shooting problems."""


class BackwardPassError(SolverError):
    """Quu stayed indefinite up to the maximum regularization."""


class SolverOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    max_iters: int = Field(500, ge=1)
    tol: float = Field(1e-9, gt=0)
    reg_init: float = Field(1e-9, ge=0)
    reg_min: float = Field(1e-9, ge=0)
    reg_max: float = Field(1e9, gt=0)
    reg_factor: float = Field(10.0, gt=1)
    alpha_min: float = Field(2.0**-10, gt=0, le=1)
    acceptance_ratio: float = Field(0.1, gt=0, lt=1)
    infeasible_acceptance: float = Field(2.0, gt=0)
    gap_tol: float = Field(1e-9, gt=0)
    workers: int = Field(1, ge=1)
    verbose: bool = False


@dataclass
class ShootingProblem:
    x0: np.ndarray
    running: List[KnotModel]
    terminal: KnotModel

    def __post_init__(self) -> None:
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if not self.terminal.terminal:
            raise SolverError("the last knot must be a terminal knot")
        for t, knot in enumerate(self.running):
            if knot.terminal:
                raise SolverError(f"knot {t} is terminal but not last")
            if knot.nx != self.terminal.nx:
                raise SolverError(f"knot {t} has nx={knot.nx}, terminal has {self.terminal.nx}")
            if not knot.is_impulse and not knot.dt > 0:
                raise SolverError(f"running knot {t} has dt={knot.dt}")
        if self.x0.size != self.terminal.nx:
            raise SolverError(f"initial state has {self.x0.size} entries, knots expect {self.terminal.nx}")

    @property
    def horizon(self) -> int:
        return len(self.running)

    @property
    def knots(self) -> List[KnotModel]:
        return [*self.running, self.terminal]

    def rollout(self, us: Sequence[np.ndarray]) -> List[np.ndarray]:
        xs = [self.x0.copy()]
        for knot, u in zip(self.running, us):
            xs.append(knot.calc(xs[-1], u).x_next)
        return xs


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    stop: float
    gap_norm: float
    step: float
    reg: float
    accepted: bool


@dataclass
class SolverDiagnostics:
    iterations: int = 0
    cost: float = np.inf
    stop: float = np.inf
    stop_reason: str = ""
    history: List[IterationRecord] = field(default_factory=list)

    @property
    def gap_norms(self) -> List[float]:
        return [r.gap_norm for r in self.history]

    @property
    def steps(self) -> List[float]:
        return [r.step for r in self.history]


@dataclass
class Solution:
    xs: List[np.ndarray]
    us: List[np.ndarray]
    wrenches: List[Dict[str, np.ndarray]]
    gains: List[np.ndarray]
    converged: bool
    diagnostics: SolverDiagnostics

    @property
    def cost(self) -> float:
        return self.diagnostics.cost


@dataclass
class BackwardResult:
    k: List[np.ndarray]
    K: List[np.ndarray]
    Vx: List[np.ndarray]
    Vxx: List[np.ndarray]
    d1: float  # sum Qu.k + sum Vx.f
    d2: float  # sum k.Quu.k - sum f.Vxx.f
    clamped: List[np.ndarray]


@dataclass
class ForwardResult:
    xs: List[np.ndarray]
    us: List[np.ndarray]
    cost: float
    wrenches: List[Dict[str, np.ndarray]]


@dataclass
class _Linearization:
    derivatives: List[KnotDerivatives]
    gaps: List[np.ndarray]
    cost: float

    @property
    def gap_norm(self) -> float:
        return max((float(np.max(np.abs(f))) if f.size else 0.0) for f in self.gaps)


def expected_improvement(d1: float, d2: float, alpha: float) -> float:
    """Predicted cost change alpha d1 + 0.5 alpha^2 d2 of a step of length alpha."""
    return alpha * d1 + 0.5 * alpha**2 * d2


def _linearize(problem: ShootingProblem, xs, us, feasible: bool, workers: int) -> _Linearization:
    knots = problem.knots
    controls = [*us, None]

    def work(t):
        return knots[t].calc_diff(xs[t], controls[t])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            derivatives = list(executor.map(work, range(len(knots))))
    else:
        derivatives = [work(t) for t in range(len(knots))]

    ndx = problem.terminal.ndx
    if feasible:
        gaps = [np.zeros(ndx) for _ in knots]
    else:
        gaps = [problem.terminal.difference(xs[0], problem.x0)]
        for t, knot in enumerate(problem.running):
            gaps.append(knot.difference(xs[t + 1], derivatives[t].x_next))
    cost = sum(d.cost.value for d in derivatives)
    return _Linearization(derivatives, gaps, float(cost))


def backward_pass(
    problem: ShootingProblem,
    xs: Sequence[np.ndarray],
    us: Sequence[np.ndarray],
    regularization: float,
    linearization: Optional[_Linearization] = None,
) -> BackwardResult:
    """Riccati sweep with a box-QP per knot.

    Raises BackwardPassError when a regularized Quu is not positive definite.
    """
    lin = linearization or _linearize(problem, xs, us, feasible=False, workers=1)
    der, gaps = lin.derivatives, lin.gaps
    N = problem.horizon
    Vx: List[np.ndarray] = [None] * (N + 1)
    Vxx: List[np.ndarray] = [None] * (N + 1)
    k: List[np.ndarray] = [None] * N
    K: List[np.ndarray] = [None] * N
    clamped: List[np.ndarray] = [None] * N

    term = der[N].cost
    Vxx[N] = term.Lxx.copy()
    Vx[N] = term.Lx + Vxx[N] @ gaps[N]
    d1 = float(Vx[N] @ gaps[N])
    d2 = -float(gaps[N] @ Vxx[N] @ gaps[N])

    for t in reversed(range(N)):
        knot, d = problem.running[t], der[t]
        Fx, Fu, c = d.Fx, d.Fu, d.cost
        Vx_next, Vxx_next = Vx[t + 1], Vxx[t + 1]
        Qx = c.Lx + Fx.T @ Vx_next
        Qxx = c.Lxx + Fx.T @ Vxx_next @ Fx
        if knot.nu == 0:
            k[t] = np.zeros(0)
            K[t] = np.zeros((0, knot.ndx))
            clamped[t] = np.zeros(0, dtype=bool)
            Vx[t], Vxx[t] = Qx, 0.5 * (Qxx + Qxx.T)
        else:
            Qu = c.Lu + Fu.T @ Vx_next
            Quu = c.Luu + Fu.T @ Vxx_next @ Fu
            Qxu = c.Lxu + Fx.T @ Vxx_next @ Fu
            if not (np.all(np.isfinite(Quu)) and np.all(np.isfinite(Qu))):
                raise BackwardPassError(f"non-finite Q-function at knot {t}")
            Quu_reg = 0.5 * (Quu + Quu.T) + regularization * np.eye(knot.nu)
            try:
                qp = solve_box_qp(
                    Quu_reg,
                    Qu,
                    knot.control_lower - us[t],
                    knot.control_upper - us[t],
                )
            except BoxQPError as exc:
                raise BackwardPassError(f"knot {t}: {exc}") from None
            kt = qp.x
            Kt = np.zeros((knot.nu, knot.ndx))
            if qp.free.any():
                Kt[qp.free] = -qp.free_solve(Qxu.T[qp.free])
            k[t], K[t], clamped[t] = kt, Kt, qp.clamped
            Vx[t] = Qx + Kt.T @ Quu @ kt + Kt.T @ Qu + Qxu @ kt
            Vxx[t] = Qxx + Kt.T @ Quu @ Kt + Kt.T @ Qxu.T + Qxu @ Kt
            Vxx[t] = 0.5 * (Vxx[t] + Vxx[t].T)
            d1 += float(Qu @ kt)
            d2 += float(kt @ Quu @ kt)
        Vx[t] = Vx[t] + Vxx[t] @ gaps[t]
        d1 += float(Vx[t] @ gaps[t])
        d2 -= float(gaps[t] @ Vxx[t] @ gaps[t])
        if not np.all(np.isfinite(Vx[t])):
            raise BackwardPassError(f"non-finite value gradient at knot {t}")
    return BackwardResult(k, K, Vx, Vxx, d1, d2, clamped)


def forward_pass(
    problem: ShootingProblem,
    xs: Sequence[np.ndarray],
    us: Sequence[np.ndarray],
    gains: BackwardResult,
    alpha: float,
    gaps: Optional[Sequence[np.ndarray]] = None,
) -> Optional[ForwardResult]:
    """Roll the policy out with step ``alpha``; None if the rollout blows up.

    With gaps, each next state is the rolled-out state shifted by
    (alpha - 1) times the gap, which leaves (1 - alpha) of every gap open.
    """
    N = problem.horizon
    xs_try: List[np.ndarray] = []
    us_try: List[np.ndarray] = []
    wrenches: List[Dict[str, np.ndarray]] = []
    cost = 0.0
    x_next = problem.x0
    try:
        for t in range(N + 1):
            knot = problem.knots[t]
            if gaps is None or alpha == 1.0:
                x = np.array(x_next, dtype=float)
            else:
                x = knot.integrate(x_next, (alpha - 1.0) * gaps[t])
            xs_try.append(x)
            if t == N:
                cost += knot.calc(x).cost
                break
            u = us[t] + alpha * gains.k[t] + gains.K[t] @ knot.difference(xs[t], x)
            u = knot.clamp(u)
            us_try.append(u)
            data = knot.calc(x, u)
            cost += data.cost
            wrenches.append(data.wrenches)
            x_next = data.x_next
            if not (np.isfinite(cost) and np.all(np.isfinite(x_next))):
                return None
    except (DynamicsError, np.linalg.LinAlgError, FloatingPointError):
        # singular contact geometry along the rollout counts as a blow-up
        return None
    if not np.isfinite(cost):
        return None
    return ForwardResult(xs_try, us_try, float(cost), wrenches)


def _step_lengths(alpha_min: float) -> List[float]:
    steps, alpha = [], 1.0
    while alpha >= alpha_min * (1 - 1e-12):
        steps.append(alpha)
        alpha *= 0.5
    return steps


def _print_iteration(record: IterationRecord) -> None:
    if record.iteration == 1:
        print(f"{'iter':>5} {'cost':>14} {'stop':>11} {'gap':>11} {'step':>9} {'reg':>9}")
    print(
        f"{record.iteration:5d} {record.cost:14.8e} {record.stop:11.3e} {record.gap_norm:11.3e} "
        f"{record.step:9.3e} {record.reg:9.1e}"
    )


def _regularized_backward_pass(problem, xs, us, reg, lin, opts):
    """Backward pass with reg raised until Quu is positive definite; None past reg_max."""
    while True:
        try:
            return backward_pass(problem, xs, us, reg, lin), reg
        except BackwardPassError:
            if reg >= opts.reg_max:
                return None
            reg = min(max(reg, opts.reg_min, 1e-12) * opts.reg_factor, opts.reg_max)


def solve(
    problem: ShootingProblem,
    init_xs: Optional[Sequence[np.ndarray]] = None,
    init_us: Optional[Sequence[np.ndarray]] = None,
    options: Optional[SolverOptions] = None,
    callback: Optional[Callable[[IterationRecord], None]] = None,
) -> Solution:
    """Run Box-FDDP from a (possibly infeasible) warm start.

    Non-convergence is reported through ``Solution.converged``; the best
    accepted iterate is returned either way, also when Quu stays indefinite
    at ``reg_max``.
    """
    opts = options or SolverOptions()
    N = problem.horizon
    if init_us is None:
        init_us = [np.zeros(knot.nu) for knot in problem.running]
    us = [problem.running[t].clamp(np.asarray(u, dtype=float).reshape(-1)) for t, u in enumerate(init_us)]
    if len(us) != N or any(u.size != knot.nu for u, knot in zip(us, problem.running)):
        raise SolverError(f"warm start needs {N} controls matching each knot's nu")
    if init_xs is None:
        xs = problem.rollout(us)
    else:
        xs = [np.asarray(x, dtype=float).reshape(-1).copy() for x in init_xs]
        if len(xs) != N + 1 or any(x.size != problem.terminal.nx for x in xs):
            raise SolverError(f"warm start needs {N + 1} states of size {problem.terminal.nx}")

    steps = _step_lengths(opts.alpha_min)
    reg = opts.reg_init
    diagnostics = SolverDiagnostics()
    feasible = False
    lin = _linearize(problem, xs, us, feasible, opts.workers)
    if lin.gap_norm <= opts.gap_tol:
        feasible = True
        lin.gaps = [np.zeros_like(f) for f in lin.gaps]
    wrenches = [d.wrenches for d in lin.derivatives[:N]]
    gains = None
    converged = False

    for iteration in range(1, opts.max_iters + 1):
        regularized = _regularized_backward_pass(problem, xs, us, reg, lin, opts)
        if regularized is None:
            diagnostics.stop_reason = "backward pass failed at maximum regularization"
            break
        gains, reg = regularized

        diagnostics.iterations = iteration
        diagnostics.stop = abs(gains.d1)
        if feasible and abs(gains.d1) < opts.tol:
            converged = True
            diagnostics.stop_reason = "expected improvement below tolerance"
            record = IterationRecord(iteration, lin.cost, abs(gains.d1), lin.gap_norm, 0.0, reg, False)
            diagnostics.history.append(record)
            if opts.verbose:
                _print_iteration(record)
            if callback:
                callback(record)
            break

        accepted = None
        for alpha in steps:
            trial = forward_pass(problem, xs, us, gains, alpha, None if feasible else lin.gaps)
            if trial is None:
                continue
            dv = 0.0
            if not feasible:
                for t in range(N + 1):
                    dx = problem.knots[t].difference(xs[t], trial.xs[t])
                    dv -= float(lin.gaps[t] @ gains.Vxx[t] @ dx)
            d1 = gains.d1 - dv
            d2 = gains.d2 + 2.0 * dv
            actual = lin.cost - trial.cost
            expected = -expected_improvement(d1, d2, alpha)
            if expected >= 0:
                if abs(d1) < opts.tol or actual >= opts.acceptance_ratio * expected:
                    accepted = (alpha, trial)
                    break
            elif not feasible and actual > opts.infeasible_acceptance * expected:
                accepted = (alpha, trial)
                break

        if accepted is None:
            record = IterationRecord(iteration, lin.cost, abs(gains.d1), lin.gap_norm, 0.0, reg, False)
            diagnostics.history.append(record)
            if opts.verbose:
                _print_iteration(record)
            if callback:
                callback(record)
            if reg >= opts.reg_max:
                diagnostics.stop_reason = "line search failed at maximum regularization"
                break
            reg = min(reg * opts.reg_factor, opts.reg_max)
            continue

        alpha, trial = accepted
        xs, us = trial.xs, trial.us
        feasible = feasible or alpha == 1.0
        lin = _linearize(problem, xs, us, feasible, opts.workers)
        if not feasible and lin.gap_norm <= opts.gap_tol:
            feasible = True
            lin.gaps = [np.zeros_like(f) for f in lin.gaps]
        wrenches = [d.wrenches for d in lin.derivatives[:N]]
        reg = max(reg / opts.reg_factor, opts.reg_min)
        record = IterationRecord(iteration, lin.cost, abs(gains.d1), lin.gap_norm, alpha, reg, True)
        diagnostics.history.append(record)
        if opts.verbose:
            _print_iteration(record)
        if callback:
            callback(record)
    else:
        diagnostics.stop_reason = "maximum iterations reached"

    diagnostics.cost = lin.cost
    feedback = gains.K if gains is not None else [np.zeros((k.nu, k.ndx)) for k in problem.running]
    return Solution(
        xs=[x.copy() for x in xs],
        us=[u.copy() for u in us],
        wrenches=wrenches,
        gains=[g.copy() for g in feedback],
        converged=converged,
        diagnostics=diagnostics,
    )
