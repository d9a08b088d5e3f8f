"""
Base abstract class for cost terms.

A term maps a node (state, control and, on contact knots, the contact
wrenches with their sensitivities) to a residual r and its Jacobians. The
term's activation turns the residual into a value with Gauss-Newton
derivatives:

    quadratic:  value = |r|^2
    bounded:    value = 0.5 |r - clip(r, lower, upper)|^2
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, Optional

import numpy as np

if TYPE_CHECKING:
    from hddp_dynamics import ContactSet, State
    from hddp_model import RobotModel


class CostError(Exception):
    """Base error for cost terms and their evaluation."""


class DimensionMismatchError(CostError):
    pass


class BoundOrderError(CostError):
    pass


class UndefinedCopError(CostError):
    """The foot carries no normal load, so its centre of pressure is undefined."""

    def __init__(self, normal_force: float, threshold: float):
        self.normal_force = normal_force
        self.threshold = threshold
        super().__init__(f"normal force {normal_force:.6g} N <= {threshold:g} N, CoP undefined")


class WrenchTermError(CostError):
    """A wrench-dependent term was evaluated on a node without that contact."""


@dataclass
class CostEvaluation:
    """Value with gradient and Gauss-Newton Hessian blocks over (dx, u)."""

    value: float
    Lx: np.ndarray
    Lu: np.ndarray
    Lxx: np.ndarray
    Lxu: np.ndarray
    Luu: np.ndarray

    @classmethod
    def zeros(cls, ndx: int, nu: int) -> "CostEvaluation":
        return cls(
            0.0,
            np.zeros(ndx),
            np.zeros(nu),
            np.zeros((ndx, ndx)),
            np.zeros((ndx, nu)),
            np.zeros((nu, nu)),
        )

    def add(self, other: "CostEvaluation", weight: float = 1.0) -> None:
        self.value += weight * other.value
        self.Lx += weight * other.Lx
        self.Lu += weight * other.Lu
        self.Lxx += weight * other.Lxx
        self.Lxu += weight * other.Lxu
        self.Luu += weight * other.Luu

    def scaled(self, factor: float) -> "CostEvaluation":
        out = CostEvaluation.zeros(self.Lx.size, self.Lu.size)
        out.add(self, factor)
        return out


@dataclass
class Residual:
    r: np.ndarray
    jac_x: Optional[np.ndarray] = None
    jac_u: Optional[np.ndarray] = None


@dataclass
class NodeContext:
    """Everything a term may read at one knot.

    ``dlam_dx``/``dlam_du`` are the stacked contact wrench sensitivities in
    ``contacts.active`` order; they are only needed when derivatives are.
    Kinematic quantities are memoized per context.
    """

    model: "RobotModel"
    state: "State"
    control: np.ndarray
    contacts: Optional["ContactSet"] = None
    wrenches: Dict[str, np.ndarray] = field(default_factory=dict)
    dlam_dx: Optional[np.ndarray] = None
    dlam_du: Optional[np.ndarray] = None
    _memo: Dict[Any, Any] = field(default_factory=dict, repr=False)

    @property
    def ndx(self) -> int:
        return 2 * self.model.nv

    @property
    def nu(self) -> int:
        return int(np.size(self.control))

    def cached(self, key, compute):
        if key not in self._memo:
            self._memo[key] = compute()
        return self._memo[key]

    def wrench_rows(self, frame: str) -> slice:
        if self.contacts is None or frame not in self.contacts:
            raise WrenchTermError(f"no active contact at {frame} on this node")
        i = self.contacts.active.index(frame)
        return slice(6 * i, 6 * i + 6)


class CostTerm(ABC):
    """
    Abstract base class for weighted cost terms.

    Subclasses set ``kind`` and implement ``residual``; bounded terms set
    ``bounded = True`` and implement ``bounds``.
    """

    kind: str = "abstract"
    bounded: bool = False
    needs_wrench: bool = False

    def __init__(self, weight: float):
        if not np.isfinite(weight) or weight < 0:
            raise CostError(f"{self.kind}: weight must be finite and >= 0, got {weight}")
        self.weight = float(weight)

    @abstractmethod
    def residual(self, ctx: NodeContext, jacobians: bool) -> Residual:
        """Residual at the node, with (m, 2nv) and (m, nu) Jacobians when requested."""

    def bounds(self, ctx: NodeContext) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError(f"{self.kind} is not a bounded term")

    def evaluate(self, ctx: NodeContext) -> CostEvaluation:
        """Unweighted value and derivatives."""
        from costs.residuals import bounded_quadratic, quadratic_cost

        res = self.residual(ctx, True)
        jac_x = res.jac_x if res.jac_x is not None else np.zeros((res.r.size, ctx.ndx))
        jac_u = res.jac_u if res.jac_u is not None else np.zeros((res.r.size, ctx.nu))
        if self.bounded:
            lower, upper = self.bounds(ctx)
            return bounded_quadratic(res.r, lower, upper, jac_x, jac_u)
        return quadratic_cost(res.r, jac_x, jac_u)

    def value(self, ctx: NodeContext) -> float:
        """Unweighted value without derivatives."""
        r = self.residual(ctx, False).r
        if self.bounded:
            lower, upper = self.bounds(ctx)
            violation = r - np.clip(r, lower, upper)
            return 0.5 * float(violation @ violation)
        return float(r @ r)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(weight={self.weight:g})"
