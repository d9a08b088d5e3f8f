"""
Contact-stability residuals of a rectangular 6D surface contact.

Wrenches are (fx, fy, fz, tx, ty, tz) in the contact frame, z along the
surface normal. Stability asks for a pushing normal force, tangential forces
inside the linearized Coulomb cone, and a centre of pressure inside a
fraction of the sole.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from costs.base_cost import CostError, CostEvaluation, UndefinedCopError
from costs.residuals import bounded_quadratic

COP_MIN_NORMAL_FORCE = 1.0  # N


@dataclass(frozen=True)
class WrenchConeSpec:
    mu: float = 0.7
    half_x: float = 0.100
    half_y: float = 0.040
    coverage: float = 0.5

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise CostError(f"friction coefficient must be > 0, got {self.mu}")
        if not (self.half_x > 0 and self.half_y > 0):
            raise CostError("foot half-dimensions must be > 0")
        if not 0 < self.coverage <= 1:
            raise CostError(f"coverage must be in (0, 1], got {self.coverage}")

    @property
    def cop_bound(self) -> np.ndarray:
        return self.coverage * np.array([self.half_x, self.half_y])


def friction_cone_residual(wrench: np.ndarray, spec: WrenchConeSpec):
    """Residual (fz, mu fz - |fx|, mu fz - |fy|) with its bounds [0, inf)."""
    fx, fy, fz = np.asarray(wrench, dtype=float)[:3]
    r = np.array([fz, spec.mu * fz - abs(fx), spec.mu * fz - abs(fy)])
    return r, np.zeros(3), np.full(3, np.inf)


def friction_cone_jacobian(wrench: np.ndarray, spec: WrenchConeSpec) -> np.ndarray:
    """d residual / d wrench (3 x 6); sign(0) is taken as 0."""
    fx, fy = np.asarray(wrench, dtype=float)[:2]
    jac = np.zeros((3, 6))
    jac[:, 2] = [1.0, spec.mu, spec.mu]
    jac[1, 0] = -np.sign(fx)
    jac[2, 1] = -np.sign(fy)
    return jac


def cop_from_wrench(wrench: np.ndarray, threshold: float = COP_MIN_NORMAL_FORCE) -> np.ndarray:
    """Centre of pressure (cx, cy) in the contact frame: cx = -ty/fz, cy = tx/fz."""
    w = np.asarray(wrench, dtype=float)
    fz = w[2]
    if fz <= threshold:
        raise UndefinedCopError(float(fz), threshold)
    return np.array([-w[4] / fz, w[3] / fz])


def cop_jacobian(wrench: np.ndarray) -> np.ndarray:
    w = np.asarray(wrench, dtype=float)
    fz = w[2]
    jac = np.zeros((2, 6))
    jac[0, 4] = -1.0 / fz
    jac[0, 2] = w[4] / fz**2
    jac[1, 3] = 1.0 / fz
    jac[1, 2] = -w[3] / fz**2
    return jac


def friction_cone_barrier(
    wrench: np.ndarray,
    spec: WrenchConeSpec,
    dlam_dx: Optional[np.ndarray] = None,
    dlam_du: Optional[np.ndarray] = None,
) -> CostEvaluation:
    """Bounded quadratic on the friction residual; derivatives are w.r.t. the wrench
    unless the wrench sensitivities are supplied."""
    r, lower, upper = friction_cone_residual(wrench, spec)
    jac = friction_cone_jacobian(wrench, spec)
    jac_x = jac if dlam_dx is None else jac @ dlam_dx
    jac_u = None if dlam_du is None else jac @ dlam_du
    return bounded_quadratic(r, lower, upper, jac_x, jac_u)


def cop_barrier(
    wrench: np.ndarray,
    spec: WrenchConeSpec,
    dlam_dx: Optional[np.ndarray] = None,
    dlam_du: Optional[np.ndarray] = None,
) -> CostEvaluation:
    bound = spec.cop_bound
    cop = cop_from_wrench(wrench)
    jac = cop_jacobian(wrench)
    jac_x = jac if dlam_dx is None else jac @ dlam_dx
    jac_u = None if dlam_du is None else jac @ dlam_du
    return bounded_quadratic(cop, -bound, bound, jac_x, jac_u)
