"""Activation functions: squared-norm tracking and the bounded quadratic."""

from __future__ import annotations

from typing import Optional

import numpy as np

from costs.base_cost import BoundOrderError, CostEvaluation, DimensionMismatchError
from spatial import Placement


def _jacobians(m: int, jac_x: Optional[np.ndarray], jac_u: Optional[np.ndarray]):
    if jac_x is None:
        jac_x = np.eye(m)
    if jac_u is None:
        jac_u = np.zeros((m, 0))
    jac_x = np.asarray(jac_x, dtype=float)
    jac_u = np.asarray(jac_u, dtype=float)
    if jac_x.shape[0] != m or jac_u.shape[0] != m:
        raise DimensionMismatchError(
            f"residual has {m} rows, Jacobians have {jac_x.shape[0]} and {jac_u.shape[0]}"
        )
    return jac_x, jac_u


def quadratic_cost(
    r: np.ndarray, jac_x: Optional[np.ndarray] = None, jac_u: Optional[np.ndarray] = None
) -> CostEvaluation:
    """|r|^2 with gradient 2 J^T r and Gauss-Newton Hessian 2 J^T J.

    Without Jacobians the derivatives are with respect to r itself.
    """
    r = np.asarray(r, dtype=float).reshape(-1)
    jac_x, jac_u = _jacobians(r.size, jac_x, jac_u)
    return CostEvaluation(
        value=float(r @ r),
        Lx=2.0 * jac_x.T @ r,
        Lu=2.0 * jac_u.T @ r,
        Lxx=2.0 * jac_x.T @ jac_x,
        Lxu=2.0 * jac_x.T @ jac_u,
        Luu=2.0 * jac_u.T @ jac_u,
    )


def quadratic_residual_cost(
    actual,
    reference,
    jac_x: Optional[np.ndarray] = None,
    jac_u: Optional[np.ndarray] = None,
) -> CostEvaluation:
    """Squared distance between a feature and its reference.

    Placements are compared through their 6D log error (translation offset,
    rotation vector of reference^T actual); the Jacobians, when given, must
    be those of that error.
    """
    if isinstance(actual, Placement) or isinstance(reference, Placement):
        if not (isinstance(actual, Placement) and isinstance(reference, Placement)):
            raise DimensionMismatchError("a placement can only be compared with a placement")
        return quadratic_cost(actual.log_error(reference), jac_x, jac_u)
    actual = np.asarray(actual, dtype=float).reshape(-1)
    reference = np.asarray(reference, dtype=float).reshape(-1)
    if actual.shape != reference.shape:
        raise DimensionMismatchError(
            f"feature has dimension {actual.size}, reference has {reference.size}"
        )
    return quadratic_cost(actual - reference, jac_x, jac_u)


def bounded_quadratic(
    r: np.ndarray,
    lower,
    upper,
    jac_x: Optional[np.ndarray] = None,
    jac_u: Optional[np.ndarray] = None,
) -> CostEvaluation:
    """Zero inside [lower, upper], half the squared violation of the nearest bound outside.

    The value is C1 across the bounds; the Hessian is J^T J on the violated
    components only.
    """
    r = np.asarray(r, dtype=float).reshape(-1)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), r.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), r.shape)
    if np.any(lower > upper):
        raise BoundOrderError(f"lower bound exceeds upper bound: {lower} > {upper}")
    jac_x, jac_u = _jacobians(r.size, jac_x, jac_u)
    violation = r - np.clip(r, lower, upper)
    active = (violation != 0.0).astype(float)
    ax = active[:, None] * jac_x
    au = active[:, None] * jac_u
    return CostEvaluation(
        value=0.5 * float(violation @ violation),
        Lx=jac_x.T @ violation,
        Lu=jac_u.T @ violation,
        Lxx=ax.T @ jac_x,
        Lxu=ax.T @ jac_u,
        Luu=au.T @ jac_u,
    )
