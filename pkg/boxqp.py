"""
Box-constrained quadratic program solved by projected Newton.

    minimize 0.5 x^T H x + g^T x   subject to   lower <= x <= upper

At every iterate the dimensions sitting on a bound with the gradient pushing
outward are clamped; a Newton step is taken on the free block (Cholesky of
H_ff) followed by a projected Armijo line search.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

MAX_ITERATIONS = 25
GRADIENT_TOLERANCE = 1e-9
STEP_DECREASE = 0.6
MIN_STEP = 1e-22
ARMIJO = 0.1


class BoxQPError(Exception):
    """The free block of the Hessian is not positive definite."""


@dataclass
class BoxQPResult:
    x: np.ndarray
    free: np.ndarray  # boolean mask
    free_factor: tuple | None  # Cholesky factor of H[free][:, free]
    iterations: int
    status: str

    @property
    def clamped(self) -> np.ndarray:
        return ~self.free

    def free_solve(self, rhs: np.ndarray) -> np.ndarray:
        """H_ff^{-1} rhs on the free rows."""
        return cho_solve(self.free_factor, rhs, check_finite=False)


def _value(hessian: np.ndarray, gradient: np.ndarray, x: np.ndarray) -> float:
    return float(x @ gradient + 0.5 * x @ hessian @ x)


def _factor(block: np.ndarray):
    try:
        return cho_factor(block, lower=False, check_finite=False)
    except LinAlgError:
        raise BoxQPError("free Hessian block is not positive definite") from None


def solve_box_qp(
    hessian: np.ndarray,
    gradient: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    x0: np.ndarray | None = None,
    max_iterations: int = MAX_ITERATIONS,
    tolerance: float = GRADIENT_TOLERANCE,
) -> BoxQPResult:
    n = gradient.shape[0]
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower > upper):
        raise ValueError("box lower bound exceeds upper bound")
    if x0 is None:
        x0 = np.zeros(n)
    x = np.clip(np.nan_to_num(np.asarray(x0, dtype=float)), lower, upper)
    free = np.ones(n, dtype=bool)
    factor = None
    old_free = None
    value = _value(hessian, gradient, x)
    status = "max iterations"

    iteration = 0
    for iteration in range(1, max_iterations + 1):
        grad = gradient + hessian @ x
        clamped = ((x <= lower) & (grad > 0)) | ((x >= upper) & (grad < 0)) | (lower == upper)
        free = ~clamped
        if not free.any():
            status = "all clamped"
            factor = None
            break
        if old_free is None or np.any(old_free != free):
            factor = _factor(hessian[np.ix_(free, free)])
            old_free = free
        if np.max(np.abs(grad[free])) < tolerance:
            status = "gradient below tolerance"
            break

        # Newton point on the free block with clamped dimensions held
        newton = x.copy()
        newton[free] = -cho_solve(
            factor, gradient[free] + hessian[np.ix_(free, clamped)] @ x[clamped], check_finite=False
        )
        search = newton - x
        slope = float(search @ grad)
        if slope >= 0:
            status = "no descent direction"
            break

        step = 1.0
        candidate = np.clip(x + search, lower, upper)
        candidate_value = _value(hessian, gradient, candidate)
        while (candidate_value - value) / (step * slope) < ARMIJO:
            step *= STEP_DECREASE
            if step < MIN_STEP:
                break
            candidate = np.clip(x + step * search, lower, upper)
            candidate_value = _value(hessian, gradient, candidate)
        if step < MIN_STEP:
            status = "line search failed"
            break
        x, value = candidate, candidate_value
    else:
        grad = gradient + hessian @ x

    if status == "max iterations":
        clamped = ((x <= lower) & (grad > 0)) | ((x >= upper) & (grad < 0)) | (lower == upper)
        free = ~clamped
        factor = _factor(hessian[np.ix_(free, free)]) if free.any() else None
    return BoxQPResult(x, free, factor if free.any() else None, iteration, status)
