"""
Cost-term library for the trajectory optimizer.

Terms share the CostTerm interface; ``create_cost_term`` builds one from its
kind name and ``compose_node_cost`` sums a knot's weighted terms.
"""

from typing import Any, Iterable

from costs.base_cost import (
    BoundOrderError,
    CostError,
    CostEvaluation,
    CostTerm,
    DimensionMismatchError,
    NodeContext,
    Residual,
    UndefinedCopError,
    WrenchTermError,
)
from costs.residuals import bounded_quadratic, quadratic_cost, quadratic_residual_cost
from costs.terms import (
    ComTracking,
    ControlReg,
    CopBarrier,
    FramePlacement,
    FrictionConeBarrier,
    JointLimitBarrier,
    PostureReg,
)
from costs.wrench_cone import (
    COP_MIN_NORMAL_FORCE,
    WrenchConeSpec,
    cop_barrier,
    cop_from_wrench,
    friction_cone_barrier,
    friction_cone_residual,
)

COST_KINDS = {
    cls.kind: cls
    for cls in (
        ComTracking,
        FramePlacement,
        PostureReg,
        ControlReg,
        JointLimitBarrier,
        FrictionConeBarrier,
        CopBarrier,
    )
}


def create_cost_term(kind: str, weight: float, **params: Any) -> CostTerm:
    """
    Factory function to create a cost term from its kind name.

    Args:
        kind: one of com_tracking, frame_placement, posture_reg, control_reg,
              joint_limit_barrier, friction_cone_barrier, cop_barrier
        weight: non-negative weight of the term
        **params: constructor arguments of the term (reference, frame, spec, ...)

    Raises:
        CostError: unknown kind or invalid parameters

    Example:
        >>> term = create_cost_term("com_tracking", 1e3, reference=[0.0, 0.0, 0.9])
        >>> term.kind
        'com_tracking'
    """
    try:
        cls = COST_KINDS[kind]
    except KeyError:
        raise CostError(f"Unsupported cost kind: {kind}. Supported kinds: {', '.join(COST_KINDS)}") from None
    try:
        return cls(weight, **params)
    except TypeError as exc:
        raise CostError(f"{kind}: {exc}") from None


def compose_node_cost(terms: Iterable[CostTerm], ctx: NodeContext, derivatives: bool = True) -> CostEvaluation:
    """Weighted sum of term values and derivatives at one knot.

    Wrench-dependent terms raise WrenchTermError on a node without their
    contact. With ``derivatives=False`` only ``value`` is filled.
    """
    total = CostEvaluation.zeros(ctx.ndx, ctx.nu)
    for term in terms:
        if term.needs_wrench and (ctx.contacts is None or not len(ctx.contacts)):
            raise WrenchTermError(f"{term.kind} evaluated on a contact-free node")
        if term.weight == 0.0:
            continue
        if derivatives:
            total.add(term.evaluate(ctx), term.weight)
        else:
            total.value += term.weight * term.value(ctx)
    return total


__all__ = [
    "create_cost_term",
    "compose_node_cost",
    "COST_KINDS",
    "CostTerm",
    "CostEvaluation",
    "NodeContext",
    "Residual",
    "CostError",
    "DimensionMismatchError",
    "BoundOrderError",
    "UndefinedCopError",
    "WrenchTermError",
    "quadratic_cost",
    "quadratic_residual_cost",
    "bounded_quadratic",
    "WrenchConeSpec",
    "COP_MIN_NORMAL_FORCE",
    "friction_cone_residual",
    "friction_cone_barrier",
    "cop_from_wrench",
    "cop_barrier",
    "ComTracking",
    "FramePlacement",
    "PostureReg",
    "ControlReg",
    "JointLimitBarrier",
    "FrictionConeBarrier",
    "CopBarrier",
]
