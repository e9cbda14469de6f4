"""
core/linearise.py
─────────────────────
Exact first derivatives of the keypoint vector field at an operating point
(x*, u*, λ̄*), plus a central finite-difference oracle to check them against.

These matrices are used for:
- Gradient checks of the transcribed NLP
- Linear analysis around a trajectory knot
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Tuple

import casadi as ca
import numpy as np

from core.dynamics import (
    ForceContext,
    ForceLike,
    InputLike,
    StateLike,
    as_force_vector,
    as_input_vector,
    as_state_vector,
    casadi_rhs,
    projection,
)
from core.errors import SingularityError
from core.params import BeltModel


@lru_cache(maxsize=16)
def _jacobian_function(belt: BeltModel, ctx: ForceContext) -> ca.Function:
    f = casadi_rhs(belt, ctx)
    x = ca.SX.sym("x", f.size1_in(0))
    u = ca.SX.sym("u", f.size1_in(1))
    lam = ca.SX.sym("lam", f.size1_in(2))
    xdot = f(x, u, lam)
    return ca.Function(
        "J", [x, u, lam],
        [ca.jacobian(xdot, x), ca.jacobian(xdot, u), ca.jacobian(xdot, lam)],
    )


def dynamics_jacobians(
    x: StateLike,
    u: InputLike,
    f: ForceLike,
    belt: BeltModel,
    ctx: ForceContext,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Compute ∂ẋ/∂x, ∂ẋ/∂u and ∂ẋ/∂λ̄ at (x*, u*, λ̄*).

    Returns
    -------
    Jx : ndarray (18×18)
    Ju : ndarray (18×6)
    Jl : ndarray (18×2)

    Raises
    ------
    SingularityError
        If K1 meets its anchor or K2 meets the centre of P1.
    """
    xv, uv, lam = as_state_vector(x), as_input_vector(u), as_force_vector(f)

    # Same guards as vector_field; CasADi alone would return the regularised limit.
    projection(xv[0:3], ctx.elastic_anchor(xv))
    projection(ctx.pulley1.O, xv[3:6])

    Jx, Ju, Jl = _jacobian_function(belt, ctx)(xv, uv, lam)
    out = tuple(np.array(J.full()) for J in (Jx, Ju, Jl))
    if not all(np.all(np.isfinite(J)) for J in out):
        raise SingularityError("non-finite dynamics Jacobian")
    return out


def finite_difference_jacobian(
    fun: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    step: float = 1e-6,
) -> np.ndarray:
    """
    Central-difference Jacobian of a vector function.

    Parameters
    ----------
    fun : callable
        Maps an (n,) array to an (m,) array (scalars are treated as m = 1).
    x0 : ndarray (n,)
        Point of evaluation.
    step : float
        Absolute perturbation per coordinate.

    Returns
    -------
    ndarray (m×n)
    """
    x0 = np.asarray(x0, dtype=float)
    f0 = np.atleast_1d(np.asarray(fun(x0), dtype=float))
    J = np.zeros((f0.size, x0.size))
    for j in range(x0.size):
        xp, xm = x0.copy(), x0.copy()
        xp[j] += step
        xm[j] -= step
        fp = np.atleast_1d(np.asarray(fun(xp), dtype=float))
        fm = np.atleast_1d(np.asarray(fun(xm), dtype=float))
        J[:, j] = (fp - fm) / (2.0 * step)
    return J
