"""
core/discretise.py
──────────────────
Utility functions that turn the *continuous* RHS  ẋ = f(x,u,λ̄)  into
discrete-time relations.

Three flavours are provided

1. trapezoid_defect_fun – returns a **CasADi** Function for the trapezoidal
                          defect  x_{k+1} − x_k − h/2 (f_k + f_{k+1})   (transcription)
2. defect_residual      – the same defect evaluated with **NumPy**       (checks, tests)
3. rk4_step             – performs one **NumPy** RK4 step                 (simulation)

u and λ̄ are knot values entering f at their own knot; there are no
midpoint variables.
"""

from __future__ import annotations

from typing import Callable

import casadi as ca
import numpy as np

from core.dynamics import (
    ForceContext,
    ForceLike,
    InputLike,
    StateLike,
    as_state_vector,
    vector_field,
)
from core.errors import PreconditionError
from core.params import BeltModel


# ════════════════════════════════════════════════════════════════════════════
# 1.  CasADi trapezoidal defect  (symbolic – for the transcription)           #
# ════════════════════════════════════════════════════════════════════════════
def trapezoid_defect_fun(rhs_fun: ca.Function, h: float) -> ca.Function:
    """
    Create a *symbolic* trapezoidal defect

        D(x_k, u_k, λ̄_k, x_{k+1}, u_{k+1}, λ̄_{k+1}) = x_{k+1} − x_k − h/2 (f_k + f_{k+1})

    Parameters
    ----------
    rhs_fun : casadi.Function
        Symbolic f(x, u, λ̄) returning ẋ.
    h : float
        Knot spacing [s].

    Returns
    -------
    casadi.Function
    """
    if not h > 0.0:
        raise PreconditionError(f"step h must be positive, got {h}")
    nx, nu, nl = rhs_fun.size1_in(0), rhs_fun.size1_in(1), rhs_fun.size1_in(2)
    xk, uk, lk = ca.SX.sym("xk", nx), ca.SX.sym("uk", nu), ca.SX.sym("lk", nl)
    xn, un, ln = ca.SX.sym("xn", nx), ca.SX.sym("un", nu), ca.SX.sym("ln", nl)

    d = xn - xk - 0.5 * h * (rhs_fun(xk, uk, lk) + rhs_fun(xn, un, ln))
    return ca.Function("defect", [xk, uk, lk, xn, un, ln], [d])


# ════════════════════════════════════════════════════════════════════════════
# 2.  NumPy trapezoidal defect                                                #
# ════════════════════════════════════════════════════════════════════════════
def defect_residual(
    x_k: StateLike,
    u_k: InputLike,
    f_k: ForceLike,
    x_k1: StateLike,
    u_k1: InputLike,
    f_k1: ForceLike,
    h: float,
    *,
    belt: BeltModel,
    ctx: ForceContext,
) -> np.ndarray:
    """
    Trapezoidal defect  x_{k+1} − x_k − (h/2)·(f(k) + f(k+1)).

    Returns
    -------
    ndarray (18,)
        Zero for a consistent step; exactly linear in x_{k+1} apart from the
        force term evaluated at k+1.
    """
    if not h > 0.0:
        raise PreconditionError(f"step h must be positive, got {h}")
    xa, xb = as_state_vector(x_k), as_state_vector(x_k1)
    fa = vector_field(xa, u_k, f_k, belt, ctx)
    fb = vector_field(xb, u_k1, f_k1, belt, ctx)
    return xb - xa - 0.5 * h * (fa + fb)


# ════════════════════════════════════════════════════════════════════════════
# 3.  NumPy RK4 step  (numeric – for forward simulation)                      #
# ════════════════════════════════════════════════════════════════════════════
def rk4_step(
    t: float,
    state: np.ndarray,
    dt: float,
    rhs: Callable[[float, np.ndarray], np.ndarray],
) -> np.ndarray:
    """
    Perform **one** explicit RK4 step of a non-autonomous system  ẋ = f(t, x).

    The input schedule lives inside *rhs*, so a zero-order hold is a closure
    that ignores t and a first-order hold interpolates between knots.

    Parameters
    ----------
    t : float
        Time at the start of the step.
    state : ndarray
        Current state  x.
    dt : float
        Integration step size.
    rhs : callable
        f(t, x) → ẋ.

    Returns
    -------
    ndarray
        Next state  x⁺.
    """
    k1 = rhs(t,            state)
    k2 = rhs(t + 0.5 * dt, state + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, state + 0.5 * dt * k2)
    k4 = rhs(t + dt,       state + dt * k3)

    return state + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
