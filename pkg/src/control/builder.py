"""
control/builder.py
──────────────────
Direct transcription of one subtask into a sparse, smooth NLP.

Decision vector (knot-major, 26 entries per knot, k = 0 … N)

    z = [ x_0 (18), u_0 (6), λ̄0_0, λ̄1_0,  x_1, u_1, λ̄0_1, λ̄1_1,  … ]

Constraint rows, in this order

    initial    18          x_0 − x_init = 0
    defects    18·N        x_{k+1} − x_k − h/2 (f_k + f_{k+1}) = 0
    elastic    3·(N+1)     λ2 ≥ 0,  λ̄0 ≥ 0,  λ̄0·λ2 ≤ σ          λ2 = λ̄0/k_p + L − l(x)
    contact    3·(N+1)     λ3 − ε ≥ 0,  λ̄1 ≥ 0,  λ̄1·(λ3 − ε) ≤ σ
    obstacle   4·(N+1)     d(K1,P1), d(K1,P2), d(K2,P1 groove), d(K2,P2) ≥ 0
    length     1·(N+1)     L_max − l(x) ≥ 0

Usage
-----
    nlp = transcribe(scenario, scenario.subtask_s1, scenario.initial_state)
    grad, J = nlp_gradients(nlp, z)

The NumPy row functions below return residuals in the "≥ 0 is feasible"
convention and mirror the symbolic rows one to one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Tuple

import casadi as ca
import numpy as np
import scipy.sparse as sp

from control.nlp import NLPProblem, stack_rows
from core.discretise import trapezoid_defect_fun
from core.dynamics import (
    ForceContext,
    StateLike,
    as_state_vector,
    cable_length,
    casadi_cable_length,
    casadi_contact_gap,
    casadi_ellipsoid_distance,
    casadi_rhs,
    contact_gap,
    ellipsoid_distance,
)
from core.errors import LayoutError, PreconditionError, SingularityError
from core.params import (
    FORCE_DIM,
    INPUT_DIM,
    SINGULAR_TOL,
    STATE_DIM,
    BeltModel,
    Scenario,
    SubtaskSpec,
    SystemState,
)

logger = logging.getLogger(__name__)

MAX_VARIABLES = 200_000

# --------------------------------------------------------------------------- #
# 0.  Rows per knot of each path block                                        #
# --------------------------------------------------------------------------- #
ELASTIC_ROWS = 3
CONTACT_ROWS = 3
OBSTACLE_ROWS = 4
LENGTH_ROWS = 1
_INF = np.inf


# --------------------------------------------------------------------------- #
# 1.  Decision-variable layout                                                #
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class DecisionLayout:
    N: int

    nx = STATE_DIM
    nu = INPUT_DIM
    nl = FORCE_DIM
    width = STATE_DIM + INPUT_DIM + FORCE_DIM       # 26

    def __post_init__(self):
        if self.N < 1:
            raise LayoutError(f"horizon must be positive, got {self.N}")

    @property
    def knots(self) -> int:
        return self.N + 1

    @property
    def size(self) -> int:
        return self.knots * self.width

    def x(self, k: int) -> slice:
        s = k * self.width
        return slice(s, s + self.nx)

    def u(self, k: int) -> slice:
        s = k * self.width + self.nx
        return slice(s, s + self.nu)

    def lam(self, k: int) -> slice:
        s = k * self.width + self.nx + self.nu
        return slice(s, s + self.nl)

    def index(self, k: int, part: str, i: int) -> int:
        """Flat index of component *i* of part "x" | "u" | "lam" at knot *k*."""
        sl = {"x": self.x, "u": self.u, "lam": self.lam}[part](k)
        if not (0 <= k <= self.N and 0 <= i < sl.stop - sl.start):
            raise IndexError((k, part, i))
        return sl.start + i

    def locate(self, j: int) -> Tuple[int, str, int]:
        """Inverse of index()."""
        if not 0 <= j < self.size:
            raise IndexError(j)
        k, r = divmod(j, self.width)
        if r < self.nx:
            return k, "x", r
        if r < self.nx + self.nu:
            return k, "u", r - self.nx
        return k, "lam", r - self.nx - self.nu

    def unflatten(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float).ravel()
        if z.size != self.size:
            raise LayoutError(f"vector has {z.size} entries, layout expects {self.size}")
        Z = z.reshape(self.knots, self.width)
        return (Z[:, :self.nx].copy(),
                Z[:, self.nx:self.nx + self.nu].copy(),
                Z[:, self.nx + self.nu:].copy())

    def flatten(self, states: np.ndarray, inputs: np.ndarray, forces: np.ndarray) -> np.ndarray:
        shapes = ((self.knots, self.nx), (self.knots, self.nu), (self.knots, self.nl))
        arrays = [np.asarray(a, dtype=float) for a in (states, inputs, forces)]
        if any(a.shape != s for a, s in zip(arrays, shapes)):
            raise LayoutError(f"arrays {[a.shape for a in arrays]} do not match layout {shapes}")
        return np.hstack(arrays).ravel()

    def row_counts(self) -> dict:
        """Closed-form row count of every constraint block."""
        K = self.knots
        return {
            "initial": self.nx,
            "defects": self.nx * self.N,
            "elastic": ELASTIC_ROWS * K,
            "contact": CONTACT_ROWS * K,
            "obstacle": OBSTACLE_ROWS * K,
            "length": LENGTH_ROWS * K,
        }


# --------------------------------------------------------------------------- #
# 2.  NumPy row evaluators                                                    #
# --------------------------------------------------------------------------- #
def elastic_slack(x_k: StateLike, lam0: float, belt: BeltModel, ctx: ForceContext) -> float:
    """λ2 = λ̄0/k_p + L − l(x)."""
    return lam0 / belt.k_p + belt.rest_length_L - cable_length(x_k, ctx)


def elastic_complementarity_rows(
    x_k: StateLike, lam0: float, sigma: float, *, belt: BeltModel, ctx: ForceContext,
) -> np.ndarray:
    """[λ2, λ̄0, σ − λ̄0·λ2]; the knot is feasible iff all three are ≥ 0."""
    if sigma < 0.0:
        raise PreconditionError("σ must be nonnegative")
    l2 = elastic_slack(x_k, lam0, belt, ctx)
    return np.array([l2, lam0, sigma - lam0 * l2])


def contact_complementarity_rows(
    x_k: StateLike, lam1: float, epsilon: float, sigma: float, *, ctx: ForceContext,
) -> np.ndarray:
    """[λ3 − ε, λ̄1, σ − λ̄1·(λ3 − ε)]; the knot is feasible iff all three are ≥ 0."""
    if not epsilon > 0.0 or sigma < 0.0:
        raise PreconditionError("ε must be positive and σ nonnegative")
    gap = contact_gap(x_k, ctx, epsilon) - epsilon
    return np.array([gap, lam1, sigma - lam1 * gap])


def path_constraint_rows(x_k: StateLike, scenario: Scenario, spec: SubtaskSpec) -> np.ndarray:
    """
    [d(K1,P1), d(K1,P2), d(K2,P1), d(K2,P2), L_max − l(x)], all ≥ 0 when feasible.

    K2 is kept outside the groove ellipsoid of P1 only, so it can seat on the
    rim where the contact force acts.
    """
    xv = as_state_vector(x_k)
    k1, k2 = xv[0:3], xv[3:6]
    p1, p2 = scenario.pulley1, scenario.pulley2
    ctx = ForceContext(spec.id, p1)
    return np.array([
        ellipsoid_distance(k1, p1),
        ellipsoid_distance(k1, p2),
        ellipsoid_distance(k2, p1, p1.groove_semi_axes),
        ellipsoid_distance(k2, p2),
        scenario.belt.max_length_Lmax - cable_length(xv, ctx),
    ])


def cost(states: np.ndarray, inputs: np.ndarray, forces: np.ndarray, spec: SubtaskSpec) -> float:
    """
    Σ_k (x_k − x^goal)ᵀ Q (x_k − x^goal) + u_kᵀ R u_k + w (λ̄0_k − λ̄0^desired)².

    Arrays are (K×18), (K×6), (K×2) for any number of knots K.
    """
    X = np.atleast_2d(np.asarray(states, dtype=float))
    U = np.atleast_2d(np.asarray(inputs, dtype=float))
    L = np.atleast_2d(np.asarray(forces, dtype=float))
    dx = X - spec.goal_state.vector
    J = np.sum(dx * dx * spec.Q) + np.sum(U * U * spec.R)
    if spec.weight_w:
        J += spec.weight_w * np.sum((L[:, 0] - spec.desired_tension) ** 2)
    return float(J)


# --------------------------------------------------------------------------- #
# 3.  Transcribed problem                                                     #
# --------------------------------------------------------------------------- #
class TranscribedNLP(NLPProblem):
    """NLPProblem of one subtask plus the data needed to interpret its vector."""

    layout:   DecisionLayout
    scenario: Scenario
    spec:     SubtaskSpec
    x_init:   SystemState
    ctx:      ForceContext

    def cost_of(self, z: np.ndarray) -> float:
        return cost(*self.layout.unflatten(z), self.spec)

    def check_singularities(self, z: np.ndarray) -> None:
        """Raise SingularityError at the first knot where a projection degenerates."""
        X, _, _ = self.layout.unflatten(z)
        k1, k2 = X[:, 0:3], X[:, 3:6]
        anchor = k2 if self.ctx.subtask_id == "S1" else self.scenario.pulley1.O
        d0 = np.linalg.norm(k1 - anchor, axis=1)
        d1 = np.linalg.norm(k2 - self.scenario.pulley1.O, axis=1)
        bad = np.flatnonzero((d0 <= SINGULAR_TOL) | (d1 <= SINGULAR_TOL))
        if bad.size:
            raise SingularityError("coincident points in a force projection", int(bad[0]))


def transcribe(
    scenario: Scenario,
    spec: SubtaskSpec,
    x_init: SystemState,
    *,
    sigma: float = 1e-1,
    max_variables: int = MAX_VARIABLES,
) -> TranscribedNLP:
    """
    Build the NLP of one subtask.

    Parameters
    ----------
    scenario : Scenario
        Geometry and belt parameters.
    spec : SubtaskSpec
        Goal, weights, horizon, step and bounds.
    x_init : SystemState
        Fixed initial state x_0.
    sigma : float
        Initial relaxation of the complementarity products.
    max_variables : int
        Memory budget; larger layouts raise LayoutError.

    Returns
    -------
    TranscribedNLP
    """
    N, h, bounds, belt = spec.horizon_N, spec.step_h, spec.bounds, scenario.belt
    layout = DecisionLayout(N)
    if layout.size > max_variables:
        raise LayoutError(f"N = {N} needs {layout.size} variables, budget is {max_variables}")
    x0 = x_init.vector
    if not bounds.contains_state(x0, tol=1e-12):
        raise PreconditionError("initial state violates the state bounds")

    ctx = ForceContext(spec.id, scenario.pulley1)
    p1, p2 = scenario.pulley1, scenario.pulley2
    F = casadi_rhs(belt, ctx)
    D = trapezoid_defect_fun(F, h)
    eps = ctx.epsilon

    # --------------------------------------------------------------------- #
    # 3.1  Decision vector and per-knot views                               #
    # --------------------------------------------------------------------- #
    z = ca.SX.sym("z", layout.size)
    X = [z[layout.x(k)] for k in range(layout.knots)]
    U = [z[layout.u(k)] for k in range(layout.knots)]
    L = [z[layout.lam(k)] for k in range(layout.knots)]

    # --------------------------------------------------------------------- #
    # 3.2  Rows                                                             #
    # --------------------------------------------------------------------- #
    defects = [D(X[k], U[k], L[k], X[k + 1], U[k + 1], L[k + 1]) for k in range(N)]

    elastic, contact, obstacle, length = [], [], [], []
    J = 0.0
    xg = ca.DM(spec.goal_state.vector)
    Q, R = ca.DM(spec.Q), ca.DM(spec.R)
    for k in range(layout.knots):
        x, u, lam0, lam1 = X[k], U[k], L[k][0], L[k][1]

        # ----  relaxed elastic complementarity -------------------------- #
        l_k = casadi_cable_length(x, ctx)
        l2 = lam0 / belt.k_p + belt.rest_length_L - l_k
        elastic += [l2, lam0, lam0 * l2]

        # ----  relaxed contact complementarity -------------------------- #
        gap = casadi_contact_gap(x, ctx) - eps
        contact += [gap, lam1, lam1 * gap]

        # ----  obstacles and length limit -------------------------------- #
        obstacle += [
            casadi_ellipsoid_distance(x[0:3], p1),
            casadi_ellipsoid_distance(x[0:3], p2),
            casadi_ellipsoid_distance(x[3:6], p1, p1.groove_semi_axes),
            casadi_ellipsoid_distance(x[3:6], p2),
        ]
        length += [belt.max_length_Lmax - l_k]

        # ----  stage cost ------------------------------------------------ #
        dx = x - xg
        J += ca.dot(Q * dx, dx) + ca.dot(R * u, u)
        if spec.weight_w:
            J += spec.weight_w * (lam0 - spec.desired_tension) ** 2

    K = layout.knots
    per_knot_3 = [0.0, 0.0, -_INF] * K
    g, lbg, ubg, blocks = stack_rows([
        ("initial", [X[0] - ca.DM(x0)], [0.0] * STATE_DIM, [0.0] * STATE_DIM),
        ("defects", defects, [0.0] * (STATE_DIM * N), [0.0] * (STATE_DIM * N)),
        ("elastic", elastic, per_knot_3, [_INF, _INF, sigma] * K),
        ("contact", contact, list(per_knot_3), [_INF, _INF, sigma] * K),
        ("obstacle", obstacle, [0.0] * (OBSTACLE_ROWS * K), [_INF] * (OBSTACLE_ROWS * K)),
        ("length", length, [0.0] * K, [_INF] * K),
    ])

    # products sit at offset 2 of every 3-row knot group
    comp = np.concatenate([
        blocks[2].start + ELASTIC_ROWS * np.arange(K) + 2,
        blocks[3].start + CONTACT_ROWS * np.arange(K) + 2,
    ])
    row_knots = np.concatenate([
        np.zeros(STATE_DIM, dtype=int),
        np.repeat(np.arange(N), STATE_DIM),
        np.repeat(np.arange(K), ELASTIC_ROWS),
        np.repeat(np.arange(K), CONTACT_ROWS),
        np.repeat(np.arange(K), OBSTACLE_ROWS),
        np.arange(K),
    ])

    # --------------------------------------------------------------------- #
    # 3.3  Variable bounds                                                  #
    # --------------------------------------------------------------------- #
    lb_knot = np.concatenate([bounds.x_lower, bounds.u_lower, bounds.lam_lower])
    ub_knot = np.concatenate([bounds.x_upper, bounds.u_upper, bounds.lam_upper])
    lbx, ubx = np.tile(lb_knot, K), np.tile(ub_knot, K)
    # x_0 is pinned by its box as well, so a chained subtask starts exactly there
    lbx[layout.x(0)] = ubx[layout.x(0)] = x0

    nlp = TranscribedNLP(
        z, J, g,
        lbx, ubx,
        lbg, ubg, blocks, comp, row_knots, sigma,
    )
    nlp.layout, nlp.scenario, nlp.spec, nlp.x_init, nlp.ctx = layout, scenario, spec, x_init, ctx

    for name, n_rows in layout.row_counts().items():
        if nlp.block(name).size != n_rows:
            raise LayoutError(f"block '{name}' has {nlp.block(name).size} rows, expected {n_rows}")
    logger.info("transcribed %s/%s: N=%d, %d variables, %d rows",
                scenario.name, spec.id, N, nlp.n, nlp.m)
    return nlp


def nlp_gradients(nlp: TranscribedNLP, z: np.ndarray) -> Tuple[np.ndarray, sp.csc_matrix]:
    """
    Exact cost gradient and sparse constraint Jacobian at *z*.

    Raises
    ------
    SingularityError
        With the index of the offending knot.
    """
    nlp.check_singularities(z)
    ev = nlp.evaluate(z)
    return ev.grad, ev.jac
