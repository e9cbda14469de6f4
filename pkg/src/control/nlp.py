"""
control/nlp.py
──────────────
Generic smooth NLP

    min  f(z)    s.t.   lbg ≤ g(z) ≤ ubg ,   lbx ≤ z ≤ ubx

built from a CasADi SX graph.  One compiled function returns f, ∇f, g and
the sparse Jacobian ∂g/∂z in a single pass; the Jacobian is handed out as a
SciPy CSC matrix whose pattern never changes between evaluations.

Every constraint row belongs to exactly one named RowBlock, so violations can
be reported per block.  The relaxation parameter σ lives only in the upper
bounds of the complementarity-product rows and is the single mutable field.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import casadi as ca
import numpy as np
import scipy.sparse as sp

from core.errors import LayoutError, PreconditionError, SingularityError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RowBlock:
    name:  str
    start: int
    stop:  int

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def rows(self) -> slice:
        return slice(self.start, self.stop)


@dataclass(frozen=True, eq=False)
class Evaluation:
    f:    float
    grad: np.ndarray          # (n,)
    g:    np.ndarray          # (m,)
    jac:  sp.csc_matrix       # (m×n)


class NLPProblem:
    """
    CasADi-backed NLP container with named row blocks.

    Parameters
    ----------
    z, f, g : casadi.SX
        Decision vector, objective and stacked constraints.
    lbx, ubx, lbg, ubg : array_like
        Variable and constraint bounds (±inf allowed).
    blocks : sequence of RowBlock
        Contiguous partition of the rows of g.
    complementarity_rows : array_like of int
        Rows of the relaxed products  λ·s ≤ σ ; their ubg is σ.
    row_knots : array_like of int, optional
        Knot index of each row, used to locate non-finite evaluations.
    """

    def __init__(
        self,
        z: ca.SX,
        f: ca.SX,
        g: ca.SX,
        lbx: Sequence[float],
        ubx: Sequence[float],
        lbg: Sequence[float],
        ubg: Sequence[float],
        blocks: Sequence[RowBlock],
        complementarity_rows: Sequence[int] = (),
        row_knots: Optional[Sequence[int]] = None,
        sigma: float = 0.0,
    ):
        self.n = int(z.numel())
        self.m = int(g.numel())
        self.lbx = np.asarray(lbx, dtype=float).ravel()
        self.ubx = np.asarray(ubx, dtype=float).ravel()
        self.lbg = np.asarray(lbg, dtype=float).ravel()
        self.ubg = np.asarray(ubg, dtype=float).ravel()
        self.blocks: Tuple[RowBlock, ...] = tuple(blocks)
        self.complementarity_rows = np.asarray(complementarity_rows, dtype=int)
        self.row_knots = None if row_knots is None else np.asarray(row_knots, dtype=int)
        self.scaling: Optional[Tuple[float, np.ndarray]] = None   # set once by the stage solver

        if self.lbx.size != self.n or self.ubx.size != self.n:
            raise LayoutError(f"variable bounds have length {self.lbx.size}/{self.ubx.size}, expected {self.n}")
        if self.lbg.size != self.m or self.ubg.size != self.m:
            raise LayoutError(f"constraint bounds have length {self.lbg.size}/{self.ubg.size}, expected {self.m}")
        covered = sum(b.size for b in self.blocks)
        if covered != self.m or any(a.stop != b.start for a, b in zip(self.blocks, self.blocks[1:])):
            raise LayoutError(f"row blocks cover {covered} of {self.m} rows or are not contiguous")

        self._z, self._f, self._g = z, f, g
        jac = ca.jacobian(g, z)
        grad = ca.gradient(f, z)
        self._fun = ca.Function("nlp", [z], [f, grad, g, jac], ["z"], ["f", "grad", "g", "jac"])
        colind, row = jac.sparsity().get_ccs()
        self._jac_colind = np.asarray(colind, dtype=np.int64)
        self._jac_row = np.asarray(row, dtype=np.int64)
        self._ipopt: Optional[ca.Function] = None
        self.set_sigma(sigma)

        logger.debug("NLP built: %d variables, %d rows, %d Jacobian nonzeros",
                     self.n, self.m, self.jacobian_nnz)

    # ── construction helper ────────────────────────────────────────────────
    @classmethod
    def from_casadi(cls, z, f, g, lbx, ubx, lbg, ubg, blocks=None, complementarity_rows=()):
        """Build from plain CasADi expressions; a single block "g" when *blocks* is omitted."""
        m = int(g.numel())
        if blocks is None:
            blocks = [RowBlock("g", 0, m)] if m else []
        return cls(z, f, g, lbx, ubx, lbg, ubg, blocks, complementarity_rows)

    # ── relaxation parameter ───────────────────────────────────────────────
    @property
    def sigma(self) -> float:
        return self._sigma

    def set_sigma(self, sigma: float) -> None:
        if sigma < 0.0:
            raise PreconditionError(f"relaxation σ must be nonnegative, got {sigma}")
        self._sigma = float(sigma)
        if self.complementarity_rows.size:
            self.ubg[self.complementarity_rows] = self._sigma

    # ── structure ──────────────────────────────────────────────────────────
    @property
    def jacobian_nnz(self) -> int:
        return int(self._jac_row.size)

    def jacobian_pattern(self) -> sp.csc_matrix:
        data = np.ones(self.jacobian_nnz)
        return sp.csc_matrix((data, self._jac_row, self._jac_colind), shape=(self.m, self.n))

    def block(self, name: str) -> RowBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def block_of_row(self, row: int) -> str:
        for b in self.blocks:
            if b.start <= row < b.stop:
                return b.name
        raise IndexError(row)

    # ── evaluation ─────────────────────────────────────────────────────────
    def _check_point(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float).ravel()
        if z.size != self.n:
            raise PreconditionError(f"point has {z.size} entries, NLP has {self.n} variables")
        return z

    def evaluate(self, z: np.ndarray) -> Evaluation:
        """f, ∇f, g and the CSC Jacobian at *z*; non-finite output raises SingularityError."""
        z = self._check_point(z)
        f, grad, g, jac = self._fun(z)
        f = float(f)
        grad = np.asarray(grad.full()).ravel()
        g = np.asarray(g.full()).ravel()
        data = np.asarray(jac.nonzeros(), dtype=float)
        if not (np.isfinite(f) and np.all(np.isfinite(grad))):
            raise SingularityError("non-finite objective or gradient")
        bad = ~np.isfinite(g)
        if np.any(bad) or not np.all(np.isfinite(data)):
            rows = np.flatnonzero(bad)
            if rows.size == 0:
                rows = self._jac_row[~np.isfinite(data)]
            knot = None if self.row_knots is None else int(self.row_knots[rows[0]])
            raise SingularityError(f"non-finite constraint in block '{self.block_of_row(int(rows[0]))}'", knot)
        J = sp.csc_matrix((data, self._jac_row, self._jac_colind), shape=(self.m, self.n))
        return Evaluation(f, grad, g, J)

    def objective(self, z: np.ndarray) -> float:
        return self.evaluate(z).f

    def constraints(self, z: np.ndarray) -> np.ndarray:
        return self.evaluate(z).g

    # ── feasibility measures ───────────────────────────────────────────────
    def row_violation(self, g: np.ndarray) -> np.ndarray:
        """Per-row distance of g to [lbg, ubg] (zero when satisfied)."""
        return np.maximum(np.maximum(self.lbg - g, g - self.ubg), 0.0)

    def max_violation(self, g: np.ndarray) -> float:
        return float(self.row_violation(g).max()) if self.m else 0.0

    def block_violation(self, g: np.ndarray) -> Dict[str, float]:
        v = self.row_violation(g)
        return {b.name: float(v[b.rows].max()) if b.size else 0.0 for b in self.blocks}

    def bound_violation(self, z: np.ndarray) -> float:
        z = self._check_point(z)
        if not self.n:
            return 0.0
        return float(np.maximum(np.maximum(self.lbx - z, z - self.ubx), 0.0).max())

    # ── external solver seam ───────────────────────────────────────────────
    def ipopt_solver(self, options: Optional[dict] = None) -> ca.Function:
        """CasADi/Ipopt solver on the same graph, built once (σ enters via ubg at call time)."""
        if self._ipopt is None:
            opts = {
                "ipopt.print_level": 0,
                "print_time": False,
                "ipopt.hessian_approximation": "limited-memory",
            }
            opts.update(options or {})
            self._ipopt = ca.nlpsol("solver", "ipopt", {"x": self._z, "f": self._f, "g": self._g}, opts)
        return self._ipopt


def empty_problem() -> NLPProblem:
    """Zero-variable, zero-row problem."""
    z = ca.SX.sym("z", 0)
    return NLPProblem.from_casadi(z, ca.SX(0.0), ca.SX(0, 1), [], [], [], [])


def stack_rows(parts: List[Tuple[str, List[ca.SX], List[float], List[float]]]):
    """
    Concatenate named groups of constraint expressions into (g, lbg, ubg, blocks).

    Each part is (name, expressions, lower bounds, upper bounds).
    """
    g, lbg, ubg, blocks = [], [], [], []
    start = 0
    for name, exprs, lo, hi in parts:
        size = sum(int(e.numel()) for e in exprs)
        if size != len(lo) or size != len(hi):
            raise LayoutError(f"block '{name}': {size} rows but {len(lo)}/{len(hi)} bounds")
        g += exprs
        lbg += list(lo)
        ubg += list(hi)
        blocks.append(RowBlock(name, start, start + size))
        start += size
    return (ca.vertcat(*g) if g else ca.SX(0, 1)), lbg, ubg, blocks
