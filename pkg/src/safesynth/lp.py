"""Dense two-phase active-set solver for tall inequality-form linear programs.

Solves   min cost.z   s.t.  G z <= h   for problems with a handful of
variables (tens) and very many rows (1e5..1e6).  The working set of at most
nvars rows is maintained as the basis of the dual standard-form program

    min h.y   s.t.  G' y = -cost,   y >= 0,

so each iteration prices every row with a single dense mat-vec and
refactorises only an nvars x nvars basis.  At optimality the dual basis IS
the active set of the original program and the simplex multipliers of that
basis are its solution, which this module re-solves from the final working
set so the returned point satisfies its active rows to machine precision.

Pivoting is Dantzig's rule with first-index tie-breaks; while the iteration
stalls on degenerate vertices it switches to Bland's rule, which cannot
cycle, and reverts once a positive step is taken.  Everything is
deterministic for identical input.  Variable columns are equilibrated by
powers of two (exact in floating point) so monomial columns of wildly
different magnitude do not poison the pivot tolerances.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import SolverError


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration-limit"


@dataclass
class DenseLpResult:
    status: LpStatus
    z: np.ndarray | None
    objective: float | None
    basis_rows: np.ndarray
    multipliers: np.ndarray
    iterations: int
    degenerate_steps: int
    bland_iterations: int
    max_violation: float
    zero_multipliers: int


def _pow2_column_scale(G: np.ndarray) -> np.ndarray:
    col_max = np.max(np.abs(G), axis=0)
    col_max[col_max == 0.0] = 1.0
    return 2.0 ** (-np.round(np.log2(col_max)))


class _DualSimplex:
    """Revised simplex on the dual; shared by both phases."""

    def __init__(self, G, h, b, opt_tol, pivot_tol, stall_limit):
        self.G = G
        self.h = h
        self.b = b
        self.m, self.nv = G.shape
        self.opt_tol = opt_tol
        self.pivot_tol = pivot_tol
        self.stall_limit = stall_limit
        self.art_sign = np.where(b >= 0.0, 1.0, -1.0)
        self.basis = np.arange(self.m, self.m + self.nv)
        self.in_basis = np.zeros(self.m, dtype=bool)
        self.iterations = 0
        self.degenerate_steps = 0
        self.bland_iterations = 0
        self._bland = False
        self._stall = 0

    def _basis_matrix(self) -> np.ndarray:
        A = np.zeros((self.nv, self.nv))
        for pos, col in enumerate(self.basis):
            if col < self.m:
                A[:, pos] = self.G[col]
            else:
                A[col - self.m, pos] = self.art_sign[col - self.m]
        return A

    def _basis_costs(self, phase: int) -> np.ndarray:
        if phase == 1:
            return (self.basis >= self.m).astype(float)
        costs = np.zeros(self.nv)
        real = self.basis < self.m
        costs[real] = self.h[self.basis[real]]
        return costs

    def run_phase(self, phase: int, max_iter: int) -> tuple[str, np.ndarray, np.ndarray]:
        """Returns (outcome, pi, x_B); outcome in {"optimal", "unbounded"}."""
        while True:
            if self.iterations >= max_iter:
                raise SolverError(
                    f"iteration limit {max_iter} reached in phase {phase}",
                    status=LpStatus.ITERATION_LIMIT.value,
                )
            A_B = self._basis_matrix()
            try:
                x_B = np.linalg.solve(A_B, self.b)
                c_B = self._basis_costs(phase)
                pi = np.linalg.solve(A_B.T, c_B)
            except np.linalg.LinAlgError as exc:
                raise SolverError(f"singular working set in phase {phase}: {exc}",
                                  status=LpStatus.ITERATION_LIMIT.value) from exc
            base_cost = np.zeros(self.m) if phase == 1 else self.h
            reduced = base_cost - self.G @ pi
            reduced[self.in_basis] = np.inf
            if self._bland:
                eligible = np.flatnonzero(reduced < -self.opt_tol)
                if eligible.size == 0:
                    return "optimal", pi, x_B
                enter = int(eligible[0])
                self.bland_iterations += 1
            else:
                enter = int(np.argmin(reduced))
                if reduced[enter] >= -self.opt_tol:
                    return "optimal", pi, x_B
            w = np.linalg.solve(A_B, self.G[enter])
            leave_pos, theta = self._choose_leaving(x_B, w, phase)
            if leave_pos is None:
                return "unbounded", pi, x_B
            left = self.basis[leave_pos]
            if left < self.m:
                self.in_basis[left] = False
            self.basis[leave_pos] = enter
            self.in_basis[enter] = True
            self.iterations += 1
            if theta <= 1e-11:
                self.degenerate_steps += 1
                self._stall += 1
                if self._stall >= self.stall_limit:
                    self._bland = True
            else:
                self._stall = 0
                self._bland = False

    def _choose_leaving(self, x_B, w, phase):
        art = self.basis >= self.m
        xb = np.maximum(x_B, 0.0)
        if phase == 2:
            # Zero-level artificials must not change value: force them out
            # of the working set before taking any step.
            forced = np.flatnonzero(art & (np.abs(w) > self.pivot_tol) & (xb <= 1e-7))
            if forced.size:
                pick = forced[int(np.argmax(np.abs(w[forced])))]
                return int(pick), 0.0
        candidates = np.flatnonzero(w > self.pivot_tol)
        if candidates.size == 0:
            return None, 0.0
        ratios = xb[candidates] / w[candidates]
        theta = float(np.min(ratios))
        near = candidates[ratios <= theta + 1e-9 * (1.0 + abs(theta))]
        if self._bland:
            pick = near[int(np.argmin(self.basis[near]))]
        else:
            pick = near[int(np.argmax(w[near]))]
        return int(pick), theta


def solve_dense_lp(
    cost: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    opt_tol: float = 1e-9,
    pivot_tol: float = 1e-11,
    feas_tol: float = 1e-8,
    max_iter: int = 20000,
    stall_limit: int = 64,
    _allow_probe: bool = True,
) -> DenseLpResult:
    """Solve min cost.z s.t. G z <= h; see module docstring for the method."""
    G = np.ascontiguousarray(np.asarray(G, dtype=float))
    h = np.asarray(h, dtype=float).ravel()
    cost = np.asarray(cost, dtype=float).ravel()
    m, nv = G.shape
    if h.shape != (m,) or cost.shape != (nv,):
        raise SolverError(f"shape mismatch: G {G.shape}, h {h.shape}, cost {cost.shape}")
    if m < 1:
        raise SolverError("problem has no rows")

    scale = _pow2_column_scale(G)
    Gs = G * scale[None, :]
    b = -(cost * scale)

    engine = _DualSimplex(Gs, h, b, opt_tol, pivot_tol, stall_limit)
    outcome, pi, x_B = engine.run_phase(1, max_iter)
    if outcome == "unbounded":
        # Phase 1 minimises a sum of non-negative artificials; an unbounded
        # ray here can only be numerical noise.
        raise SolverError("phase 1 reported an unbounded ray",
                          status=LpStatus.ITERATION_LIMIT.value)
    art_level = float(np.sum(np.maximum(x_B[engine.basis >= m], 0.0)))
    if art_level > 1e-8 * (1.0 + float(np.max(np.abs(b)))):
        # Dual infeasible: the original program is unbounded or infeasible.
        if _allow_probe and _primal_feasible(G, h, feas_tol, opt_tol, pivot_tol,
                                             max_iter, stall_limit):
            return _failure(LpStatus.UNBOUNDED, engine)
        return _failure(LpStatus.INFEASIBLE if _allow_probe else LpStatus.UNBOUNDED, engine)

    outcome, pi, x_B = engine.run_phase(2, max_iter)
    if outcome == "unbounded":
        return _failure(LpStatus.INFEASIBLE, engine)

    z = pi * scale
    resid = G @ z - h
    max_violation = float(np.max(resid)) if m else 0.0
    real = engine.basis < m
    basis_rows = np.sort(engine.basis[real])
    order = np.argsort(engine.basis[real])
    multipliers = np.maximum(x_B[real][order], 0.0)
    zero_mult = int(np.sum(multipliers <= opt_tol))
    if max_violation > feas_tol:
        raise SolverError(
            f"optimal basis violates feasibility tolerance: {max_violation:.3e} > {feas_tol:.0e}",
            status=LpStatus.ITERATION_LIMIT.value,
        )
    return DenseLpResult(
        status=LpStatus.OPTIMAL,
        z=z,
        objective=float(cost @ z),
        basis_rows=basis_rows,
        multipliers=multipliers,
        iterations=engine.iterations,
        degenerate_steps=engine.degenerate_steps,
        bland_iterations=engine.bland_iterations,
        max_violation=max(max_violation, 0.0),
        zero_multipliers=zero_mult,
    )


def _failure(status: LpStatus, engine: _DualSimplex) -> DenseLpResult:
    return DenseLpResult(
        status=status,
        z=None,
        objective=None,
        basis_rows=np.empty(0, dtype=int),
        multipliers=np.empty(0),
        iterations=engine.iterations,
        degenerate_steps=engine.degenerate_steps,
        bland_iterations=engine.bland_iterations,
        max_violation=math.inf,
        zero_multipliers=0,
    )


def _primal_feasible(G, h, feas_tol, opt_tol, pivot_tol, max_iter, stall_limit) -> bool:
    """Distinguish unbounded from infeasible: min t s.t. Gz - t <= h, t >= -1.

    Always feasible and bounded, so the recursive solve cannot probe again.
    """
    m, nv = G.shape
    G_aux = np.zeros((m + 1, nv + 1))
    G_aux[:m, :nv] = G
    G_aux[:m, nv] = -1.0
    G_aux[m, nv] = -1.0
    h_aux = np.concatenate([h, [1.0]])
    cost_aux = np.zeros(nv + 1)
    cost_aux[nv] = 1.0
    res = solve_dense_lp(
        cost_aux, G_aux, h_aux,
        opt_tol=opt_tol, pivot_tol=pivot_tol, feas_tol=feas_tol,
        max_iter=max_iter, stall_limit=stall_limit, _allow_probe=False,
    )
    if res.status != LpStatus.OPTIMAL or res.objective is None:
        raise SolverError("feasibility probe failed to solve",
                          status=LpStatus.ITERATION_LIMIT.value)
    return res.objective <= feas_tol
