"""Dense primal active-set solver for box-constrained quadratic programs.

Solves  min_z  0.5 z^T H z + g^T z   s.t.  lo <= z <= hi
with H symmetric positive definite.  Problems here are tiny (dimension
3*M = 9 for the default horizon), so a dense active-set method resolves the
active bounds exactly with no external solver.  Never raises on numerical
trouble: returns the best feasible iterate with ``converged=False``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class BoxQpResult:
    z: np.ndarray
    iterations: int
    converged: bool
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def solve_box_qp(
    h: np.ndarray,
    g: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    z0: np.ndarray | None = None,
    max_iter: int | None = None,
    tol: float = 1e-10,
) -> BoxQpResult:
    h = np.asarray(h, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64).ravel()
    lo = np.asarray(lo, dtype=np.float64).ravel()
    hi = np.asarray(hi, dtype=np.float64).ravel()
    n = g.size
    if max_iter is None:
        max_iter = 10 * n + 10

    z = np.clip(np.zeros(n) if z0 is None else np.asarray(z0, np.float64).ravel(), lo, hi)
    # Working set: -1 fixed at lower bound, +1 at upper, 0 free.
    work = np.zeros(n, dtype=np.int8)
    work[z <= lo + tol] = -1
    work[z >= hi - tol] = 1
    fixed_equal = hi - lo <= tol  # degenerate box: variable is a constant
    work[fixed_equal] = -1
    z[fixed_equal] = lo[fixed_equal]

    iterations = 0
    while iterations < max_iter:
        iterations += 1
        free = work == 0
        if np.any(free):
            idx = np.flatnonzero(free)
            rhs = -(g[idx] + h[np.ix_(idx, ~free)] @ z[~free])
            try:
                z_free = np.linalg.solve(h[np.ix_(idx, idx)], rhs)
            except np.linalg.LinAlgError:
                return BoxQpResult(z=z, iterations=iterations, converged=False, active=work != 0)
            step = z_free - z[idx]
            # Ratio test: walk toward the subproblem optimum until a free
            # variable hits its bound.
            alpha = 1.0
            blocker = -1
            blocker_side = 0
            for j, i in enumerate(idx):
                if step[j] > tol:
                    a = (hi[i] - z[i]) / step[j]
                    if a < alpha:
                        alpha, blocker, blocker_side = a, i, 1
                elif step[j] < -tol:
                    a = (lo[i] - z[i]) / step[j]
                    if a < alpha:
                        alpha, blocker, blocker_side = a, i, -1
            z[idx] = z[idx] + max(alpha, 0.0) * step
            if blocker >= 0:
                z[blocker] = hi[blocker] if blocker_side == 1 else lo[blocker]
                work[blocker] = blocker_side
                continue
            z[idx] = z_free  # full step taken: exact subproblem optimum
        # All free variables optimal; check multipliers of the active bounds.
        grad = h @ z + g
        worst = -tol
        drop = -1
        for i in np.flatnonzero(work != 0):
            if fixed_equal[i]:
                continue
            lam = grad[i] if work[i] == -1 else -grad[i]
            if lam < worst:
                worst = lam
                drop = i
        if drop < 0:
            return BoxQpResult(z=z, iterations=iterations, converged=True, active=work != 0)
        work[drop] = 0
    return BoxQpResult(z=z, iterations=iterations, converged=False, active=work != 0)
