"""Dense convex quadratic programming via a primal active-set method.

Solves   min 0.5 x'Hx + g'x   s.t.  A_eq x = b_eq,  A_in x <= b_in
for small problems (a few hundred variables) with positive-definite H.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["QPResult", "solve_qp_active_set", "QPError"]


class QPError(RuntimeError):
    pass


@dataclass
class QPResult:
    x: np.ndarray
    objective: float
    iterations: int
    active: list[int]


def _kkt_step(H, grad, A_act):
    """Solve the equality-constrained step: min 0.5 p'Hp + grad'p s.t. A_act p = 0."""
    n = H.shape[0]
    m = A_act.shape[0]
    if m == 0:
        p = np.linalg.solve(H, -grad)
        return p, np.empty(0)
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = H
    kkt[:n, n:] = A_act.T
    kkt[n:, :n] = A_act
    rhs = np.concatenate([-grad, np.zeros(m)])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    return sol[:n], sol[n:]


def solve_qp_active_set(H, g, A_eq=None, b_eq=None, A_in=None, b_in=None,
                        x0=None, tol: float = 1e-9, max_iter: int = 2000) -> QPResult:
    """Primal active-set QP solve from a feasible starting point x0.

    x0 must satisfy the constraints (within tol); use a phase-1 LP to produce
    one when no obvious feasible point exists.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    n = H.shape[0]
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    A_in = np.zeros((0, n)) if A_in is None else np.asarray(A_in, dtype=float)
    b_in = np.zeros(0) if b_in is None else np.asarray(b_in, dtype=float)

    if x0 is None:
        x = np.zeros(n)
    else:
        x = np.array(x0, dtype=float)

    feas_tol = max(tol, 1e-8)
    if A_eq.shape[0] and np.max(np.abs(A_eq @ x - b_eq)) > 1e-6:
        raise QPError("starting point violates equality constraints")
    if A_in.shape[0] and np.max(A_in @ x - b_in) > 1e-6:
        raise QPError("starting point violates inequality constraints")

    n_eq = A_eq.shape[0]
    # working set holds indices into A_in; equalities are always active
    working: list[int] = [i for i in range(A_in.shape[0])
                          if abs(A_in[i] @ x - b_in[i]) <= feas_tol]
    # keep the working set independent: drop rows that make the KKT singular
    for it in range(max_iter):
        grad = H @ x + g
        A_act = np.vstack([A_eq, A_in[working]]) if (n_eq or working) else np.zeros((0, n))
        p, lam = _kkt_step(H, grad, A_act)

        if np.linalg.norm(p, ord=np.inf) <= tol:
            # stationary on the working set; check inequality multipliers
            lam_in = lam[n_eq:]
            if lam_in.size == 0 or np.min(lam_in) >= -tol:
                obj = 0.5 * x @ H @ x + g @ x
                return QPResult(x=x, objective=float(obj), iterations=it, active=sorted(working))
            drop = int(np.argmin(lam_in))
            working.pop(drop)
            continue

        # step length to the nearest blocking constraint outside the working set
        alpha = 1.0
        block = -1
        if A_in.shape[0]:
            mask = np.ones(A_in.shape[0], dtype=bool)
            mask[working] = False
            denom = A_in[mask] @ p
            resid = b_in[mask] - A_in[mask] @ x
            idx_map = np.nonzero(mask)[0]
            pos = denom > tol
            if np.any(pos):
                ratios = resid[pos] / denom[pos]
                ratios = np.maximum(ratios, 0.0)
                j = int(np.argmin(ratios))
                if ratios[j] < alpha:
                    alpha = float(ratios[j])
                    block = int(idx_map[np.nonzero(pos)[0][j]])
        x = x + alpha * p
        if block >= 0 and alpha < 1.0:
            working.append(block)
    raise QPError(f"active-set solver failed to converge in {max_iter} iterations")
