"""Sequential quadratic programming for box + inequality constrained problems.

A damped-BFGS quadratic model of the Lagrangian, an elastic interior-point
QP for the step, and an l1 merit line search.  Built for the metric
optimization subproblems: tens to a few thousand variables, constraints of
the form ``F(x_j) <= omega`` that are piecewise smooth in the parameters.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DifferentiationFailure, NonFinite

__all__ = ["NlpProblem", "NlpSolution", "solve", "fd_gradient",
           "write_solver_log", "KKT_SATISFIED", "STEP_TOO_SMALL", "MAX_ITER",
           "INFEASIBLE"]

KKT_SATISFIED = "KktSatisfied"
STEP_TOO_SMALL = "StepTooSmall"
MAX_ITER = "MaxIter"
INFEASIBLE = "Infeasible"

FD_STEP_FLOOR = 1e-7
MERIT_DECREASE = 0.1
LINE_SEARCH_SHRINK = 0.5
MIN_STEP_FRACTION = 1e-12
# Merit differences below this relative level are float noise; the Armijo
# test treats them as ties so tiny end-game steps are not rejected.
MERIT_NOISE = 1e-14
# Residual violations above sqrt(tol) at a dead end are reported as
# infeasibility rather than a small step.
INFEASIBILITY_PROMOTION = 0.5


@dataclass
class NlpProblem:
    """Minimize ``objective`` under ``c_i(x) <= 0`` and box bounds.

    Gradients may be omitted (``None``), in which case central differences
    are used.  ``near_nonsmooth(x)``, when provided, marks points where the
    objective or constraints are close to a kink; the line search then
    starts from a shortened step.
    """

    dim: int
    objective: Callable[[np.ndarray], float]
    objective_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    inequality_constraints: Sequence[Tuple[Callable, Optional[Callable]]] = ()
    box: Optional[np.ndarray] = None
    start: Optional[np.ndarray] = None
    max_iter: int = 200
    tol_kkt: float = 1e-8
    tol_step: float = 1e-12
    near_nonsmooth: Optional[Callable[[np.ndarray], bool]] = None


@dataclass
class NlpSolution:
    x: np.ndarray
    objective_value: float
    status: str
    constraint_violation: float
    iterations: int
    kkt_residual: float = np.inf
    merit_history: List[float] = field(default_factory=list)
    log: List[tuple] = field(default_factory=list)


def fd_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray,
                step_rule: Optional[Callable[[np.ndarray, int], float]]
                = None) -> np.ndarray:
    """Central-difference gradient with per-coordinate steps.

    The default step is ``max(1e-7, 1e-7 * |x_i|)``.

    Raises
    ------
    NonFinite
        If a function value is not finite.
    """
    x = np.asarray(x, dtype=float)
    grad = np.empty(len(x))
    for i in range(len(x)):
        h = (step_rule(x, i) if step_rule is not None
             else max(FD_STEP_FLOOR, FD_STEP_FLOOR * abs(x[i])))
        e = np.zeros(len(x))
        e[i] = h
        up = fn(x + e)
        dn = fn(x - e)
        if not (np.isfinite(up) and np.isfinite(dn)):
            raise NonFinite(f"non-finite function value near coordinate {i}")
        grad[i] = (up - dn) / (2.0 * h)
    return grad


def _gradient_of(fn, grad_fn, x):
    g = grad_fn(x) if grad_fn is not None else fd_gradient(fn, x)
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise DifferentiationFailure("gradient returned non-finite values")
    return g


def _solve_qp(bmat, g, gmat, h, rho, max_iter=60):
    """Elastic inequality QP by a primal-dual interior point method.

    Minimizes ``0.5 d'Bd + g'd + rho * t`` subject to ``Gd <= h + t`` and
    ``t >= 0``; the elastic ``t`` keeps the subproblem feasible even when
    the linearized constraints are not.  Returns ``(d, t, z)`` with ``z``
    the multipliers of the ``Gd <= h + t`` rows.
    """
    n = len(g)
    m = len(h)
    if m == 0:
        return np.linalg.solve(bmat, -g), 0.0, np.zeros(0)
    gt = np.hstack([gmat, -np.ones((m, 1))])
    gt = np.vstack([gt, np.zeros((1, n + 1))])
    gt[-1, -1] = -1.0
    ht = np.hstack([h, 0.0])
    bt = np.zeros((n + 1, n + 1))
    bt[:n, :n] = bmat
    bt[n, n] = 1e-8
    ct = np.hstack([g, rho])

    t0 = max(0.0, -float(h.min())) + 1.0
    u = np.zeros(n + 1)
    u[-1] = t0
    s = ht - gt @ u
    z = np.ones(m + 1)

    for _ in range(max_iter):
        r_d = bt @ u + ct + gt.T @ z
        r_p = gt @ u + s - ht
        mu = float(s @ z) / (m + 1)
        if max(np.abs(r_d).max(), np.abs(r_p).max()) < 1e-11 and mu < 1e-12:
            break
        sigma_mu = 0.15 * mu
        r_c = s * z - sigma_mu
        d_sz = z / s
        kkt = bt + gt.T @ (d_sz[:, None] * gt)
        rhs = -r_d - gt.T @ ((-r_c + z * r_p) / s)
        try:
            du = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            du = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        ds = -r_p - gt @ du
        dz = (-r_c - z * ds) / s
        alpha = 1.0
        neg_s = ds < 0
        if np.any(neg_s):
            alpha = min(alpha, 0.995 * float(np.min(-s[neg_s] / ds[neg_s])))
        neg_z = dz < 0
        if np.any(neg_z):
            alpha = min(alpha, 0.995 * float(np.min(-z[neg_z] / dz[neg_z])))
        u += alpha * du
        s += alpha * ds
        z += alpha * dz
    return u[:n], float(u[n]), z[:m]


def _evaluate_constraints(constraints, x):
    return np.array([float(fn(x)) for fn, _ in constraints])


def _constraint_jacobian(constraints, x):
    if not constraints:
        return np.zeros((0, len(x)))
    return np.stack([_gradient_of(fn, grad, x) for fn, grad in constraints])


def _merit(f, c, nu):
    return f + nu * float(np.clip(c, 0.0, None).sum())


def _stationarity_residual(g, gmat, slack, z):
    """Sharpest available KKT stationarity certificate at the current point.

    The interior-point multipliers inherit the subproblem's tolerance, so
    re-fitting multipliers by least squares over the numerically active
    rows (dropping negative ones one at a time) usually certifies a much
    smaller residual.  Returns the smaller of the raw and polished values.
    """
    best = float(np.abs(g + gmat.T @ z).max()) if len(z) \
        else float(np.abs(g).max())
    if gmat.shape[0] == 0:
        return best
    z_scale = max(float(z.max()), 1.0)
    slack_scale = 1.0 + float(np.abs(slack).max())
    idx = np.flatnonzero((slack <= 1e-7 * slack_scale)
                         | (z >= 1e-6 * z_scale))
    for _ in range(min(len(idx), 40) + 1):
        if len(idx) == 0:
            return min(best, float(np.abs(g).max()))
        lam, *_ = np.linalg.lstsq(gmat[idx].T, -g, rcond=None)
        if np.all(lam >= -1e-12):
            lam = np.clip(lam, 0.0, None)
            return min(best, float(np.abs(g + gmat[idx].T @ lam).max()))
        idx = np.delete(idx, int(np.argmin(lam)))
    return best


def solve(p: NlpProblem) -> NlpSolution:
    """SQP iteration to an approximate KKT point.

    Each step minimizes a damped-BFGS quadratic model subject to the
    linearized constraints and the box (solved as an elastic interior-point
    QP), then backtracks on the l1 merit function.  Deterministic.

    Raises
    ------
    DifferentiationFailure
        If any gradient evaluation returns non-finite values.
    """
    n = p.dim
    box = (np.asarray(p.box, dtype=float) if p.box is not None
           else np.column_stack([np.full(n, -np.inf), np.full(n, np.inf)]))
    if np.any(box[:, 0] > box[:, 1]):
        raise ValueError("box has lo > hi")
    x = (np.zeros(n) if p.start is None
         else np.asarray(p.start, dtype=float).copy())
    x = np.clip(x, box[:, 0], box[:, 1])
    constraints = list(p.inequality_constraints)

    f = float(p.objective(x))
    g = _gradient_of(p.objective, p.objective_grad, x)
    c = _evaluate_constraints(constraints, x)
    amat = _constraint_jacobian(constraints, x)

    bmat = np.eye(n)
    nu = 1.0
    status = MAX_ITER
    kkt_res = np.inf
    merit_history = []
    log = []

    for it in range(1, p.max_iter + 1):
        # QP rows: linearized constraints plus the two box sides.
        finite_hi = np.isfinite(box[:, 1])
        finite_lo = np.isfinite(box[:, 0])
        rows = [amat,
                np.eye(n)[finite_hi],
                -np.eye(n)[finite_lo]]
        rhs = [-c, (box[:, 1] - x)[finite_hi], (x - box[:, 0])[finite_lo]]
        gmat = np.vstack(rows)
        h = np.hstack(rhs)
        rho = 10.0 * (nu + float(np.abs(g).max()) + 1.0)
        d, elastic, z = _solve_qp(bmat, g, gmat, h, rho)

        violation = float(np.clip(c, 0.0, None).max()) if len(c) else 0.0
        kkt_res = float(np.abs(g + gmat.T @ z).max()) if len(z) \
            else float(np.abs(g).max())
        scale = 1.0 + float(np.abs(g).max())
        # Polish only near convergence: the refit costs a dense lstsq.
        if kkt_res <= 1e4 * p.tol_kkt * scale:
            kkt_res = min(kkt_res, _stationarity_residual(g, gmat, h, z))
        if kkt_res <= p.tol_kkt * scale and violation <= p.tol_kkt:
            status = KKT_SATISFIED
            log.append((it, f, violation, 0.0))
            break

        z_cons = z[:len(c)] if len(c) else np.zeros(0)
        nu = max(nu, 2.0 * float(z_cons.max()) if len(z_cons) else nu)

        phi0 = _merit(f, c, nu)
        deriv = float(g @ d) - nu * float(np.clip(c, 0.0, None).sum())
        alpha = 1.0
        if p.near_nonsmooth is not None and p.near_nonsmooth(x):
            alpha = 0.25
        accepted = False
        while alpha * float(np.abs(d).max()) > MIN_STEP_FRACTION:
            x_new = np.clip(x + alpha * d, box[:, 0], box[:, 1])
            f_new = float(p.objective(x_new))
            c_new = _evaluate_constraints(constraints, x_new)
            if np.isfinite(f_new) and np.all(np.isfinite(c_new)):
                phi_new = _merit(f_new, c_new, nu)
                bound = phi0 + MERIT_DECREASE * alpha * min(deriv, 0.0) \
                    + MERIT_NOISE * (1.0 + abs(phi0))
                if phi_new <= bound:
                    accepted = True
                    break
            alpha *= LINE_SEARCH_SHRINK
        step_norm = alpha * float(np.abs(d).max()) if accepted else 0.0
        log.append((it, f, violation, step_norm))

        if not accepted:
            status = (INFEASIBLE if violation
                      > p.tol_kkt ** INFEASIBILITY_PROMOTION
                      else STEP_TOO_SMALL)
            break
        # Per accepted step: the merit before and after, at that step's nu.
        merit_history.append((phi0, _merit(f_new, c_new, nu)))

        g_new = _gradient_of(p.objective, p.objective_grad, x_new)
        amat_new = _constraint_jacobian(constraints, x_new)
        # Powell-damped BFGS on the Lagrangian gradient difference.
        s_step = x_new - x
        grad_l_new = g_new + (amat_new.T @ z_cons if len(z_cons) else 0.0)
        grad_l_old = g + (amat.T @ z_cons if len(z_cons) else 0.0)
        y = grad_l_new - grad_l_old
        bs = bmat @ s_step
        sbs = float(s_step @ bs)
        sy = float(s_step @ y)
        if sbs > 0.0:
            if sy < 0.2 * sbs:
                theta = 0.8 * sbs / (sbs - sy)
                y = theta * y + (1.0 - theta) * bs
                sy = float(s_step @ y)
            if sy > 1e-14 * sbs:
                bmat = (bmat - np.outer(bs, bs) / sbs
                        + np.outer(y, y) / sy)

        x, f, g, c, amat = x_new, f_new, g_new, c_new, amat_new

        if step_norm <= p.tol_step * (1.0 + float(np.abs(x).max())):
            violation = float(np.clip(c, 0.0, None).max()) if len(c) else 0.0
            status = (INFEASIBLE if violation
                      > p.tol_kkt ** INFEASIBILITY_PROMOTION
                      else STEP_TOO_SMALL)
            break

    violation = float(np.clip(c, 0.0, None).max()) if len(c) else 0.0
    if status == MAX_ITER and violation > p.tol_kkt ** \
            INFEASIBILITY_PROMOTION:
        status = INFEASIBLE
    return NlpSolution(x=x, objective_value=f, status=status,
                       constraint_violation=violation,
                       iterations=len(log), kkt_residual=kkt_res,
                       merit_history=merit_history, log=log)


def write_solver_log(solution: NlpSolution, path) -> None:
    """CSV ``iter,objective,violation,step_norm`` of the solver trace."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "objective", "violation", "step_norm"])
        for row in solution.log:
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
