"""The two benchmark systems and generic trajectory machinery.

* Henon-type map ``(x, y) -> (a + b y - x^2, x)`` with per-step Jacobians;
* a Rabinovich-type three-dimensional flow, in original coordinates and in a
  canonical rescaling that confines the attractor to ``[-1, 1]^3``;
* equilibrium analysis (eigenvalues, local Lyapunov dimension);
* flow + variational integration and Newton refinement of periodic orbits.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import ode
from .errors import (ComplexEquilibria, NoConvergence, NoRealFixedPoint,
                     Overflow, SingularJacobian)

# Coordinates whose magnitude exceeds this are treated as diverged iterates.
MAP_OVERFLOW_LIMIT = 1e8
# Newton refinement of periodic orbits stops at this closure residual.
ORBIT_RESIDUAL_TOL = 1e-10
ORBIT_MAX_NEWTON = 50


# ---------------------------------------------------------------------------
# Henon-type map
# ---------------------------------------------------------------------------

def henon_step(points: np.ndarray, a: float = 1.4, b: float = 0.3,
               steps: int = 1):
    """Apply ``steps`` iterations of ``(x, y) -> (a + b y - x^2, x)``.

    Parameters
    ----------
    points : ndarray, shape (..., 2)

    Returns
    -------
    images : ndarray, shape (..., 2)
    jacobians : ndarray, shape (..., 2, 2)
        Chain-rule product of the per-step Jacobians ``[[-2x, b], [1, 0]]``.

    Raises
    ------
    Overflow
        If any coordinate magnitude exceeds ``MAP_OVERFLOW_LIMIT``.
    """
    pts = np.array(points, dtype=float)
    if pts.shape[-1] != 2:
        raise ValueError("points must have a trailing dimension of 2")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    jac = np.zeros(pts.shape[:-1] + (2, 2))
    jac[..., 0, 0] = 1.0
    jac[..., 1, 1] = 1.0
    for _ in range(steps):
        x = pts[..., 0]
        y = pts[..., 1]
        step_jac = np.empty_like(jac)
        step_jac[..., 0, 0] = -2.0 * x
        step_jac[..., 0, 1] = b
        step_jac[..., 1, 0] = 1.0
        step_jac[..., 1, 1] = 0.0
        jac = step_jac @ jac
        new_x = a + b * y - x * x
        pts = np.stack([new_x, x], axis=-1)
        if np.abs(pts).max() > MAP_OVERFLOW_LIMIT:
            raise Overflow("map iterate left the admissible range")
    return pts, jac


def henon_equilibrium_analysis(a: float = 1.4, b: float = 0.3) -> dict:
    """Fixed points of the map with eigenvalues and local dimension bounds.

    The fixed points are ``(x, x)`` with
    ``x = ((b - 1) +/- sqrt((b - 1)^2 + 4a)) / 2``.  At the positive one the
    largest exponent is ``ln(x + sqrt(x^2 + b))`` and the local Lyapunov
    dimension is ``1 + lam1 / (lam1 - ln b)``.

    Raises
    ------
    NoRealFixedPoint
        If ``(b - 1)^2 + 4a < 0``.
    """
    disc = (b - 1.0) ** 2 + 4.0 * a
    if disc < 0.0:
        raise NoRealFixedPoint("fixed-point discriminant is negative")
    root = np.sqrt(disc)
    x_plus = ((b - 1.0) + root) / 2.0
    x_minus = ((b - 1.0) - root) / 2.0

    out = {"fixed_points": [], "a": a, "b": b}
    for x in (x_plus, x_minus):
        jac = np.array([[-2.0 * x, b], [1.0, 0.0]])
        mu = np.linalg.eigvals(jac)
        order = np.argsort(-np.abs(mu))
        mu = mu[order]
        lam1 = float(np.log(np.abs(mu[0])))
        lam2 = float(np.log(np.abs(mu[1])))
        out["fixed_points"].append({
            "point": np.array([x, x]),
            "multipliers": mu,
            "exponents": np.array([lam1, lam2]),
            "dimension": lyapunov_dimension_from_exponents([lam1, lam2]),
        })
    top = out["fixed_points"][0]
    out["lambda1"] = top["exponents"][0]
    out["dimension"] = top["dimension"]
    return out


def henon_trapping_quadrilateral(a: float = 1.4, b: float = 0.3) -> np.ndarray:
    """Vertices of the forward-invariant quadrilateral used to seed coverings.

    Returned in order ``A, B, C, D`` (a convex quadrilateral for the default
    parameters).
    """
    return np.array([
        [-1.33 * a, 0.42 * a / b],
        [1.32 * a, 0.133 * a / b],
        [1.245 * a, -0.14 * a / b],
        [-1.06 * a, -0.5 * a / b],
    ])


# ---------------------------------------------------------------------------
# generic vector fields
# ---------------------------------------------------------------------------

@dataclass
class VectorField:
    """Autonomous vector field with an analytic Jacobian.

    ``rhs`` maps ``(..., n) -> (..., n)`` and ``jacobian`` maps
    ``(..., n) -> (..., n, n)``; both must be batch-safe.
    """

    rhs: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    dim: int
    name: str = ""
    params: dict = field(default_factory=dict)

    def __call__(self, q: np.ndarray) -> np.ndarray:
        return self.rhs(q)


def rabinovich_vector_field(sigma: float = 2.5, r: float = 1.25,
                            b: float = 1.0, a: float = -40.0,
                            rescaled: bool = True) -> VectorField:
    """Three-mode resonant-interaction flow.

    In original coordinates::

        dx/dt = -sigma (x - y) - a y z
        dy/dt = r x - y - x z
        dz/dt = -b z + x y

    With ``rescaled=True`` the canonical change of variables
    ``X = x / 20, Y = y / 2, Z = (z - 3/2) / (5/2)`` is applied, giving::

        dX/dt = -sigma X + (sigma/10 - 0.15 a) Y - (a/4) Y Z
        dY/dt = (10 r - 15) X - Y - 25 X Z
        dZ/dt = -b Z + 16 X Y - 0.6 b
    """
    if rescaled:
        c1 = sigma / 10.0 - 0.15 * a
        c2 = -0.25 * a
        c3 = 10.0 * r - 15.0

        def rhs(q):
            q = np.asarray(q, dtype=float)
            x, y, z = q[..., 0], q[..., 1], q[..., 2]
            return np.stack([
                -sigma * x + c1 * y + c2 * y * z,
                c3 * x - y - 25.0 * x * z,
                -b * z + 16.0 * x * y - 0.6 * b,
            ], axis=-1)

        def jacobian(q):
            q = np.asarray(q, dtype=float)
            x, y, z = q[..., 0], q[..., 1], q[..., 2]
            j = np.empty(q.shape[:-1] + (3, 3))
            j[..., 0, 0] = -sigma
            j[..., 0, 1] = c1 + c2 * z
            j[..., 0, 2] = c2 * y
            j[..., 1, 0] = c3 - 25.0 * z
            j[..., 1, 1] = -1.0
            j[..., 1, 2] = -25.0 * x
            j[..., 2, 0] = 16.0 * y
            j[..., 2, 1] = 16.0 * x
            j[..., 2, 2] = -b
            return j
    else:
        def rhs(q):
            q = np.asarray(q, dtype=float)
            x, y, z = q[..., 0], q[..., 1], q[..., 2]
            return np.stack([
                -sigma * (x - y) - a * y * z,
                r * x - y - x * z,
                -b * z + x * y,
            ], axis=-1)

        def jacobian(q):
            q = np.asarray(q, dtype=float)
            x, y, z = q[..., 0], q[..., 1], q[..., 2]
            j = np.empty(q.shape[:-1] + (3, 3))
            j[..., 0, 0] = -sigma
            j[..., 0, 1] = sigma - a * z
            j[..., 0, 2] = -a * y
            j[..., 1, 0] = r - z
            j[..., 1, 1] = -1.0
            j[..., 1, 2] = -x
            j[..., 2, 0] = y
            j[..., 2, 1] = x
            j[..., 2, 2] = -b
            return j

    return VectorField(rhs=rhs, jacobian=jacobian, dim=3,
                       name="rabinovich" + ("_rescaled" if rescaled else ""),
                       params={"sigma": sigma, "r": r, "b": b, "a": a,
                               "rescaled": rescaled})


def rescale_rabinovich_point(q_original: np.ndarray) -> np.ndarray:
    """Map original coordinates to the rescaled chart."""
    q = np.asarray(q_original, dtype=float)
    return np.stack([q[..., 0] / 20.0, q[..., 1] / 2.0,
                     (q[..., 2] - 1.5) / 2.5], axis=-1)


def equilibria_rabinovich(sigma: float = 2.5, r: float = 1.25, b: float = 1.0,
                          a: float = -40.0, rescaled: bool = True) -> list:
    """Equilibria of the flow with spectra and local Lyapunov dimensions.

    Returns a list of dicts (origin branch first, then the symmetric pair),
    each with keys ``point`` (in the requested chart), ``eigenvalues``,
    ``lambda1`` and ``dimension``.

    Raises
    ------
    ComplexEquilibria
        If the nontrivial branch is complex for these parameters.
    """
    field_orig = rabinovich_vector_field(sigma, r, b, a, rescaled=False)

    q0 = np.zeros(3)
    coefa = -sigma
    coefb = b * sigma * (r - 2.0) - a * b * r * r
    coefc = b * b * sigma * (r - 1.0)
    disc = coefb * coefb - 4.0 * coefa * coefc
    if disc < 0.0:
        raise ComplexEquilibria("equilibrium quadratic has complex roots")
    theta = (-coefb - np.sqrt(disc)) / (2.0 * coefa)
    if theta <= 0.0:
        raise ComplexEquilibria("equilibrium branch requires theta > 0")
    root = np.sqrt(theta)
    q_plus = np.array([root, root * r * b / (theta + b),
                       r * theta / (theta + b)])
    q_minus = np.array([-q_plus[0], -q_plus[1], q_plus[2]])

    out = []
    for q in (q0, q_plus, q_minus):
        eig = np.linalg.eigvals(field_orig.jacobian(q))
        eig = eig[np.argsort(-eig.real)]
        lams = eig.real
        out.append({
            "point": rescale_rabinovich_point(q) if rescaled else q,
            "eigenvalues": eig,
            "lambda1": float(lams[0]),
            "dimension": lyapunov_dimension_from_exponents(lams),
        })
    return out


def lyapunov_dimension_from_exponents(exponents) -> float:
    """Kaplan-Yorke interpolation of an ordered exponent spectrum."""
    lams = np.sort(np.asarray(exponents, dtype=float))[::-1]
    if lams[0] < 0.0:
        return 0.0
    csum = np.cumsum(lams)
    j = int(np.max(np.nonzero(csum >= 0.0)[0]))
    if j == len(lams) - 1:
        return float(len(lams))
    return float(j + 1 + csum[j] / abs(lams[j + 1]))


# ---------------------------------------------------------------------------
# flow + variational integration
# ---------------------------------------------------------------------------

def integrate_with_variational(vfield: VectorField, q: np.ndarray, t_final: float,
                               atol: float = 1e-8,
                               t_eval: Optional[np.ndarray] = None):
    """Integrate the flow and its matrix variational equation.

    Returns ``(q_T, Phi_T)`` where ``Phi_T`` is the derivative of the
    time-``t_final`` flow map at ``q``; with ``t_eval`` a third element holds
    the ``(len(t_eval), n + n^2)`` packed samples.
    """
    n = vfield.dim
    y0 = np.concatenate([np.asarray(q, dtype=float), np.eye(n).ravel()])

    def rhs(t, y):
        pt = y[:n]
        phi = y[n:].reshape(n, n)
        return np.concatenate([vfield.rhs(pt),
                               (vfield.jacobian(pt) @ phi).ravel()])

    y1, samples = ode.integrate(rhs, y0, 0.0, t_final, atol=atol,
                                t_eval=t_eval)
    if t_eval is not None:
        return y1[:n], y1[n:].reshape(n, n), samples
    return y1[:n], y1[n:].reshape(n, n)


def integrate_with_variational_batch(vfield: VectorField, qs: np.ndarray,
                                     horizon, atol: float = 1e-8):
    """Batched flow + variational integration with per-element step control.

    Parameters
    ----------
    qs : ndarray, shape (N, n)
    horizon : float or (N,) ndarray

    Returns
    -------
    points : ndarray, shape (N, n)
    jacobians : ndarray, shape (N, n, n)
    """
    qs = np.asarray(qs, dtype=float)
    n = vfield.dim
    count = qs.shape[0]
    y0 = np.empty((count, n + n * n))
    y0[:, :n] = qs
    y0[:, n:] = np.eye(n).ravel()

    def rhs(t, y):
        pts = y[:, :n]
        phi = y[:, n:].reshape(-1, n, n)
        out = np.empty_like(y)
        out[:, :n] = vfield.rhs(pts)
        out[:, n:] = (vfield.jacobian(pts) @ phi).reshape(-1, n * n)
        return out

    y1 = ode.integrate_batch(rhs, y0, horizon, atol=atol)
    return y1[:, :n], y1[:, n:].reshape(-1, n, n)


# ---------------------------------------------------------------------------
# periodic orbits
# ---------------------------------------------------------------------------

@dataclass
class PeriodicOrbit:
    """Newton-refined closed orbit of an autonomous flow."""

    point: np.ndarray
    period: float
    monodromy: np.ndarray
    multipliers: np.ndarray
    residual: float
    iterations: int


def refine_periodic_orbit(vfield: VectorField, q_guess: np.ndarray,
                          t_guess: float, atol: float = 1e-10) -> PeriodicOrbit:
    """Newton shooting for a periodic orbit near ``(q_guess, t_guess)``.

    The phase condition fixes the correction orthogonal to the flow
    direction at the anchor point.  Convergence requires the closure
    residual ``|phi_T(q) - q|`` to drop below ``ORBIT_RESIDUAL_TOL``.

    Raises
    ------
    NoConvergence
        After ``ORBIT_MAX_NEWTON`` Newton iterations.
    SingularJacobian
        If the bordered Newton matrix is numerically singular.
    """
    n = vfield.dim
    q = np.array(q_guess, dtype=float)
    t_cur = float(t_guess)
    for it in range(1, ORBIT_MAX_NEWTON + 1):
        phi, mono = integrate_with_variational(vfield, q, t_cur, atol=atol)
        res_vec = phi - q
        res = float(np.linalg.norm(res_vec))
        if res <= ORBIT_RESIDUAL_TOL:
            mult = np.linalg.eigvals(mono)
            mult = mult[np.argsort(-np.abs(mult))]
            return PeriodicOrbit(point=q, period=t_cur, monodromy=mono,
                                 multipliers=mult, residual=res,
                                 iterations=it)
        f_anchor = vfield.rhs(q)
        f_end = vfield.rhs(phi)
        system = np.zeros((n + 1, n + 1))
        system[:n, :n] = mono - np.eye(n)
        system[:n, n] = f_end
        system[n, :n] = f_anchor
        rhs_vec = np.zeros(n + 1)
        rhs_vec[:n] = -res_vec
        try:
            delta = np.linalg.solve(system, rhs_vec)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian("bordered Newton matrix is singular") from exc
        if not np.all(np.isfinite(delta)):
            raise SingularJacobian("bordered Newton matrix is singular")
        q = q + delta[:n]
        t_cur = t_cur + delta[n]
        if t_cur <= 0.0:
            raise NoConvergence("period iterate became nonpositive")
    raise NoConvergence(
        f"no closure after {ORBIT_MAX_NEWTON} Newton iterations")


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def dump_trajectory_csv(path, times: np.ndarray, states: np.ndarray,
                        header_comment: str = "") -> None:
    """Write a trajectory as CSV with columns ``t, x1, ..., xn``."""
    states = np.asarray(states, dtype=float)
    times = np.asarray(times, dtype=float)
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{i + 1}" for i in range(states.shape[1])])
        for t, row in zip(times, states):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
