"""Per-vertex weights: maxima of singular-value observables over cubes.

The observable of order ``d`` at a point ``q`` is ``ln omega_d`` of the
metric-adjusted transition matrix ``sqrt(P(phi q)) Dphi(q) sqrt(P(q))^-1``;
a vertex weight is its maximum over the vertex's cube, found on a point
grid, by projected local ascent from the cube center, or both.  All heavy
paths evaluate whole batches of points at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .covering import SymbolicImage
from .errors import NonFinite, NotSpd, OptimFailure
from .linalg import (ln_omega_d_from_singular_values, metric_adjusted_matrix,
                     singular_values)

__all__ = ["WeightSpec", "WeightTable", "observable", "vertex_weight",
           "weigh_graph", "save_weight_table", "load_weight_table"]

# Finite-difference step for local ascent, relative to the cube side.
FD_STEP_PER_EPSILON = 1e-6
# Local ascent iteration budget and stall tolerance (relative to the side).
ASCENT_MAX_ITER = 60
ASCENT_STALL_TOL = 1e-10
# weigh_graph aborts when more than this fraction of vertices fail.
MAX_FAILURE_FRACTION = 1e-3


@dataclass
class WeightSpec:
    """What to measure over each cube, and how to maximize it.

    ``d`` is the singular-value order in ``(0, state_dim]``; ``metric`` is a
    metric family evaluated with ``params``; ``mode`` is one of ``"grid"``,
    ``"local_from_center"`` or ``"grid_then_local"``.
    """

    d: float
    metric: object
    params: Optional[np.ndarray] = None
    mode: str = "local_from_center"
    grid_points_per_axis: int = 3

    def __post_init__(self):
        if not 0.0 < self.d <= self.metric.dim:
            raise ValueError(
                f"order d={self.d} outside (0, {self.metric.dim}]")
        if self.mode not in ("grid", "local_from_center", "grid_then_local"):
            raise ValueError(f"unknown maximization mode {self.mode!r}")


@dataclass
class WeightTable:
    """Weights, their maximizer points, and the evaluation effort."""

    weights: np.ndarray
    argmax: np.ndarray
    eval_count: int
    meta: dict = field(default_factory=dict)


def observable(q: np.ndarray, spec: WeightSpec, system: Callable,
               tau: float) -> np.ndarray:
    """``ln omega_d`` of the metric-adjusted transition at ``q`` (batched).

    ``system(points, tau)`` must return ``(images, jacobians)`` of the
    time-``tau`` transition.  Scalar for a single point, else ``(N,)``.

    Raises
    ------
    NonFinite
        If the transition or the adjusted matrix stops being finite.
    """
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    pts = q[None] if single else q
    images, jacs = system(pts, tau)
    images = np.asarray(images, dtype=float)
    jacs = np.asarray(jacs, dtype=float)
    if not (np.all(np.isfinite(images)) and np.all(np.isfinite(jacs))):
        raise NonFinite("transition left the finite range")
    p_src = spec.metric.evaluate(pts, spec.params)
    p_dst = spec.metric.evaluate(images, spec.params)
    adjusted = metric_adjusted_matrix(jacs, p_src, p_dst)
    vals = ln_omega_d_from_singular_values(singular_values(adjusted), spec.d)
    return float(vals[0]) if single else vals


class _CountingEvaluator:
    """Batched observable evaluator that counts point evaluations."""

    def __init__(self, spec: WeightSpec, system: Callable, tau: float):
        self.spec = spec
        self.system = system
        self.tau = tau
        self.count = 0

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        self.count += len(pts)
        vals = observable(pts, self.spec, self.system, self.tau)
        return np.asarray(vals, dtype=float)


def _grid_offsets(n: int, k: int, eps: float) -> np.ndarray:
    fr = np.linspace(0.0, 1.0, k) * eps
    return np.stack(np.meshgrid(*([fr] * n), indexing="ij"),
                    axis=-1).reshape(-1, n)


def _central_gradient(evaluate, x: np.ndarray, h: float) -> np.ndarray:
    m, n = x.shape
    grad = np.empty((m, n))
    for ax in range(n):
        shift = np.zeros(n)
        shift[ax] = h
        grad[:, ax] = (evaluate(x + shift) - evaluate(x - shift)) / (2.0 * h)
    return grad


def _projected_ascent(evaluate, x0, f0, lows, highs, eps):
    """Vectorized projected gradient ascent with per-element step control.

    Returns the best value and point seen for every row; never worse than
    the starting pair.
    """
    x = x0.copy()
    f = f0.copy()
    best_x = x0.copy()
    best_f = f0.copy()
    h = FD_STEP_PER_EPSILON * eps
    gamma = np.full(len(x), 0.1 * eps)
    active = np.ones(len(x), dtype=bool)
    for _ in range(ASCENT_MAX_ITER):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        grad = _central_gradient(evaluate, x[idx], h)
        gnorm = np.max(np.abs(grad), axis=1)
        trial = np.clip(x[idx] + gamma[idx, None] * grad, lows[idx],
                        highs[idx])
        f_trial = evaluate(trial)
        improved = f_trial > f[idx]
        sub_acc = idx[improved]
        x[sub_acc] = trial[improved]
        f[sub_acc] = f_trial[improved]
        gamma[sub_acc] *= 1.3
        gamma[idx[~improved]] *= 0.35
        better = f[idx] > best_f[idx]
        best_f[idx[better]] = f[idx[better]]
        best_x[idx[better]] = x[idx[better]]
        # A row stays active while its (post-update) step budget can still
        # move it; clipping at a boundary maximum rejects and shrinks it.
        still = gamma[idx] * gnorm > ASCENT_STALL_TOL * eps
        active[idx[~still]] = False
    return best_f, best_x


def _maximize_cubes(evaluate, lows, eps, mode, k):
    """Best (value, point) per cube for a batch of cube lower corners."""
    m, n = lows.shape
    highs = lows + eps
    centers = lows + 0.5 * eps
    f_center = evaluate(centers)
    best_f = f_center.copy()
    best_x = centers.copy()

    if mode in ("grid", "grid_then_local"):
        for off in _grid_offsets(n, k, eps):
            pts = lows + off
            vals = evaluate(pts)
            better = vals > best_f
            best_f[better] = vals[better]
            best_x[better] = pts[better]
    if mode in ("local_from_center", "grid_then_local"):
        f_loc, x_loc = _projected_ascent(evaluate, best_x, best_f, lows,
                                         highs, eps)
        better = f_loc > best_f
        best_f[better] = f_loc[better]
        best_x[better] = x_loc[better]
    return best_f, best_x, f_center


def vertex_weight(i: int, g: SymbolicImage, spec: WeightSpec,
                  system: Callable):
    """Weight of a single vertex: the cube maximum of the observable.

    Returns ``(weight, argmax_point)``.  The cube center is always
    evaluated, so the weight never falls below the center value; ties keep
    the center as the maximizer.
    """
    table = weigh_graph_subset(g, spec, system, np.array([i]))
    return float(table.weights[0]), table.argmax[0]


def weigh_graph_subset(g: SymbolicImage, spec: WeightSpec, system: Callable,
                       vertex_ids: np.ndarray,
                       batch: int = 4096) -> WeightTable:
    """Weight table restricted to ``vertex_ids`` (in the given order)."""
    vertex_ids = np.asarray(vertex_ids, dtype=np.int64)
    n = len(g.box_min)
    eps = g.epsilon
    tuples = g.tuples()[vertex_ids]
    lows_all = g.box_min + eps * tuples
    taus = g.tau[vertex_ids]

    weights = np.full(len(vertex_ids), -np.inf)
    argmax = np.empty((len(vertex_ids), n))
    centers_f = np.full(len(vertex_ids), -np.inf)
    failed = []
    evals = 0

    for tau in np.unique(taus):
        sel = np.flatnonzero(taus == tau)
        for start in range(0, len(sel), batch):
            rows = sel[start:start + batch]
            lows = lows_all[rows]
            counter = _CountingEvaluator(spec, system, float(tau))
            try:
                f, x, f_c = _maximize_cubes(counter, lows, eps, spec.mode,
                                            spec.grid_points_per_axis)
            except (np.linalg.LinAlgError, NonFinite, NotSpd,
                    FloatingPointError):
                f, x, f_c = _maximize_rows_isolated(
                    counter, lows, eps, spec, failed, rows)
            bad = ~np.isfinite(f)
            if np.any(bad):
                failed.extend(rows[bad].tolist())
            weights[rows] = f
            argmax[rows] = x
            centers_f[rows] = f_c
            evals += counter.count

    if len(failed) > MAX_FAILURE_FRACTION * max(1, len(vertex_ids)):
        raise OptimFailure(
            f"{len(failed)} of {len(vertex_ids)} vertices failed to "
            "produce a finite weight")
    meta = {
        "mode": spec.mode,
        "d": spec.d,
        "grid_points_per_axis": spec.grid_points_per_axis,
        "metric_family": getattr(spec.metric, "family", "custom"),
        "failed_vertices": sorted(failed),
    }
    return WeightTable(weights=weights, argmax=argmax, eval_count=evals,
                       meta=meta)


def _maximize_rows_isolated(counter, lows, eps, spec, failed, rows):
    """Per-row fallback when a whole batch raises inside linear algebra."""
    m, n = lows.shape
    f = np.full(m, -np.inf)
    x = lows + 0.5 * eps
    f_c = np.full(m, -np.inf)
    for r in range(m):
        try:
            fr, xr, fcr = _maximize_cubes(counter, lows[r:r + 1], eps,
                                          spec.mode,
                                          spec.grid_points_per_axis)
            f[r], x[r], f_c[r] = fr[0], xr[0], fcr[0]
        except Exception:
            failed.append(int(rows[r]))
    return f, x, f_c


def weigh_graph(g: SymbolicImage, spec: WeightSpec, system: Callable,
                parallelism: int = 1, batch: int = 4096) -> WeightTable:
    """Weight table over all vertices of a symbolic image.

    Vertex tasks are independent; the implementation realizes parallelism
    through vectorized batches (``parallelism`` is accepted for interface
    stability, values above one are currently equivalent to one).  Results
    are deterministic and ordered by vertex id.

    Raises
    ------
    OptimFailure
        If more than 0.1% of vertices fail to produce a finite weight.
    """
    del parallelism
    return weigh_graph_subset(g, spec, system,
                              np.arange(g.n_vertices, dtype=np.int64),
                              batch=batch)


def save_weight_table(table: WeightTable, g: SymbolicImage, csv_path,
                      cache_path=None, header_comment=None) -> None:
    """Write ``vertex,tau,weight,argmax_*`` CSV and an optional binary cache."""
    n = table.argmax.shape[1]
    cols = ",".join(f"argmax_{k}" for k in range(n))
    with open(csv_path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(f"vertex,tau,weight,{cols}\n")
        for i in range(len(table.weights)):
            coords = ",".join(repr(float(v)) for v in table.argmax[i])
            fh.write(f"{i},{float(g.tau[i])!r},"
                     f"{float(table.weights[i])!r},{coords}\n")
    if cache_path is not None:
        np.savez(cache_path, weights=table.weights, argmax=table.argmax,
                 eval_count=np.int64(table.eval_count))


def load_weight_table(cache_path) -> WeightTable:
    """Read a weight table from its binary cache."""
    data = np.load(cache_path)
    return WeightTable(weights=data["weights"], argmax=data["argmax"],
                       eval_count=int(data["eval_count"]), meta={})
