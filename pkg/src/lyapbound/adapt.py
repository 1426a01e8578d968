"""Iterative metric adaptation: reweigh, harvest cycles, minimize, repeat.

Each iteration reweighs the symbolic image under the current metric
parameters, extracts the dominant simple cycle of a long maximal path,
records the per-vertex maximizer points as reference families, and then
minimizes the largest relative reference weight over the parameters inside
a trust box — a smooth constrained surrogate for the graph bound.
"""

from __future__ import annotations

import csv
import json
import os
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .covering import SymbolicImage
from .errors import BracketError
from .linalg import ln_omega_d_adjusted_vjp
from .metrics import serialize_params
from .paths import (extract_max_multiplicity_cycle, max_weight_path,
                    upper_bound_report)
from .sqp import KKT_SATISFIED, NlpProblem, solve
from .weights import WeightSpec, weigh_graph

__all__ = ["ReferenceCycle", "InpConfig", "InpState",
           "relative_reference_weight", "updating_procedure",
           "assemble_and_solve", "run_inp", "lyapunov_dimension_search",
           "save_state", "load_state", "write_history_csv"]

ACCEPT_VIOLATION_TOL = 1e-6
REWEIGH_CORRECTION_TOL = 1e-6
CYCLE_LENGTH_WARN = 50


@dataclass
class ReferenceCycle:
    """A harvested simple cycle with families of reference points.

    Each family holds one point per cycle position, inside that position's
    cube.  Image points and transition Jacobians are cached per family so
    metric re-evaluations never re-run the dynamics.
    """

    vertices: np.ndarray
    tau: np.ndarray
    age: int
    families: List[np.ndarray] = field(default_factory=list)
    transitions: List[Tuple[np.ndarray, np.ndarray]] = \
        field(default_factory=list)
    active: bool = True

    def key(self) -> tuple:
        return tuple(int(v) for v in self.vertices)

    def add_family(self, points: np.ndarray, system: Callable,
                   n_ref: int) -> None:
        points = np.asarray(points, dtype=float)
        self.families.append(points)
        self.transitions.append(_precompute_transitions(points, self.tau,
                                                        system))
        while len(self.families) > n_ref:
            self.families.pop(0)
            self.transitions.pop(0)


def _precompute_transitions(points, tau, system):
    images = np.empty_like(points)
    jacs = np.empty(points.shape + (points.shape[-1],))
    for t in np.unique(tau):
        rows = np.flatnonzero(tau == t)
        img, jac = system(points[rows], float(t))
        images[rows] = img
        jacs[rows] = jac
    return images, jacs


@dataclass
class InpConfig:
    """Knobs of the adaptation loop.

    The trust box per parameter is ``degree_scale * 2**tag`` when the
    metric family carries degree tags, else the flat ``trust_half_width``.
    ``strategy`` is ``"none"``, ``"IR"`` (per-point regularization) or
    ``"CR"`` (per-cycle regularization) with margin ``strategy_eps``.
    """

    d: float
    trust_half_width: float = 0.01
    degree_scale: float = 0.025
    w_h: float = 0.005
    n_ref: int = 10
    t_path: int = 1000
    max_cycles: int = 4096
    inactivity_threshold: float = 0.1
    use_active_only_for_wplus: bool = False
    strategy: str = "none"
    strategy_eps: float = 0.0
    max_iterations: int = 50
    stall_window: int = 10
    stall_tol: float = 1e-7
    weight_mode: str = "grid_then_local"
    grid_points_per_axis: int = 3
    nlp_max_iter: int = 200
    nlp_tol_kkt: float = 1e-8

    def __post_init__(self):
        if self.w_h <= 0.0:
            raise ValueError("w_h must be positive")
        if self.n_ref < 1:
            raise ValueError("n_ref must be at least 1")
        if self.strategy not in ("none", "IR", "CR"):
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass
class InpState:
    """Evolving parameters, reference set, and per-iteration history."""

    params: np.ndarray
    cycles: List[ReferenceCycle] = field(default_factory=list)
    iteration: int = 0
    history: List[dict] = field(default_factory=list)
    reweigh_corrections: List[float] = field(default_factory=list)


def _family_values(cycle, j, metric, params, d):
    """Per-position ``ln omega_d`` values for one reference family."""
    pts = cycle.families[j]
    images, jacs = cycle.transitions[j]
    p_src = metric.evaluate(pts, params)
    p_dst = metric.evaluate(images, params)
    vals, _, _, near = ln_omega_d_adjusted_vjp(jacs, p_src, p_dst, d)
    return vals, bool(np.any(near))


def _family_value_grad(cycle, j, metric, params, d):
    """Summed value and parameter gradient for one reference family."""
    pts = cycle.families[j]
    images, jacs = cycle.transitions[j]
    p_src = metric.evaluate(pts, params)
    p_dst = metric.evaluate(images, params)
    vals, g_src, g_dst, near = ln_omega_d_adjusted_vjp(jacs, p_src, p_dst, d)
    grad = (metric.param_vjp(pts, params, g_src)
            + metric.param_vjp(images, params, g_dst))
    return float(vals.sum()), np.asarray(grad, dtype=float), \
        bool(np.any(near))


def relative_reference_weight(cycle: ReferenceCycle, j: int, metric,
                              params, d: float) -> float:
    """``W~_{k,j}``: summed position observables over summed times."""
    vals, _ = _family_values(cycle, j, metric, params, d)
    return float(vals.sum()) / float(cycle.tau.sum())


def _all_reference_weights(state, metric, d, active_only=False):
    out = []
    for k, cycle in enumerate(state.cycles):
        if active_only and not cycle.active:
            continue
        for j in range(len(cycle.families)):
            out.append((k, j, relative_reference_weight(
                cycle, j, metric, state.params, d)))
    return out


def updating_procedure(state: InpState, g: SymbolicImage, table, system,
                       metric, config: InpConfig) -> dict:
    """Harvest the dominant cycle and refresh reference families (UP1/UP2).

    Runs the long maximal path, extracts its max-multiplicity simple cycle,
    adds it as a new reference cycle unless an identical cycle (up to
    rotation) is present, then appends the current per-vertex maximizer
    points as a new family to every cycle.  Families and cycles are evicted
    oldest-first beyond their caps; cycles far below the current best are
    deactivated.
    """
    path = max_weight_path(g, table, config.t_path, mode="full")
    report = extract_max_multiplicity_cycle(path, g, table)
    if len(report.cycle.vertices) > CYCLE_LENGTH_WARN:
        warnings.warn(
            f"extracted cycle of length {len(report.cycle.vertices)}; "
            "typical useful cycles are much shorter", stacklevel=2)
    key = tuple(int(v) for v in report.cycle.vertices)
    known = {c.key() for c in state.cycles}
    added = key not in known
    if added:
        state.cycles.append(ReferenceCycle(
            vertices=report.cycle.vertices.copy(),
            tau=g.tau[report.cycle.vertices].copy(),
            age=state.iteration))
    while len(state.cycles) > config.max_cycles:
        oldest = min(range(len(state.cycles)),
                     key=lambda i: state.cycles[i].age)
        state.cycles.pop(oldest)

    for cycle in state.cycles:
        cycle.add_family(table.argmax[cycle.vertices], system, config.n_ref)

    best_per_cycle = []
    for cycle in state.cycles:
        best = max(relative_reference_weight(cycle, j, metric, state.params,
                                             config.d)
                   for j in range(len(cycle.families)))
        best_per_cycle.append(best)
    top = max(best_per_cycle)
    for cycle, best in zip(state.cycles, best_per_cycle):
        cycle.active = best >= top - config.inactivity_threshold

    return {"path_cycle": report,
            "cycle_added": added,
            "cycle_relative_weight": report.cycle.relative_weight}


def assemble_and_solve(state: InpState, config: InpConfig, metric):
    """Build and solve the per-iteration trust-box problem.

    Variables are ``(params, w)``; the objective is ``w``; every active
    reference family contributes ``W~_{k,j}(params) <= w``.  Strategy IR
    additionally freezes per-point observables near their current values,
    CR freezes per-family weights.  On an accepted solve the state's
    parameters move; a rejected solve leaves them unchanged.

    Returns ``(solution, accepted, w_plus_start)``.
    """
    if not any(cycle.families for cycle in state.cycles):
        raise ValueError("reference set is empty; run updating_procedure")
    omega0 = np.asarray(state.params, dtype=float)
    n = len(omega0)
    d = config.d

    pairs = [(k, j) for k, cycle in enumerate(state.cycles)
             if cycle.active for j in range(len(cycle.families))]
    weights0 = {(k, j): relative_reference_weight(
        state.cycles[k], j, metric, omega0, d) for k, j in pairs}
    if config.use_active_only_for_wplus:
        w_plus = max(weights0.values())
    else:
        w_plus = max(w for _, _, w in
                     _all_reference_weights(state, metric, d))

    near_holder = [False]

    def family_constraint(k, j):
        cycle = state.cycles[k]
        total_tau = float(cycle.tau.sum())

        def fn(x):
            return relative_reference_weight(cycle, j, metric, x[:n], d) \
                - x[n]

        def grad(x):
            _, gw, near = _family_value_grad(cycle, j, metric, x[:n], d)
            near_holder[0] = near
            return np.hstack([gw / total_tau, -1.0])

        return fn, grad

    constraints = [family_constraint(k, j) for k, j in pairs]

    if config.strategy == "CR":
        for k, j in pairs:
            cycle = state.cycles[k]
            cap = weights0[(k, j)] + config.strategy_eps
            total_tau = float(cycle.tau.sum())

            def fn(x, cycle=cycle, j=j, cap=cap):
                return relative_reference_weight(
                    cycle, j, metric, x[:n], d) - cap

            def grad(x, cycle=cycle, j=j, total_tau=total_tau):
                _, gw, _ = _family_value_grad(cycle, j, metric, x[:n], d)
                return np.hstack([gw / total_tau, 0.0])

            constraints.append((fn, grad))
    elif config.strategy == "IR":
        for k, j in pairs:
            cycle = state.cycles[k]
            vals0, _ = _family_values(cycle, j, metric, omega0, d)
            for s in range(len(cycle.vertices)):
                cap = float(vals0[s]) + config.strategy_eps

                def fn(x, cycle=cycle, j=j, s=s, cap=cap):
                    vals, _ = _family_values(cycle, j, metric, x[:n], d)
                    return float(vals[s]) - cap

                def grad(x, cycle=cycle, j=j, s=s):
                    pts = cycle.families[j][s:s + 1]
                    img = cycle.transitions[j][0][s:s + 1]
                    jac = cycle.transitions[j][1][s:s + 1]
                    p_src = metric.evaluate(pts, x[:n])
                    p_dst = metric.evaluate(img, x[:n])
                    _, g_src, g_dst, _ = ln_omega_d_adjusted_vjp(
                        jac, p_src, p_dst, d)
                    gw = (metric.param_vjp(pts, x[:n], g_src)
                          + metric.param_vjp(img, x[:n], g_dst))
                    return np.hstack([np.asarray(gw, dtype=float), 0.0])

                constraints.append((fn, grad))

    if getattr(metric, "degree_tags", None) is not None:
        half = config.degree_scale * np.exp2(
            np.asarray(metric.degree_tags, dtype=float))
    else:
        half = np.full(n, config.trust_half_width)
    box = np.empty((n + 1, 2))
    box[:n, 0] = omega0 - half
    box[:n, 1] = omega0 + half
    box[n] = (w_plus - config.w_h, w_plus)

    problem = NlpProblem(
        dim=n + 1,
        objective=lambda x: float(x[n]),
        objective_grad=lambda x: np.hstack([np.zeros(n), 1.0]),
        inequality_constraints=constraints,
        box=box,
        start=np.hstack([omega0, w_plus]),
        max_iter=config.nlp_max_iter,
        tol_kkt=config.nlp_tol_kkt,
        near_nonsmooth=lambda x: near_holder[0])
    solution = solve(problem)

    accepted = (solution.constraint_violation <= ACCEPT_VIOLATION_TOL
                and solution.objective_value <= w_plus + 1e-12)
    if accepted:
        state.params = solution.x[:n].copy()
    return solution, accepted, w_plus


def _distinct_point_stats(state):
    pts = [f for cycle in state.cycles for f in cycle.families]
    if not pts:
        return 0, 0
    stacked = np.vstack(pts)
    return len(stacked), len(np.unique(stacked, axis=0))


def _atomic_json(write_fn, path):
    tmp = f"{path}.tmp"
    write_fn(tmp)
    os.replace(tmp, path)


def write_history_csv(history, path, header_comment=None) -> None:
    """History CSV, one row per iteration."""
    cols = ["iter", "max_path_cycle_weight", "optimized_ref_weight",
            "n_cycles", "n_points", "n_distinct_points", "nlp_status",
            "seconds"]
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in history:
            writer.writerow([row[c] if c in ("iter", "n_cycles", "n_points",
                                             "n_distinct_points",
                                             "nlp_status")
                             else repr(float(row[c])) for c in cols])


def run_inp(g: SymbolicImage, system, metric, initial_params,
            config: InpConfig, out_dir=None,
            state: Optional[InpState] = None) -> InpState:
    """The full adaptation loop with checkpoints.

    Per iteration: reweigh the graph under the current parameters, refresh
    the reference set, solve the trust-box problem, log, and checkpoint
    atomically.  Stops at ``max_iterations`` or when the optimized weight
    has improved by less than ``stall_tol`` over ``stall_window``
    iterations.  Resuming from a saved state reproduces the remaining
    iterations exactly.
    """
    if state is None:
        state = InpState(params=np.asarray(initial_params, dtype=float)
                         .copy())
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    prev_opt = None

    while state.iteration < config.max_iterations:
        started = time.perf_counter()
        r = state.iteration + 1
        spec = WeightSpec(d=config.d, metric=metric, params=state.params,
                          mode=config.weight_mode,
                          grid_points_per_axis=config.grid_points_per_axis)
        table = weigh_graph(g, spec, system)
        info = updating_procedure(state, g, table, system, metric, config)

        # Reweighing can only reveal larger maxima; log any case where the
        # fresh bound exceeds what the previous solve reported.
        w_plus_fresh = max(w for _, _, w in
                           _all_reference_weights(state, metric, config.d))
        correction = (max(0.0, w_plus_fresh - prev_opt)
                      if prev_opt is not None else 0.0)
        state.reweigh_corrections.append(correction)
        if correction > REWEIGH_CORRECTION_TOL:
            warnings.warn(
                f"iteration {r}: reweighing raised the reference bound by "
                f"{correction:.3e}", stacklevel=2)

        if metric.n_params == 0:
            solution, accepted, w_plus0 = None, False, w_plus_fresh
            status = "NoParameters"
            optimized = w_plus0
        else:
            solution, accepted, w_plus0 = assemble_and_solve(state, config,
                                                             metric)
            status = solution.status if accepted \
                else f"Rejected:{solution.status}"
            optimized = (solution.objective_value if accepted else w_plus0)
        prev_opt = optimized

        n_points, n_distinct = _distinct_point_stats(state)
        state.iteration = r
        state.history.append({
            "iter": r,
            "max_path_cycle_weight": info["cycle_relative_weight"],
            "optimized_ref_weight": optimized,
            "n_cycles": len(state.cycles),
            "n_points": n_points,
            "n_distinct_points": n_distinct,
            "nlp_status": status,
            "seconds": time.perf_counter() - started,
        })

        if out_dir is not None:
            _atomic_json(lambda p: serialize_params(
                metric, state.params, p, loss=optimized),
                os.path.join(out_dir, f"checkpoint_{r:04d}.json"))
            _atomic_json(lambda p: serialize_params(
                metric, state.params, p, loss=optimized),
                os.path.join(out_dir, "checkpoint_latest.json"))
            _atomic_json(lambda p: save_state(state, p),
                         os.path.join(out_dir, "state_latest.json"))
            write_history_csv(state.history,
                              os.path.join(out_dir, "history.csv"))

        if len(state.history) >= config.stall_window + 1:
            window = [row["optimized_ref_weight"]
                      for row in state.history[-(config.stall_window + 1):]]
            if window[0] - min(window[1:]) < config.stall_tol:
                break
    return state


def lyapunov_dimension_search(g: SymbolicImage, system, metric, params,
                              d_bracket, t: int = 1000,
                              bracket_tol: float = 1e-4,
                              refine_iterations: int = 0,
                              config: Optional[InpConfig] = None,
                              weight_mode: str = "grid_then_local") -> float:
    """Certified dimension bound: smallest order ``d`` with a negative bound.

    Bisects on ``d``; each probe reweighs the graph for the ``omega_d``
    observable (optionally after a few adaptation iterations seeded from
    ``params``) and reads the length-``t`` path bound.  Returns the upper
    bracket end once narrower than ``bracket_tol``.

    Raises
    ------
    BracketError
        If the bound has the same sign at both bracket ends.
    """
    lo, hi = float(d_bracket[0]), float(d_bracket[1])

    def bound_at(d):
        p = np.asarray(params, dtype=float).copy()
        if refine_iterations > 0 and metric.n_params > 0:
            cfg_args = dict(vars(config)) if config is not None else {}
            cfg_args.update(d=d, max_iterations=refine_iterations)
            sub = run_inp(g, system, metric, p, InpConfig(**cfg_args))
            p = sub.params
        spec = WeightSpec(d=d, metric=metric, params=p, mode=weight_mode)
        table = weigh_graph(g, spec, system)
        return upper_bound_report(g, table, t)

    f_lo = bound_at(lo)
    f_hi = bound_at(hi)
    if f_lo < 0.0 or f_hi >= 0.0:
        raise BracketError(
            f"bound is {f_lo:.3e} at d={lo} and {f_hi:.3e} at d={hi}; "
            "a sign change is required")
    while hi - lo > bracket_tol:
        mid = 0.5 * (lo + hi)
        if bound_at(mid) < 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def save_state(state: InpState, path) -> None:
    """Full JSON snapshot: parameters, reference set, and history."""
    doc = {
        "params": [float(v) for v in state.params],
        "iteration": state.iteration,
        "history": state.history,
        "reweigh_corrections": [float(v)
                                for v in state.reweigh_corrections],
        "cycles": [{
            "vertices": [int(v) for v in c.vertices],
            "tau": [float(v) for v in c.tau],
            "age": c.age,
            "active": bool(c.active),
            "families": [[[float(x) for x in pt] for pt in fam]
                         for fam in c.families],
        } for c in state.cycles],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_state(path, system) -> InpState:
    """Rebuild a saved state; transition caches are recomputed."""
    with open(path) as fh:
        doc = json.load(fh)
    state = InpState(params=np.array(doc["params"], dtype=float),
                     iteration=int(doc["iteration"]),
                     history=list(doc["history"]),
                     reweigh_corrections=list(
                         doc.get("reweigh_corrections", [])))
    for c in doc["cycles"]:
        cycle = ReferenceCycle(
            vertices=np.array(c["vertices"], dtype=np.int64),
            tau=np.array(c["tau"], dtype=float),
            age=int(c["age"]), active=bool(c["active"]))
        for fam in c["families"]:
            cycle.add_family(np.array(fam, dtype=float), system,
                             n_ref=max(1, len(c["families"])))
        state.cycles.append(cycle)
    return state
