"""Maximal-weight paths and cost-to-time-ratio cycles on symbolic images.

With per-vertex weights ``w`` and times ``tau``, the relative weight of a
path is ``sum w / sum tau``.  A dynamic program over path length gives the
supremum over all length-``t`` paths — an upper bound that tightens toward
the best simple cycle as ``t`` grows — and a binary search on shifted
weights ``w - kappa * tau`` locates the best cycle ratio when times differ.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .covering import SymbolicImage
from .errors import BadBounds, NoCycleFound, NoPath, TooLarge
from .weights import WeightTable

__all__ = ["WeightedPath", "CycleReport", "max_weight_path", "ratio_search",
           "upper_bound_report", "upper_bound_ladder",
           "extract_max_multiplicity_cycle", "brute_force_simple_cycles",
           "path_cycle_gap_bound", "length_for_gap_bound",
           "write_bound_report", "write_cycle_csv"]

RATIO_TOL = 1e-9
BRUTE_FORCE_LIMIT = 16
DENSE_VERTEX_LIMIT = 64
DENSE_LENGTH_THRESHOLD = 4096
WITNESS_LENGTH_CAP = 100_000


@dataclass
class WeightedPath:
    """A vertex path with its accumulated weight, time, and their ratio."""

    vertices: np.ndarray
    total_weight: float
    total_time: float

    @property
    def relative_weight(self) -> float:
        return self.total_weight / self.total_time

    def validate(self, g: SymbolicImage, table: WeightTable,
                 tol: float = 1e-12) -> None:
        """Check edge consistency and that the totals match the components."""
        v = self.vertices
        for a, b in zip(v[:-1], v[1:]):
            succ = g.successors(int(a))
            if int(b) not in succ:
                raise AssertionError(f"({a}, {b}) is not an edge")
        if len(v) > 0:
            w = float(table.weights[v].sum())
            t = float(g.tau[v].sum())
            if abs(w - self.total_weight) > tol * max(1.0, abs(w)):
                raise AssertionError("total_weight inconsistent")
            if abs(t - self.total_time) > tol * max(1.0, abs(t)):
                raise AssertionError("total_time inconsistent")


@dataclass
class CycleReport:
    """A simple cycle found in a path, with how often the path traverses it."""

    cycle: WeightedPath
    multiplicity_in_path: int
    is_simple: bool = True


def _segment_max(vals: np.ndarray, offsets: np.ndarray,
                 want_rank: bool = False):
    """Per-row max (and argmax rank) of edge values under CSR offsets.

    Rows without edges get ``-inf``.  The rank is the first maximal
    position within the row, which is the smallest successor id because
    target lists are sorted.
    """
    starts = offsets[:-1]
    degrees = np.diff(offsets)
    empty = degrees == 0
    safe_starts = np.minimum(starts, max(len(vals) - 1, 0))
    if len(vals) == 0:
        mx = np.full(len(starts), -np.inf)
        return (mx, np.zeros(len(starts), dtype=np.int64)) if want_rank \
            else mx
    mx = np.maximum.reduceat(vals, safe_starts)
    mx[empty] = -np.inf
    if not want_rank:
        return mx
    is_max = vals >= np.repeat(mx, degrees)
    pos = np.where(is_max, np.arange(len(vals)), len(vals))
    first = np.minimum.reduceat(pos, safe_starts)
    rank = np.where(empty, 0, first - starts)
    return mx, rank.astype(np.int64)


def _rank_dtype(max_degree: int):
    if max_degree < 2 ** 8:
        return np.uint8
    if max_degree < 2 ** 16:
        return np.uint16
    return np.uint32


def _dp_max_path(g: SymbolicImage, w: np.ndarray, t: int, full: bool):
    """Run the length-``t`` recursion; return (value, start vertex, path).

    ``W(k, i)`` is the best total weight of a ``k``-vertex path starting at
    ``i``; ``W(k+1, i) = w(i) + max over successors j of W(k, j)``.  In full
    mode per-level argmax ranks are kept to rebuild the path.
    """
    nv = g.n_vertices
    if nv == 0 or t < 1:
        raise NoPath("empty graph or nonpositive path length")
    cur = w.astype(float).copy()
    ranks = None
    if full and t > 1:
        ranks = np.empty((t - 1, nv),
                         dtype=_rank_dtype(int(g.out_degrees().max())))
    for k in range(1, t):
        if full:
            mx, rank = _segment_max(cur[g.targets], g.offsets,
                                    want_rank=True)
            ranks[k - 1] = rank
        else:
            mx = _segment_max(cur[g.targets], g.offsets)
        cur = w + mx
    start = int(np.argmax(cur))
    best = float(cur[start])
    if not np.isfinite(best):
        raise NoPath(f"no path with {t} vertices exists")
    if not full or t == 1:
        return best, start, np.array([start], dtype=np.int64)
    path = np.empty(t, dtype=np.int64)
    path[0] = start
    v = start
    for s in range(1, t):
        # Level t-s+1 chose this rank while extending toward level t-s.
        r = int(ranks[t - 1 - s, v])
        v = int(g.targets[g.offsets[v] + r])
        path[s] = v
    return best, start, path


def max_weight_path(g: SymbolicImage, table: WeightTable, t: int,
                    mode: str = "full") -> WeightedPath:
    """Best total-weight path with ``t`` vertices.

    ``mode="full"`` reconstructs the whole argmax path from stored
    backpointer ranks (O(t * |V|) memory); ``mode="low_memory"`` keeps two
    weight vectors only and returns just the optimal value and its starting
    vertex.  Ties resolve to the smallest vertex id.  O(t * |E|) time.

    Raises
    ------
    NoPath
        If no ``t``-vertex path exists (acyclic graph shorter than ``t``).
    """
    if mode not in ("full", "low_memory"):
        raise ValueError(f"unknown mode {mode!r}")
    best, start, path = _dp_max_path(g, np.asarray(table.weights, float), t,
                                     full=(mode == "full"))
    if mode == "low_memory":
        return WeightedPath(vertices=np.array([start], dtype=np.int64),
                            total_weight=best,
                            total_time=float(t * g.tau[start]))
    return WeightedPath(vertices=path, total_weight=best,
                        total_time=float(g.tau[path].sum()))


def _maxplus_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a[:, :, None] + b[None, :, :]).max(axis=1)


def _dense_shifted_optimum(g: SymbolicImage, w: np.ndarray, t: int) -> float:
    """Best total weight over ``t``-vertex paths via max-plus squaring.

    ``M[i, j] = w[i]`` on edges accumulates the weights of all vertices but
    the last over ``t - 1`` edge steps; binary exponentiation makes the cost
    ``O(|V|^3 log t)``, independent of ``t`` otherwise.  Values match the
    level recursion up to reordered additions.
    """
    nv = g.n_vertices
    if nv == 0 or t < 1:
        raise NoPath("empty graph or nonpositive path length")
    if t == 1:
        return float(w.max())
    mat = np.full((nv, nv), -np.inf)
    src = np.repeat(np.arange(nv), np.diff(g.offsets))
    mat[src, g.targets] = w[src]
    acc = None
    power = t - 1
    while power:
        if power & 1:
            acc = mat.copy() if acc is None else _maxplus_matmul(acc, mat)
        power >>= 1
        if power:
            mat = _maxplus_matmul(mat, mat)
    best = float((acc + w[None, :]).max())
    if not np.isfinite(best):
        raise NoPath(f"no path with {t} vertices exists")
    return best


def path_cycle_gap_bound(g: SymbolicImage, table: WeightTable,
                         t: int) -> float:
    """Certified bound on (sup over length-``t`` paths) − (best cycle ratio).

    Any path splits into simple cycles, each with ratio at most the best
    cycle ratio ``W+``, plus a remainder of fewer than ``|E|`` vertices.
    The remainder contributes at most ``max_i (w_i - W+ tau_i)`` per vertex,
    and ``W+`` is at least the smallest per-vertex ratio, so the excess per
    unit time decays like ``1/t``.  The sup is never below ``W+``.
    """
    w = np.asarray(table.weights, dtype=float)
    tau = np.asarray(g.tau, dtype=float)
    kappa_lo = float((w / tau).min())
    excess = float(np.max(w - kappa_lo * tau))
    r = max(g.n_edges - 1, 0)
    return r * max(0.0, excess) / (t * float(tau.min()))


def length_for_gap_bound(g: SymbolicImage, table: WeightTable,
                         gap: float) -> int:
    """Smallest path length whose :func:`path_cycle_gap_bound` is below
    ``gap``."""
    if gap <= 0.0:
        raise ValueError("gap must be positive")
    w = np.asarray(table.weights, dtype=float)
    tau = np.asarray(g.tau, dtype=float)
    kappa_lo = float((w / tau).min())
    excess = max(0.0, float(np.max(w - kappa_lo * tau)))
    numer = max(g.n_edges - 1, 0) * excess
    t = int(np.ceil(numer / (gap * float(tau.min())))) + 1
    return max(t, 2)


def _default_bounds(w: np.ndarray, tau: np.ndarray):
    # Any path ratio (sum w)/(sum tau) is a mediant of per-vertex ratios,
    # so the per-vertex extremes always bracket the optimum.
    per_vertex = w / tau
    return float(per_vertex.min()), float(per_vertex.max())


def ratio_search(g: SymbolicImage, table: WeightTable, t: int = 1000,
                 bounds: Optional[Sequence[float]] = None,
                 tol: float = RATIO_TOL, engine: str = "auto",
                 witness: bool = True):
    """Binary search for the best relative weight over length-``t`` paths.

    At each trial ratio ``kappa`` the weights are shifted to
    ``w - kappa * tau``; a positive optimum raises the lower bound, a
    negative one lowers the upper bound, zero is exact.  Returns
    ``((kappa_lo, kappa_hi), witness)`` where the witness path attains a
    relative weight of at least ``kappa_lo`` (up to ``tol``).  Building
    the witness costs an extra length-capped DP sweep; pass
    ``witness=False`` to skip it (the second element is then ``None``).

    ``engine`` selects how trial optima are evaluated: ``"level"`` runs the
    ``O(t |E|)`` recursion, ``"dense"`` uses max-plus matrix squaring
    (``O(|V|^3 log t)``, small graphs only), and ``"auto"`` picks the dense
    path for long searches on graphs up to ``DENSE_VERTEX_LIMIT`` vertices.
    The witness path length is capped at ``WITNESS_LENGTH_CAP``; the
    returned interval always refers to the requested ``t``.

    Raises
    ------
    BadBounds
        If user-supplied bounds have the same sign of shifted optimum at
        both ends (the optimum is outside the bracket).
    """
    if engine not in ("auto", "level", "dense"):
        raise ValueError(f"unknown engine {engine!r}")
    w = np.asarray(table.weights, dtype=float)
    tau = np.asarray(g.tau, dtype=float)
    scale = max(1.0, float(np.abs(w).max()))
    if engine == "auto":
        engine = "dense" if (g.n_vertices <= DENSE_VERTEX_LIMIT
                             and t > DENSE_LENGTH_THRESHOLD) else "level"
    if engine == "dense" and g.n_vertices > DENSE_VERTEX_LIMIT:
        raise TooLarge(
            f"dense engine holds |V|^2 entries; {g.n_vertices} vertices "
            f"exceed the limit of {DENSE_VERTEX_LIMIT}")

    def shifted_opt(kappa):
        if engine == "dense":
            return _dense_shifted_optimum(g, w - kappa * tau, t)
        val, _, _ = _dp_max_path(g, w - kappa * tau, t, full=False)
        return val

    if bounds is None:
        lo, hi = _default_bounds(w, tau)
        if hi - lo <= tol:
            lo = hi = 0.5 * (lo + hi)
    else:
        lo, hi = float(bounds[0]), float(bounds[1])
        if shifted_opt(lo) < 0.0 or shifted_opt(hi) > 0.0:
            raise BadBounds(
                f"bracket [{lo}, {hi}] does not contain the optimal ratio")

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        val = shifted_opt(mid)
        if abs(val) <= 1e-15 * scale * t:
            lo = hi = mid
            break
        if val > 0.0:
            lo = mid
        else:
            hi = mid

    if not witness:
        return (lo, hi), None
    t_wit = min(t, WITNESS_LENGTH_CAP)
    _, _, path = _dp_max_path(g, w - lo * tau, t_wit, full=True)
    best = WeightedPath(vertices=path,
                        total_weight=float(w[path].sum()),
                        total_time=float(tau[path].sum()))
    return (lo, hi), best


def upper_bound_report(g: SymbolicImage, table: WeightTable, t: int,
                       mode: str = "low_memory") -> float:
    """Supremum of the relative weight over all length-``t`` paths.

    Valid for uniform per-vertex times; with mixed times use
    ``ratio_search``.  The value is a certified-modulo-rounding upper bound
    for the uniform growth exponent and is nonincreasing as ``t`` is
    replaced by a multiple.
    """
    tau = float(g.tau[0])
    if not np.all(g.tau == g.tau[0]):
        raise ValueError("times differ across vertices; use ratio_search")
    path = max_weight_path(g, table, t, mode=mode)
    return path.total_weight / (t * tau)


def upper_bound_ladder(g: SymbolicImage, table: WeightTable,
                       ts: Sequence[int] = (10, 100, 1000, 10000, 100000,
                                            1000000)):
    """Bound at each requested length, in one low-memory sweep.

    Returns a list of ``(t, bound, argmax_start_vertex)`` rows.  A single
    recursion up to ``max(ts)`` serves every requested length.
    """
    tau = float(g.tau[0])
    if not np.all(g.tau == g.tau[0]):
        raise ValueError("times differ across vertices; use ratio_search")
    wanted = sorted(set(int(t) for t in ts))
    w = np.asarray(table.weights, dtype=float)
    cur = w.copy()
    rows = []
    k = 1
    if wanted and wanted[0] == 1:
        i = int(np.argmax(cur))
        rows.append((1, float(cur[i]) / tau, i))
        wanted = wanted[1:]
    for t in wanted:
        while k < t:
            cur = w + _segment_max(cur[g.targets], g.offsets)
            k += 1
        i = int(np.argmax(cur))
        if not np.isfinite(cur[i]):
            raise NoPath(f"no path with {t} vertices exists")
        rows.append((t, float(cur[i]) / (t * tau), i))
    return rows


def _canonical_rotation(seq):
    best = None
    n = len(seq)
    for s in range(n):
        rot = tuple(seq[s:] + seq[:s])
        if best is None or rot < best:
            best = rot
    return best


def extract_max_multiplicity_cycle(path: WeightedPath,
                                   g: Optional[SymbolicImage] = None,
                                   table: Optional[WeightTable] = None
                                   ) -> CycleReport:
    """Most frequently traversed simple cycle along a path.

    Scans for first returns: every time a vertex reappears, the segment
    since its previous occurrence is a candidate cycle; segments visiting
    some vertex twice are skipped (they decompose into shorter cycles).
    Occurrences are counted up to rotation.  Ties prefer the shorter
    cycle, then the lexicographically smallest rotation.  When ``g`` and
    ``table`` are given the winning cycle carries its true weight and time.

    Raises
    ------
    NoCycleFound
        If no vertex repeats along the path.
    """
    verts = [int(v) for v in path.vertices]
    if len(verts) < 2:
        raise NoCycleFound("path too short to contain a cycle")
    counts = {}
    last_pos = {}
    for s, v in enumerate(verts):
        if v in last_pos:
            segment = verts[last_pos[v]:s]
            if len(set(segment)) == len(segment):
                key = _canonical_rotation(segment)
                counts[key] = counts.get(key, 0) + 1
        last_pos[v] = s
    if not counts:
        raise NoCycleFound("no repeated vertex along the path")
    best = max(counts.items(),
               key=lambda kv: (kv[1], -len(kv[0]), tuple(-x for x in kv[0])))
    cycle_vs = np.array(best[0], dtype=np.int64)
    if table is not None and g is not None:
        tw = float(table.weights[cycle_vs].sum())
        tt = float(g.tau[cycle_vs].sum())
    else:
        tw = float("nan")
        tt = float(len(cycle_vs))
    cycle = WeightedPath(vertices=cycle_vs, total_weight=tw, total_time=tt)
    return CycleReport(cycle=cycle, multiplicity_in_path=int(best[1]))


def brute_force_simple_cycles(g: SymbolicImage, table: WeightTable):
    """Exact best relative weight over all simple cycles, by enumeration.

    Returns ``(max_ratio, argmax_cycle)``.  Ties prefer shorter cycles,
    then the lexicographically smallest rotation.

    Raises
    ------
    TooLarge
        If the graph has more than 16 vertices.
    NoCycleFound
        If the graph has no cycle at all.
    """
    nv = g.n_vertices
    if nv > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"{nv} vertices exceed the enumeration guard "
                       f"({BRUTE_FORCE_LIMIT})")
    w = np.asarray(table.weights, dtype=float)
    tau = np.asarray(g.tau, dtype=float)
    succ = [g.successors(i).tolist() for i in range(nv)]
    best = None

    def dfs(start, v, visited, stack):
        nonlocal best
        for u in succ[v]:
            if u == start:
                ratio = w[stack].sum() / tau[stack].sum()
                key = (-ratio, len(stack), tuple(stack))
                if best is None or key < best[0]:
                    best = (key, list(stack), float(ratio))
            elif u > start and u not in visited:
                visited.add(u)
                stack.append(u)
                dfs(start, u, visited, stack)
                stack.pop()
                visited.remove(u)

    for s in range(nv):
        dfs(s, s, {s}, [s])
    if best is None:
        raise NoCycleFound("graph has no cycle")
    verts = np.array(best[1], dtype=np.int64)
    cycle = WeightedPath(vertices=verts,
                         total_weight=float(w[verts].sum()),
                         total_time=float(tau[verts].sum()))
    return best[2], cycle


def write_bound_report(rows, path, header_comment=None) -> None:
    """CSV ``t,upper_bound,argmax_terminal_vertex`` from ladder rows."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["t", "upper_bound", "argmax_terminal_vertex"])
        for t, bound, vertex in rows:
            writer.writerow([t, repr(float(bound)), vertex])


def write_cycle_csv(report: CycleReport, g: SymbolicImage, path,
                    header_comment=None) -> None:
    """Dump a cycle's vertices and their cube centers as CSV."""
    centers = g.box_min + g.epsilon * (g.tuples() + 0.5)
    n = len(g.box_min)
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["vertex"] + [f"center_{k}" for k in range(n)])
        for v in report.cycle.vertices:
            writer.writerow([int(v)] +
                            [repr(float(c)) for c in centers[int(v)]])
