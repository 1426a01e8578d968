"""Cube coverings and symbolic images.

A covering splits a box into axis-aligned cubes of side ``epsilon``; a
symbolic image is a directed graph whose vertices are active cubes and whose
edges overapproximate (rough mode) or sample (heuristic mode) the
cube-to-cube transitions of a dynamical system over one transition time per
vertex.  The module also provides sink/source pruning, symmetry quotients
and a checksummed binary file format.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .errors import (EmptyGraph, EscapedDomain, GridMismatch,
                     InvarianceViolation, NotEdgePreserving, TooManyCubes,
                     ChecksumError, VersionMismatch)

__all__ = [
    "CubeCovering", "SymbolicImage", "VertexGroupAction",
    "build_covering", "convex_polygon_seed", "build_rough_image",
    "build_heuristic_image", "prune_sinks_sources", "detect_vertex_action",
    "quotient_graph", "save_graph", "load_graph", "export_graph_csv",
]

# Hard cap on the number of active cubes a covering may hold.
MAX_ACTIVE_CUBES = 50_000_000
# Relative slack when assigning points on cube faces to cells.
CELL_EDGE_TOL = 1e-9
# Round-off padding of the inflation radius, per unit of stretching.
INFLATION_PAD = 1e-12
# File-format magic and version.
GRAPH_MAGIC = b"SYMG"
GRAPH_VERSION = 1


# ---------------------------------------------------------------------------
# coverings
# ---------------------------------------------------------------------------

@dataclass
class CubeCovering:
    """Axis-aligned cube covering of a box.

    Cube ``k`` (an integer tuple) spans ``box_min + epsilon*k + [0, epsilon]^n``;
    ``codes`` holds the active cubes as sorted row-major linear indices.
    """

    box_min: np.ndarray
    epsilon: float
    counts: np.ndarray
    codes: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.box_min)

    @property
    def n_cubes(self) -> int:
        return len(self.codes)

    @property
    def box_max(self) -> np.ndarray:
        return self.box_min + self.epsilon * self.counts

    def tuples(self, codes: Optional[np.ndarray] = None) -> np.ndarray:
        """Integer index tuples ``(m, n)`` for the given linear codes."""
        if codes is None:
            codes = self.codes
        return np.stack(np.unravel_index(codes, self.counts), axis=-1)

    def corners(self, codes: Optional[np.ndarray] = None) -> np.ndarray:
        """Lower corners of the given cubes."""
        return self.box_min + self.epsilon * self.tuples(codes)

    def centers(self, codes: Optional[np.ndarray] = None) -> np.ndarray:
        """Centers of the given cubes."""
        return self.corners(codes) + 0.5 * self.epsilon

    def cells_of(self, points: np.ndarray) -> np.ndarray:
        """Integer cells of points, ``-1`` rows for points outside the box."""
        points = np.asarray(points, dtype=float)
        rel = (points - self.box_min) / self.epsilon
        cells = np.floor(rel).astype(np.int64)
        # points on the upper box face belong to the last cube
        top = (cells == self.counts) & (rel - self.counts <= CELL_EDGE_TOL)
        cells[top] -= 1
        bad = np.any((cells < 0) | (cells >= self.counts), axis=-1)
        cells[bad] = -1
        return cells

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Positions of points' cubes within ``codes``; ``-1`` if inactive."""
        cells = self.cells_of(points)
        bad = cells[..., 0] < 0
        cells[bad] = 0
        codes = np.ravel_multi_index(np.moveaxis(cells, -1, 0), self.counts)
        pos = np.searchsorted(self.codes, codes)
        pos = np.minimum(pos, self.n_cubes - 1)
        hit = (self.codes[pos] == codes) & ~bad
        return np.where(hit, pos, -1)


def convex_polygon_seed(vertices: np.ndarray) -> Callable:
    """Seed predicate selecting cubes that intersect a convex polygon.

    Uses separating-axis tests against the cube axes and the polygon edge
    normals; touching counts as intersecting.
    """
    verts = np.asarray(vertices, dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2:
        raise ValueError("polygon seed requires (k, 2) vertices")
    edges = np.roll(verts, -1, axis=0) - verts
    normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    axes = np.vstack([np.eye(2), normals])
    poly_proj = verts @ axes.T
    poly_lo = poly_proj.min(axis=0)
    poly_hi = poly_proj.max(axis=0)

    def predicate(lows: np.ndarray, highs: np.ndarray) -> np.ndarray:
        centers = 0.5 * (lows + highs)
        half = 0.5 * (highs - lows)
        proj_c = centers @ axes.T
        proj_r = half @ np.abs(axes).T
        separated = ((proj_c + proj_r < poly_lo - 1e-12)
                     | (proj_c - proj_r > poly_hi + 1e-12))
        return ~np.any(separated, axis=1)

    return predicate


def build_covering(box, epsilon: float, seed_region="all",
                   max_cubes: int = MAX_ACTIVE_CUBES) -> CubeCovering:
    """Cover a box by epsilon-cubes, keeping those meeting the seed region.

    Parameters
    ----------
    box:
        ``(n, 2)`` array of per-axis ``[lo, hi]`` bounds.
    epsilon:
        Cube side length.
    seed_region:
        ``"all"``, a convex-polygon vertex array (planar boxes only), or a
        predicate ``f(lows, highs) -> bool mask`` on batched cube bounds.

    Raises
    ------
    TooManyCubes
        If the active set would exceed ``max_cubes``.
    """
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("box must be (n, 2) with lo < hi per axis")
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    box_min = box[:, 0].copy()
    widths = box[:, 1] - box[:, 0]
    counts = np.ceil(widths / epsilon - CELL_EDGE_TOL).astype(np.int64)
    counts = np.maximum(counts, 1)
    total = int(np.prod(counts))
    if total > max_cubes:
        raise TooManyCubes(
            f"covering would contain {total} cubes, the cap is {max_cubes}")

    if isinstance(seed_region, str) and seed_region == "all":
        codes = np.arange(total, dtype=np.int64)
        return CubeCovering(box_min=box_min, epsilon=float(epsilon),
                            counts=counts, codes=codes)

    if callable(seed_region):
        predicate = seed_region
    else:
        predicate = convex_polygon_seed(seed_region)

    keep_chunks = []
    chunk = 1 << 20
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        cells = np.stack(np.unravel_index(codes, counts), axis=-1)
        lows = box_min + epsilon * cells
        highs = lows + epsilon
        mask = np.asarray(predicate(lows, highs), dtype=bool)
        keep_chunks.append(codes[mask])
    codes = (np.concatenate(keep_chunks) if keep_chunks
             else np.zeros(0, dtype=np.int64))
    if len(codes) > max_cubes:
        raise TooManyCubes(
            f"active set holds {len(codes)} cubes, the cap is {max_cubes}")
    return CubeCovering(box_min=box_min, epsilon=float(epsilon),
                        counts=counts, codes=codes)


# ---------------------------------------------------------------------------
# symbolic images
# ---------------------------------------------------------------------------

@dataclass
class SymbolicImage:
    """Directed graph over active cubes with per-vertex transition times.

    Adjacency is compressed sparse row: vertex ``i`` points to
    ``targets[offsets[i]:offsets[i+1]]`` (vertex indices, sorted).  ``codes``
    keeps each vertex's linear cube code in the covering grid described by
    ``box_min``, ``epsilon`` and ``counts``.
    """

    codes: np.ndarray
    tau: np.ndarray
    offsets: np.ndarray
    targets: np.ndarray
    box_min: np.ndarray
    epsilon: float
    counts: np.ndarray
    kind: str = "rough"
    build_meta: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.codes)

    @property
    def n_edges(self) -> int:
        return len(self.targets)

    def tuples(self) -> np.ndarray:
        return np.stack(np.unravel_index(self.codes, self.counts), axis=-1)

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def in_degrees(self) -> np.ndarray:
        return np.bincount(self.targets, minlength=self.n_vertices)

    def edge_pairs(self) -> np.ndarray:
        """All edges as ``(E, 2)`` vertex-index pairs."""
        src = np.repeat(np.arange(self.n_vertices), self.out_degrees())
        return np.stack([src, self.targets], axis=1)

    def successors(self, i: int) -> np.ndarray:
        return self.targets[self.offsets[i]:self.offsets[i + 1]]


def _csr_from_pairs(n_vertices: int, pairs: np.ndarray):
    """Sorted CSR arrays from (possibly duplicated) edge pairs."""
    if len(pairs):
        keys = pairs[:, 0].astype(np.int64) * n_vertices + pairs[:, 1]
        keys = np.unique(keys)
        src = keys // n_vertices
        dst = keys % n_vertices
    else:
        src = np.zeros(0, dtype=np.int64)
        dst = np.zeros(0, dtype=np.int64)
    offsets = np.zeros(n_vertices + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n_vertices), out=offsets[1:])
    return offsets, dst


def build_rough_image(covering: CubeCovering, system: Callable,
                      tau_assignment=1.0, grid_density: int = 100,
                      lipschitz_bounds=None, inflate_scale: Optional[float] = None,
                      strict: bool = False,
                      chunk_points: int = 4_000_000) -> SymbolicImage:
    """Overapproximating symbolic image from per-cube point grids.

    Every cube is sampled on a uniform grid with ``grid_density + 1`` points
    per side (both faces included); each sample's image adds an edge to the
    containing cube and to every cube intersecting a ball around the image,
    of radius ``inflate_scale * alpha * epsilon / grid_density`` plus a tiny
    round-off pad, where ``alpha`` bounds the largest singular value of the
    step Jacobian over the cube.

    Parameters
    ----------
    system:
        Callable ``points (N, n) -> (images (N, n), jacobians (N, n, n))``
        realizing one transition (its derivative drives the inflation).
    tau_assignment:
        Transition time per vertex; scalar or per-cube array.
    lipschitz_bounds:
        Optional externally supplied stretching bound(s); scalar or
        per-cube array.  Defaults to the per-cube grid maximum of the
        largest singular value.
    inflate_scale:
        Multiplier on ``alpha * epsilon / grid_density``; defaults to
        ``sqrt(n)``, the worst-case grid-diagonal factor.
    strict:
        Raise :class:`EscapedDomain` when an image point leaves the box
        instead of dropping and counting it.

    Raises
    ------
    EscapedDomain
        In strict mode, when an image point leaves the covering box.
    """
    if grid_density < 2:
        raise ValueError("grid_density must be at least 2")
    n = covering.dim
    eps = covering.epsilon
    n_vertices = covering.n_cubes
    if inflate_scale is None:
        inflate_scale = float(np.sqrt(n))

    fractions = np.linspace(0.0, 1.0, grid_density + 1)
    offsets_grid = np.stack(np.meshgrid(*([fractions] * n), indexing="ij"),
                            axis=-1).reshape(-1, n) * eps
    g_pts = len(offsets_grid)

    supplied_alpha = None
    if lipschitz_bounds is not None:
        supplied_alpha = np.broadcast_to(
            np.asarray(lipschitz_bounds, dtype=float), (n_vertices,))

    tau = np.broadcast_to(np.asarray(tau_assignment, dtype=float),
                          (n_vertices,)).copy()

    chunk_cubes = max(1, chunk_points // g_pts)
    edge_chunks: List[np.ndarray] = []
    escaped = 0
    dropped_inactive = 0
    alpha_max = 0.0
    neighbor_span = None

    for start in range(0, n_vertices, chunk_cubes):
        stop = min(start + chunk_cubes, n_vertices)
        m = stop - start
        corners = covering.corners(covering.codes[start:stop])
        pts = (corners[:, None, :] + offsets_grid[None]).reshape(-1, n)
        images, jacs = system(pts)
        images = np.asarray(images, dtype=float)

        if supplied_alpha is not None:
            alpha = supplied_alpha[start:stop]
        else:
            sigma = np.linalg.norm(jacs, ord=2, axis=(-2, -1)) \
                if jacs.shape[-1] > 2 else _sigma_max_2x2(jacs)
            alpha = sigma.reshape(m, g_pts).max(axis=1)
        alpha_max = max(alpha_max, float(alpha.max()))
        radius = (inflate_scale * eps / grid_density + INFLATION_PAD) * alpha
        radius_pt = np.repeat(radius, g_pts)

        rel_lo = (images - radius_pt[:, None] - covering.box_min) / eps
        rel_hi = (images + radius_pt[:, None] - covering.box_min) / eps
        base = np.floor(rel_lo).astype(np.int64)
        last = np.floor(rel_hi).astype(np.int64)
        span = last - base

        off_box = np.any((images < covering.box_min - CELL_EDGE_TOL * eps)
                         | (images > covering.box_max + CELL_EDGE_TOL * eps),
                         axis=1)
        n_escaped = int(np.count_nonzero(off_box))
        if n_escaped and strict:
            bad = int(np.flatnonzero(off_box)[0])
            raise EscapedDomain(
                f"image point {images[bad]} left the covering box")
        escaped += n_escaped

        if neighbor_span is None or span.max() > neighbor_span:
            neighbor_span = int(span.max())
        src_pt = np.repeat(np.arange(start, stop, dtype=np.int64), g_pts)
        keys_here = []
        for combo in itertools.product(range(neighbor_span + 1), repeat=n):
            combo_arr = np.asarray(combo, dtype=np.int64)
            cells = base + combo_arr
            valid = np.all((combo_arr <= span) & (cells >= 0)
                           & (cells < covering.counts), axis=1) & ~off_box
            if not np.any(valid):
                continue
            cells_v = cells[valid]
            # closed cube must intersect the inflated ball
            lows = covering.box_min + eps * cells_v
            gap = np.maximum(lows - images[valid], 0.0) \
                + np.maximum(images[valid] - (lows + eps), 0.0)
            near = np.einsum("ij,ij->i", gap, gap) \
                <= (radius_pt[valid] + CELL_EDGE_TOL * eps) ** 2
            if not np.any(near):
                continue
            cells_v = cells_v[near]
            codes_v = np.ravel_multi_index(np.moveaxis(cells_v, -1, 0),
                                           covering.counts)
            pos = np.searchsorted(covering.codes, codes_v)
            pos = np.minimum(pos, n_vertices - 1)
            hit = covering.codes[pos] == codes_v
            dropped_inactive += int(np.count_nonzero(~hit))
            src_v = src_pt[valid][near][hit]
            keys_here.append(src_v * n_vertices + pos[hit])
        if keys_here:
            edge_chunks.append(np.unique(np.concatenate(keys_here)))

    keys = (np.unique(np.concatenate(edge_chunks)) if edge_chunks
            else np.zeros(0, dtype=np.int64))
    src = keys // n_vertices
    dst = keys % n_vertices
    offsets = np.zeros(n_vertices + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n_vertices), out=offsets[1:])
    meta = {
        "grid_density": int(grid_density),
        "inflate_scale": float(inflate_scale),
        "pad_per_alpha": INFLATION_PAD,
        "escaped": escaped,
        "dropped_inactive": dropped_inactive,
        "alpha_max": alpha_max,
        "strict": strict,
    }
    return SymbolicImage(codes=covering.codes.copy(), tau=tau,
                         offsets=offsets, targets=dst,
                         box_min=covering.box_min.copy(),
                         epsilon=eps, counts=covering.counts.copy(),
                         kind="rough", build_meta=meta)


def _sigma_max_2x2(mats: np.ndarray) -> np.ndarray:
    a = mats[..., 0, 0]
    b = mats[..., 0, 1]
    c = mats[..., 1, 0]
    d = mats[..., 1, 1]
    half_f = 0.5 * (a * a + b * b + c * c + d * d)
    det = a * d - b * c
    gap = np.sqrt(np.maximum(half_f * half_f - det * det, 0.0))
    return np.sqrt(half_f + gap)


def build_heuristic_image(covering: CubeCovering, trajectories,
                          tau: float, lag_samples: int) -> SymbolicImage:
    """Symbolic image from sampled trajectories only (no inflation).

    An edge ``i -> j`` is recorded whenever a trajectory visits cube ``i``
    and, ``lag_samples`` samples later (i.e. time ``tau`` later at the
    trajectory's uniform sampling step), cube ``j``.  The vertex set is
    every visited active cube.

    Parameters
    ----------
    trajectories:
        List of trajectories; each either a ``(T, n)`` array or an iterable
        of ``(B, n)`` blocks (for streamed sampling).

    Raises
    ------
    EmptyGraph
        If no trajectory point lies in the covering.
    """
    if lag_samples < 1:
        raise ValueError("lag_samples must be a positive integer")
    n_vertices = covering.n_cubes
    visited_chunks: List[np.ndarray] = []
    key_chunks: List[np.ndarray] = []
    any_point = False

    for traj in trajectories:
        blocks = [traj] if isinstance(traj, np.ndarray) else traj
        carry = None  # last lag_samples positions of the previous blocks
        for block in blocks:
            block = np.asarray(block, dtype=float)
            if block.ndim != 2 or block.shape[1] != covering.dim:
                raise ValueError("trajectory blocks must be (B, n) arrays")
            if carry is not None:
                seq = np.concatenate([carry, block], axis=0)
            else:
                seq = block
            pos = covering.locate(seq)
            live = pos >= 0
            if np.any(live):
                any_point = True
                visited_chunks.append(np.unique(pos[live]))
            if len(seq) > lag_samples:
                head = pos[:-lag_samples]
                tail = pos[lag_samples:]
                ok = (head >= 0) & (tail >= 0)
                if np.any(ok):
                    key_chunks.append(np.unique(
                        head[ok] * n_vertices + tail[ok]))
            carry = seq[-lag_samples:] if len(seq) >= lag_samples else seq

    if not any_point:
        raise EmptyGraph("no trajectory point lies in the covering")

    keys = (np.unique(np.concatenate(key_chunks)) if key_chunks
            else np.zeros(0, dtype=np.int64))
    src_full = keys // n_vertices
    dst_full = keys % n_vertices
    visited = (np.unique(np.concatenate(visited_chunks)) if visited_chunks
               else np.zeros(0, dtype=np.int64))

    # compress to visited vertices
    v_codes = covering.codes[visited]
    src = np.searchsorted(visited, src_full)
    dst = np.searchsorted(visited, dst_full)
    n_new = len(visited)
    offsets = np.zeros(n_new + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n_new), out=offsets[1:])
    meta = {"lag_samples": int(lag_samples),
            "n_trajectories": len(trajectories)}
    return SymbolicImage(codes=v_codes, tau=np.full(n_new, float(tau)),
                         offsets=offsets, targets=dst,
                         box_min=covering.box_min.copy(),
                         epsilon=covering.epsilon,
                         counts=covering.counts.copy(),
                         kind="heuristic", build_meta=meta)


# ---------------------------------------------------------------------------
# pruning
# ---------------------------------------------------------------------------

def prune_sinks_sources(g: SymbolicImage) -> SymbolicImage:
    """Iteratively remove vertices with no successors or no predecessors.

    The result is the largest subgraph in which every vertex lies on a
    two-sided infinite path; simple cycles are untouched.  Idempotent.

    Raises
    ------
    EmptyGraph
        If nothing survives.
    """
    pairs = g.edge_pairs()
    alive = np.ones(g.n_vertices, dtype=bool)
    src, dst = pairs[:, 0], pairs[:, 1]
    edge_alive = np.ones(len(src), dtype=bool)
    while True:
        out_deg = np.bincount(src[edge_alive], minlength=g.n_vertices)
        in_deg = np.bincount(dst[edge_alive], minlength=g.n_vertices)
        keep = alive & (out_deg > 0) & (in_deg > 0)
        if np.array_equal(keep, alive):
            break
        alive = keep
        edge_alive = alive[src] & alive[dst]
    if not np.any(alive):
        raise EmptyGraph("pruning removed every vertex")

    new_ids = -np.ones(g.n_vertices, dtype=np.int64)
    survivors = np.flatnonzero(alive)
    new_ids[survivors] = np.arange(len(survivors))
    s = new_ids[src[edge_alive]]
    d = new_ids[dst[edge_alive]]
    order = np.lexsort((d, s))
    s, d = s[order], d[order]
    offsets = np.zeros(len(survivors) + 1, dtype=np.int64)
    np.cumsum(np.bincount(s, minlength=len(survivors)), out=offsets[1:])
    meta = dict(g.build_meta)
    meta["pruned_from"] = g.n_vertices
    return SymbolicImage(codes=g.codes[survivors], tau=g.tau[survivors],
                         offsets=offsets, targets=d,
                         box_min=g.box_min.copy(), epsilon=g.epsilon,
                         counts=g.counts.copy(), kind=g.kind,
                         build_meta=meta)


# ---------------------------------------------------------------------------
# symmetry actions and quotients
# ---------------------------------------------------------------------------

@dataclass
class VertexGroupAction:
    """Vertex permutations realizing matrix symmetries on a symbolic image."""

    permutations: List[np.ndarray]
    matrices: List[np.ndarray]


def _signed_permutation_parts(s: np.ndarray):
    """Decompose a signed permutation matrix into (source axis, sign) rows."""
    n = s.shape[0]
    axes = np.zeros(n, dtype=np.int64)
    signs = np.zeros(n, dtype=np.int64)
    for i in range(n):
        row = s[i]
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if len(nz) != 1 or abs(abs(row[nz[0]]) - 1.0) > 1e-12:
            raise GridMismatch(
                "matrix is not a signed permutation; it cannot map the cube "
                "grid onto itself")
        axes[i] = nz[0]
        signs[i] = 1 if row[nz[0]] > 0 else -1
    if len(np.unique(axes)) != n:
        raise GridMismatch("matrix is not a signed permutation")
    return axes, signs


def _permute_codes(g: SymbolicImage, s: np.ndarray) -> np.ndarray:
    """Image cube code of each vertex under a signed permutation matrix."""
    axes, signs = _signed_permutation_parts(s)
    eps = g.epsilon
    tuples = g.tuples()
    new_cells = np.empty_like(tuples)
    for i in range(g.counts.shape[0]):
        j = axes[i]
        if signs[i] > 0:
            shift = (g.box_min[j] - g.box_min[i]) / eps
            k = tuples[:, j] + shift
        else:
            shift = (-g.box_min[j] - g.box_min[i]) / eps
            k = shift - tuples[:, j] - 1
        k_round = np.rint(k)
        if np.abs(k - k_round).max() > 1e-6:
            raise GridMismatch(
                f"matrix shifts axis {i} off the cube grid")
        new_cells[:, i] = k_round.astype(np.int64)
    if np.any(new_cells < 0) or np.any(new_cells >= g.counts):
        raise GridMismatch("matrix maps an active cube outside the box")
    return np.ravel_multi_index(np.moveaxis(new_cells, -1, 0), g.counts)


def detect_vertex_action(g: SymbolicImage, matrices) -> VertexGroupAction:
    """Vertex permutations induced by grid-compatible matrices.

    Each matrix must be a signed permutation compatible with the cube grid,
    must map the vertex set onto itself, preserve every edge and the
    transition times.

    Raises
    ------
    GridMismatch
        If a matrix is incompatible with the grid or does not map active
        cubes onto active cubes.
    NotEdgePreserving
        If some edge's image is not an edge (a counterexample is reported).
    InvarianceViolation
        If transition times differ between a vertex and its image.
    """
    perms = []
    mats = []
    for s in matrices:
        s = np.asarray(s, dtype=float)
        image_codes = _permute_codes(g, s)
        pos = np.searchsorted(g.codes, image_codes)
        pos = np.minimum(pos, g.n_vertices - 1)
        if not np.all(g.codes[pos] == image_codes):
            missing = int(np.flatnonzero(g.codes[pos] != image_codes)[0])
            raise GridMismatch(
                f"vertex {missing} maps to a cube outside the vertex set")
        perm = pos
        if np.abs(g.tau[perm] - g.tau).max() > 0.0:
            raise InvarianceViolation(
                "transition times are not invariant under the matrix")
        pairs = g.edge_pairs()
        mapped = np.stack([perm[pairs[:, 0]], perm[pairs[:, 1]]], axis=1)
        keys = pairs[:, 0] * g.n_vertices + pairs[:, 1]
        mapped_keys = mapped[:, 0] * g.n_vertices + mapped[:, 1]
        missing_mask = ~np.isin(mapped_keys, keys)
        if np.any(missing_mask):
            k = int(np.flatnonzero(missing_mask)[0])
            raise NotEdgePreserving(
                f"edge {tuple(pairs[k])} maps to {tuple(mapped[k])}, which "
                "is not an edge")
        perms.append(perm)
        mats.append(s)
    return VertexGroupAction(permutations=perms, matrices=mats)


def quotient_graph(g: SymbolicImage, action: VertexGroupAction):
    """Collapse vertices into orbits of the group action.

    Returns ``(quotient, projection)`` where ``projection[i]`` is the
    quotient vertex of ``i``.  Transition times must be constant on orbits.

    Raises
    ------
    InvarianceViolation
        If transition times differ within an orbit.
    """
    parent = np.arange(g.n_vertices)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for perm in action.permutations:
        for i in range(g.n_vertices):
            a, b = find(i), find(perm[i])
            if a != b:
                parent[max(a, b)] = min(a, b)
    roots = np.array([find(i) for i in range(g.n_vertices)])
    reps, projection = np.unique(roots, return_inverse=True)

    for orbit in range(len(reps)):
        taus = g.tau[projection == orbit]
        if taus.max() - taus.min() > 0.0:
            raise InvarianceViolation(
                f"transition times differ within orbit {orbit}")

    pairs = g.edge_pairs()
    q_pairs = np.stack([projection[pairs[:, 0]], projection[pairs[:, 1]]],
                       axis=1)
    offsets, targets = _csr_from_pairs(len(reps), q_pairs)
    meta = dict(g.build_meta)
    meta["quotient_of"] = g.n_vertices
    quotient = SymbolicImage(codes=g.codes[reps], tau=g.tau[reps],
                             offsets=offsets, targets=targets,
                             box_min=g.box_min.copy(), epsilon=g.epsilon,
                             counts=g.counts.copy(), kind=g.kind,
                             build_meta=meta)
    return quotient, projection


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_CRC64_POLY = 0x42F0E1EBA9EA3693
_CRC64_TABLES = None


def _crc64_tables():
    global _CRC64_TABLES
    if _CRC64_TABLES is not None:
        return _CRC64_TABLES
    table0 = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ (_CRC64_POLY_REFLECTED if crc & 1 else 0)
        table0.append(crc)
    tables = [table0]
    for t in range(1, 8):
        prev = tables[t - 1]
        tables.append([table0[v & 0xFF] ^ (v >> 8) for v in prev])
    _CRC64_TABLES = tables
    return tables


# reflected form of the polynomial, used by the common 64-bit checksum
_CRC64_POLY_REFLECTED = 0xC96C5795D7870F42


def crc64(data: bytes) -> int:
    """64-bit CRC (reflected 0x42F0E1EBA9EA3693, init/xorout all-ones)."""
    tables = _crc64_tables()
    t0, t1, t2, t3, t4, t5, t6, t7 = tables
    crc = 0xFFFFFFFFFFFFFFFF
    view = memoryview(data)
    n8 = len(view) - (len(view) % 8)
    words = np.frombuffer(view[:n8], dtype="<u8")
    for w in words.tolist():
        x = crc ^ w
        crc = (t7[x & 0xFF] ^ t6[(x >> 8) & 0xFF]
               ^ t5[(x >> 16) & 0xFF] ^ t4[(x >> 24) & 0xFF]
               ^ t3[(x >> 32) & 0xFF] ^ t2[(x >> 40) & 0xFF]
               ^ t1[(x >> 48) & 0xFF] ^ t0[(x >> 56) & 0xFF])
    for b in view[n8:]:
        crc = t0[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFFFFFFFFFF


def save_graph(g: SymbolicImage, path) -> None:
    """Write a symbolic image in the checksummed little-endian format."""
    n = len(g.box_min)
    parts = [GRAPH_MAGIC,
             np.uint32(GRAPH_VERSION).tobytes(),
             np.uint8(n).tobytes(),
             np.asarray(g.epsilon, dtype="<f8").tobytes(),
             np.asarray(g.box_min, dtype="<f8").tobytes(),
             np.uint64(g.n_vertices).tobytes()]
    tuples = g.tuples().astype("<u4")
    per_vertex = np.empty((g.n_vertices, n * 4 + 8), dtype=np.uint8)
    per_vertex[:, :n * 4] = tuples.view(np.uint8).reshape(g.n_vertices, -1)
    per_vertex[:, n * 4:] = np.asarray(g.tau, dtype="<f8").view(
        np.uint8).reshape(g.n_vertices, -1)
    parts.append(per_vertex.tobytes())
    parts.append(np.uint64(g.n_edges).tobytes())
    parts.append(np.asarray(g.offsets, dtype="<u8").tobytes())
    target_dtype = "<u4" if g.n_vertices < (1 << 32) else "<u8"
    parts.append(np.asarray(g.targets, dtype=target_dtype).tobytes())
    payload = b"".join(parts)
    checksum = np.uint64(crc64(payload)).tobytes()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(checksum)


def load_graph(path) -> SymbolicImage:
    """Read a symbolic image written by :func:`save_graph`.

    Raises
    ------
    VersionMismatch
        On a foreign magic string or unsupported version.
    ChecksumError
        If the trailing checksum does not match the payload.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 17 or blob[:4] != GRAPH_MAGIC:
        raise VersionMismatch("not a symbolic-image graph file")
    payload, stored = blob[:-8], blob[-8:]
    if crc64(payload) != int(np.frombuffer(stored, dtype="<u8")[0]):
        raise ChecksumError("graph file is corrupted (checksum mismatch)")
    cursor = 4
    version = int(np.frombuffer(payload, dtype="<u4", count=1,
                                offset=cursor)[0])
    if version != GRAPH_VERSION:
        raise VersionMismatch(f"unsupported graph version {version}")
    cursor += 4
    n = int(payload[cursor])
    cursor += 1
    epsilon = float(np.frombuffer(payload, dtype="<f8", count=1,
                                  offset=cursor)[0])
    cursor += 8
    box_min = np.frombuffer(payload, dtype="<f8", count=n,
                            offset=cursor).copy()
    cursor += 8 * n
    n_vertices = int(np.frombuffer(payload, dtype="<u8", count=1,
                                   offset=cursor)[0])
    cursor += 8
    stride = n * 4 + 8
    per_vertex = np.frombuffer(payload, dtype=np.uint8,
                               count=n_vertices * stride,
                               offset=cursor).reshape(n_vertices, stride)
    tuples = per_vertex[:, :n * 4].copy().view("<u4").astype(np.int64)
    tau = per_vertex[:, n * 4:].copy().view("<f8").ravel()
    cursor += n_vertices * stride
    n_edges = int(np.frombuffer(payload, dtype="<u8", count=1,
                                offset=cursor)[0])
    cursor += 8
    offsets = np.frombuffer(payload, dtype="<u8", count=n_vertices + 1,
                            offset=cursor).astype(np.int64)
    cursor += 8 * (n_vertices + 1)
    target_dtype = "<u4" if n_vertices < (1 << 32) else "<u8"
    width = 4 if target_dtype == "<u4" else 8
    targets = np.frombuffer(payload, dtype=target_dtype, count=n_edges,
                            offset=cursor).astype(np.int64)
    cursor += width * n_edges
    if cursor != len(payload):
        raise VersionMismatch("graph file has trailing data")
    # the grid extent is not part of the format; the tightest grid holding
    # all stored index tuples reproduces identical files on re-save
    counts = (tuples.max(axis=0) + 1 if n_vertices
              else np.ones(n, dtype=np.int64))
    codes = np.ravel_multi_index(np.moveaxis(tuples, -1, 0), counts)
    return SymbolicImage(codes=codes, tau=tau, offsets=offsets,
                         targets=targets, box_min=box_min, epsilon=epsilon,
                         counts=counts, kind="loaded", build_meta={})


def export_graph_csv(g: SymbolicImage, edges_path, vertices_path,
                     weights: Optional[np.ndarray] = None,
                     header_comment=None) -> None:
    """Write edges as ``src,dst`` and a ``vertex,tau,weight`` sidecar."""
    pairs = g.edge_pairs()
    comment = f"# {header_comment}\n" if header_comment else ""
    with open(edges_path, "w") as fh:
        fh.write(comment)
        fh.write("src,dst\n")
        for s, d in pairs:
            fh.write(f"{s},{d}\n")
    with open(vertices_path, "w") as fh:
        fh.write(comment)
        fh.write("vertex,tau,weight\n")
        for i in range(g.n_vertices):
            w = "" if weights is None else repr(float(weights[i]))
            fh.write(f"{i},{float(g.tau[i])!r},{w}\n")
