"""Time-periodic metrics along periodic orbits.

For a periodic orbit the fundamental solution factors as ``Phi(t) = C(t)
exp(t B) C(0)^{-1}`` with ``C`` periodic; measuring the variational flow in
the metric ``P(t) = C(t)^{-T} C(t)^{-1}`` makes the singular values of every
adjusted transition exactly ``exp(dt * Re(lambda_j))``, the sharpest bound a
metric can achieve on the orbit.

Building ``C`` naively as ``Phi(t) exp(-t B)`` multiplies rounding error by
the spread of the multipliers, which is astronomically large for stiff
orbits.  Instead each invariant direction is tracked in its own
one- or two-dimensional frame: transition factors are accumulated inside
the subspace, where they stay of moderate size, and the full-period
accumulation recovers the multiplier to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import (VectorField, integrate_with_variational_batch)
from .errors import IllConditioned, NoConvergence, NoRealLogarithm, NotASymmetry
from .ode import integrate

__all__ = ["FloquetMetricField", "floquet_metric",
           "symmetry_transport_floquet"]

# Relative threshold below which an eigenvalue's imaginary part is noise.
REAL_EIG_TOL = 1e-9
# Multipliers closer than this (relatively) cannot be separated reliably.
MULTIPLIER_GAP_TOL = 1e-6
# Allowed drift between accumulated in-frame loop products and multipliers.
LOOP_CONSISTENCY_TOL = 1e-6
# Default condition-number ceiling for the periodic basis.
COND_LIMIT = 1e8
# Default number of grid samples per period.
N_SAMPLES = 512
# Allowed closure error |phi_T(q) - q| relative to orbit scale.
CLOSURE_TOL = 1e-6


def _real_eigvec(col: np.ndarray) -> np.ndarray:
    """Rotate a numerically real complex eigenvector into a real unit vector."""
    idx = int(np.argmax(np.abs(col)))
    phase = col[idx] / abs(col[idx])
    vec = (col * np.conj(phase)).real
    return vec / np.linalg.norm(vec)


def _logm_small(mat: np.ndarray) -> np.ndarray:
    """Real logarithm of a small real matrix with non-degenerate spectrum."""
    w, v = np.linalg.eig(mat)
    if np.any(np.abs(w) == 0.0):
        raise NoRealLogarithm("matrix is singular")
    if np.any((np.abs(w.imag) <= REAL_EIG_TOL * np.abs(w)) & (w.real <= 0.0)):
        raise NoRealLogarithm(
            "matrix has an eigenvalue on the closed negative real axis")
    log = v @ np.diag(np.log(w.astype(complex))) @ np.linalg.inv(v)
    return log.real


def _expm_small(mat: np.ndarray) -> np.ndarray:
    """Matrix exponential of a small real matrix via eigendecomposition."""
    if mat.shape == (1, 1):
        return np.exp(mat)
    w, v = np.linalg.eig(mat)
    exp = v @ np.diag(np.exp(w)) @ np.linalg.inv(v)
    return exp.real


@dataclass
class FloquetMetricField:
    """Periodic metric and orthonormalizing basis sampled along an orbit.

    ``metrics[k]`` and ``bases[k]`` are the metric ``P`` and the column
    basis ``C`` at ``times[k]``; ``C(t)^T P(t) C(t) = I`` holds at the grid
    points and intermediate times interpolate linearly.  ``exponents`` are
    the orbit's characteristic exponents' real parts sorted descending.
    """

    anchor: np.ndarray
    period: float
    times: np.ndarray
    points: np.ndarray
    metrics: np.ndarray
    bases: np.ndarray
    multipliers: np.ndarray
    exponents: np.ndarray

    def _interp(self, table: np.ndarray, t):
        t = np.asarray(t, dtype=float)
        tm = np.mod(t, self.period)
        idx = np.searchsorted(self.times, tm, side="right") - 1
        idx = np.clip(idx, 0, len(self.times) - 2)
        h = self.times[idx + 1] - self.times[idx]
        theta = (tm - self.times[idx]) / h
        shape = (1,) * (table.ndim - 1)
        theta = theta.reshape(theta.shape + shape)
        return (1.0 - theta) * table[idx] + theta * table[idx + 1]

    def metric_at(self, t):
        """Metric ``P(t)``, periodically extended; ``t`` may be an array."""
        return self._interp(self.metrics, t)

    def basis_at(self, t):
        """Basis ``C(t)``, periodically extended; ``t`` may be an array."""
        return self._interp(self.bases, t)

    def point_at(self, t):
        """Orbit point at phase ``t``."""
        return self._interp(self.points, t)


def _group_blocks(multipliers: np.ndarray):
    """Split the spectrum into real directions and complex-conjugate planes."""
    scale = max(1.0, float(np.max(np.abs(multipliers))))
    blocks = []
    used = np.zeros(len(multipliers), dtype=bool)
    for i, mu in enumerate(multipliers):
        if used[i]:
            continue
        if abs(mu.imag) <= REAL_EIG_TOL * max(1.0, abs(mu)):
            if mu.real <= 0.0:
                raise NoRealLogarithm(
                    f"multiplier {mu.real:.6g} is not positive; the "
                    "one-period logarithm has no real branch")
            blocks.append({"kind": "real", "mu": complex(mu.real, 0.0)})
            used[i] = True
        else:
            rep = complex(mu.real, abs(mu.imag))
            j = int(np.argmin(np.abs(multipliers - np.conj(rep))
                              + np.where(used, np.inf, 0.0)
                              + np.where(np.arange(len(used)) == i, np.inf,
                                         0.0)))
            used[i] = True
            used[j] = True
            blocks.append({"kind": "pair", "mu": rep})
    reps = [b["mu"] for b in blocks]
    for a in range(len(reps)):
        for b in range(a + 1, len(reps)):
            if abs(reps[a] - reps[b]) <= MULTIPLIER_GAP_TOL * scale:
                raise IllConditioned(
                    "multipliers are too clustered to separate directions: "
                    f"{reps[a]:.6g} vs {reps[b]:.6g}")
    return blocks


def _block_frame(block, w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Orthonormal frame of a block's invariant subspace from ``eig`` output."""
    mu = block["mu"]
    if block["kind"] == "real":
        idx = int(np.argmin(np.abs(w - mu)))
        return _real_eigvec(v[:, idx])[:, None]
    cand = np.where(w.imag >= 0.0, w, np.conj(w))
    idx = int(np.argmin(np.abs(cand - mu)))
    col = v[:, idx]
    if w[idx].imag < 0.0:
        col = np.conj(col)
    raw = np.stack([col.real, col.imag], axis=1)
    q, _ = np.linalg.qr(raw)
    return q


def floquet_metric(field: VectorField, anchor: np.ndarray, period: float,
                   n_samples: int = N_SAMPLES, atol: float = 1e-12,
                   cond_limit: float = COND_LIMIT) -> FloquetMetricField:
    """Construct the optimal periodic metric along a closed trajectory.

    Parameters
    ----------
    field:
        Autonomous vector field with Jacobian.
    anchor, period:
        A point on the orbit and its period; refine these first, the
        construction assumes the trajectory closes.
    n_samples:
        Grid resolution per period.
    atol:
        Absolute integration tolerance for orbit and transition matrices.
    cond_limit:
        Ceiling on the condition number of the basis ``C(t)``.

    Raises
    ------
    NoRealLogarithm
        If a multiplier is real and non-positive, so no real one-period
        matrix logarithm exists.
    IllConditioned
        If multipliers cluster or the basis condition number exceeds
        ``cond_limit``.
    NoConvergence
        If the trajectory from ``anchor`` fails to close after ``period``.
    """
    anchor = np.asarray(anchor, dtype=float)
    n = field.dim
    period = float(period)
    if period <= 0.0:
        raise ValueError("period must be positive")
    k_grid = int(n_samples)
    h = period / k_grid
    times = np.linspace(0.0, period, k_grid + 1)

    _, samples = integrate(lambda _t, q: field.rhs(q), anchor, 0.0, period,
                           atol=atol, t_eval=times)
    scale = max(1.0, float(np.max(np.abs(samples))))
    closure = float(np.max(np.abs(samples[-1] - anchor)))
    if closure > CLOSURE_TOL * scale:
        raise NoConvergence(
            f"trajectory from anchor misses itself by {closure:.3g} after "
            "one period; refine the orbit first")
    points = samples[:k_grid]

    # one-segment transition matrices, batched over the grid
    ends, trans = integrate_with_variational_batch(field, points, h,
                                                   atol=atol)
    drift = float(np.max(np.abs(ends - samples[1:k_grid + 1])))
    if drift > CLOSURE_TOL * scale:
        raise NoConvergence(
            f"segment endpoints drift from the sampled orbit by {drift:.3g}")

    # similarity-transported one-period matrices at every grid point
    m_grid = np.empty((k_grid, n, n))
    m_full = np.eye(n)
    for k in range(k_grid):
        m_full = trans[k] @ m_full
    m_grid[0] = m_full
    for k in range(k_grid - 1):
        m_grid[k + 1] = trans[k] @ m_grid[k] @ np.linalg.inv(trans[k])

    multipliers = np.linalg.eigvals(m_full)
    order = np.argsort(-np.abs(multipliers))
    multipliers = multipliers[order]
    blocks = _group_blocks(multipliers)

    # per-grid frames and in-frame transition factors
    frames = []
    for k in range(k_grid):
        w, v = np.linalg.eig(m_grid[k])
        frames.append([_block_frame(b, w, v) for b in blocks])
    cum = [[np.eye(f.shape[1])] for f in frames[0]]
    for k in range(k_grid):
        nxt = frames[(k + 1) % k_grid]
        for j, blk in enumerate(blocks):
            rho = nxt[j].T @ trans[k] @ frames[k][j]
            cum[j].append(rho @ cum[j][k])

    # full-loop consistency and block generators
    gens = []
    for j, blk in enumerate(blocks):
        loop = cum[j][k_grid]
        loop_eigs = np.linalg.eigvals(loop)
        mu = blk["mu"]
        targets = ([mu] if blk["kind"] == "real" else [mu, np.conj(mu)])
        err = max(min(abs(le - t) for le in loop_eigs) for t in targets)
        if err > LOOP_CONSISTENCY_TOL * max(1.0, abs(mu)):
            raise IllConditioned(
                f"in-frame loop product drifted from multiplier {mu:.6g} "
                f"by {err:.3g}")
        gens.append(_logm_small(loop) / period)

    # assemble the periodic basis and the metric
    bases = np.empty((k_grid + 1, n, n))
    for k in range(k_grid + 1):
        cols = []
        for j, blk in enumerate(blocks):
            u = frames[k % k_grid][j]
            cols.append(u @ cum[j][k] @ _expm_small(-times[k] * gens[j]))
        bases[k] = np.concatenate(cols, axis=1)

    svals = np.linalg.svd(bases, compute_uv=False)
    conds = svals[:, 0] / svals[:, -1]
    if float(np.max(conds)) > cond_limit:
        raise IllConditioned(
            f"basis condition number {np.max(conds):.3g} exceeds the limit "
            f"{cond_limit:.3g}")

    gram = bases @ np.swapaxes(bases, 1, 2)
    metrics = np.linalg.inv(gram)
    metrics = 0.5 * (metrics + np.swapaxes(metrics, 1, 2))

    exponents = np.sort(np.log(np.abs(multipliers)))[::-1] / period
    all_points = np.concatenate([points, anchor[None]], axis=0)
    return FloquetMetricField(anchor=anchor, period=period, times=times,
                              points=all_points, metrics=metrics,
                              bases=bases, multipliers=multipliers,
                              exponents=exponents)


def symmetry_transport_floquet(source: FloquetMetricField,
                               s_matrix: np.ndarray,
                               anchor_image: np.ndarray,
                               field: Optional[VectorField] = None,
                               tol: float = 1e-6) -> FloquetMetricField:
    """Transport a periodic metric to a symmetry-related orbit.

    ``s_matrix`` must map the image orbit onto the source orbit; the
    returned field carries ``P'(t) = S^T P(t + t0) S`` where ``t0`` aligns
    ``S @ anchor_image`` with the source parametrization.  Orthonormality
    of the transported basis is inherited exactly.

    Raises
    ------
    NotASymmetry
        If ``S @ anchor_image`` is not on the source orbit, or (when
        ``field`` is given) the field does not commute with ``S``.
    """
    s = np.asarray(s_matrix, dtype=float)
    anchor_image = np.asarray(anchor_image, dtype=float)
    try:
        s_inv = np.linalg.inv(s)
    except np.linalg.LinAlgError as exc:
        raise NotASymmetry("symmetry matrix is singular") from exc

    scale = max(1.0, float(np.max(np.abs(source.points))))
    if field is not None:
        probe = source.points[:: max(1, len(source.points) // 16)]
        lhs = field.rhs(probe @ s.T)
        rhs = field.rhs(probe) @ s.T
        if float(np.max(np.abs(lhs - rhs))) > tol * max(
                1.0, float(np.max(np.abs(rhs)))):
            raise NotASymmetry("field does not commute with the matrix")

    mapped = anchor_image @ s.T
    k_grid = len(source.points) - 1
    dists = np.linalg.norm(source.points[:k_grid] - mapped, axis=1)
    k0 = int(np.argmin(dists))
    if dists[k0] > max(tol * scale, 1.1 * _grid_spacing(source)):
        raise NotASymmetry(
            f"mapped anchor misses the source orbit by {dists[k0]:.3g}")

    def roll(table: np.ndarray) -> np.ndarray:
        core = np.roll(table[:k_grid], -k0, axis=0)
        return np.concatenate([core, core[:1]], axis=0)

    points = roll(source.points) @ s_inv.T
    metrics = np.swapaxes(s, 0, 1) @ roll(source.metrics) @ s
    bases = s_inv @ roll(source.bases)
    return FloquetMetricField(anchor=points[0], period=source.period,
                              times=source.times.copy(), points=points,
                              metrics=metrics, bases=bases,
                              multipliers=source.multipliers.copy(),
                              exponents=source.exponents.copy())


def _grid_spacing(fieldmetric: FloquetMetricField) -> float:
    steps = np.linalg.norm(np.diff(fieldmetric.points, axis=0), axis=1)
    return float(np.max(steps))
