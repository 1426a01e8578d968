"""Singular-value kernel: ordered singular values, fractional singular value
functions, SPD square roots, metric-adjusted matrices and compound matrices.

All functions accept stacked inputs with shape ``(..., n, n)`` where that is
meaningful; the batch axes are vectorized.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import NotSpd

# Relative eigenvalue floor below which a symmetric matrix is rejected as not
# positive definite.
SPD_EIG_FLOOR = 1e-14
# Multiply-back tolerance for the SPD square root (checked in tests).
SPD_RECONSTRUCT_TOL = 1e-10
# Symmetry tolerance (relative) for SPD inputs.
SPD_SYMMETRY_TOL = 1e-10
# Absolute-ish gap under which two singular values count as crossing.
SV_CROSSING_GAP = 1e-8


def singular_values(mat: np.ndarray) -> np.ndarray:
    """Singular values of ``mat`` in descending order.

    Parameters
    ----------
    mat : ndarray, shape (..., n, k)
        Real matrix or stack of matrices.

    Returns
    -------
    ndarray, shape (..., min(n, k))
        Singular values, largest first.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.shape[-2:] == (2, 2):
        return _singular_values_2x2(mat)
    return np.linalg.svd(mat, compute_uv=False)


def _singular_values_2x2(mat: np.ndarray) -> np.ndarray:
    """Closed-form singular values for stacks of real 2x2 matrices.

    sigma_1 is computed from the Frobenius norm split; sigma_2 via
    |det|/sigma_1, which avoids cancellation when sigma_2 << sigma_1.
    """
    a = mat[..., 0, 0]
    b = mat[..., 0, 1]
    c = mat[..., 1, 0]
    d = mat[..., 1, 1]
    q1 = a * a + b * b + c * c + d * d
    q2 = np.hypot(a * a + b * b - c * c - d * d, 2.0 * (a * c + b * d))
    s1 = np.sqrt(np.maximum(0.5 * (q1 + q2), 0.0))
    det = np.abs(a * d - b * c)
    with np.errstate(divide="ignore", invalid="ignore"):
        s2 = np.where(s1 > 0.0, det / np.where(s1 > 0.0, s1, 1.0), 0.0)
    return np.stack([s1, s2], axis=-1)


def omega_d_from_singular_values(sv: np.ndarray, d: float) -> np.ndarray:
    """Singular value function ``omega_d`` given descending singular values."""
    return np.exp(ln_omega_d_from_singular_values(sv, d))


def ln_omega_d_from_singular_values(sv: np.ndarray, d: float) -> np.ndarray:
    """Natural log of the singular value function, ``-inf`` on singular input.

    ``d = m + s`` with integer ``m >= 0`` and ``s in (0, 1]``;
    ``ln omega_d = sum_{j<=m} ln sigma_j + s ln sigma_{m+1}``, and
    ``omega_0 := 1``.
    """
    sv = np.asarray(sv, dtype=float)
    n = sv.shape[-1]
    if d < 0.0 or d > n:
        raise ValueError(f"d must lie in [0, {n}], got {d}")
    if d == 0.0:
        return np.zeros(sv.shape[:-1])
    m = int(np.ceil(d)) - 1
    s = d - m
    with np.errstate(divide="ignore"):
        logs = np.log(sv)
    full = logs[..., :m].sum(axis=-1)
    return full + s * logs[..., m]


def omega_d(mat: np.ndarray, d: float) -> np.ndarray:
    """Singular value function ``omega_d(mat)``.

    Parameters
    ----------
    mat : ndarray, shape (..., n, n)
    d : float
        Dimension-like parameter in ``[0, n]``; ``omega_0 := 1``.
    """
    return omega_d_from_singular_values(singular_values(mat), d)


def _check_spd(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != p.shape[-2]:
        raise ValueError("expected square matrix")
    scale = np.abs(p).max()
    if scale == 0.0:
        raise NotSpd("zero matrix")
    if np.abs(p - np.swapaxes(p, -1, -2)).max() > SPD_SYMMETRY_TOL * scale:
        raise NotSpd("matrix is not symmetric")
    return p


def spd_sqrt(p: np.ndarray) -> np.ndarray:
    """Symmetric positive definite square root of ``p``.

    Raises
    ------
    NotSpd
        If ``p`` is not symmetric or has an eigenvalue below
        ``SPD_EIG_FLOOR`` times its largest eigenvalue.
    """
    p = _check_spd(p)
    if p.shape[-2:] == (2, 2) and p.ndim >= 2:
        # Fast closed form: sqrt(P) = (P + sqrt(det) I) / sqrt(tr + 2 sqrt(det))
        det = p[..., 0, 0] * p[..., 1, 1] - p[..., 0, 1] * p[..., 1, 0]
        tr = p[..., 0, 0] + p[..., 1, 1]
        disc = tr * tr - 4.0 * det
        lam_max = 0.5 * (tr + np.sqrt(np.maximum(disc, 0.0)))
        lam_min = np.where(lam_max > 0, det / np.where(lam_max > 0, lam_max, 1.0), 0.0)
        if np.any(lam_min < SPD_EIG_FLOOR * lam_max) or np.any(lam_max <= 0):
            raise NotSpd("eigenvalue below positive-definiteness floor")
        s = np.sqrt(det)
        t = np.sqrt(tr + 2.0 * s)
        out = p / t[..., None, None]
        idx = np.arange(2)
        out[..., idx, idx] += (s / t)[..., None]
        return out
    lam, q = np.linalg.eigh(p)
    lam_max = lam[..., -1]
    if np.any(lam[..., 0] < SPD_EIG_FLOOR * lam_max) or np.any(lam_max <= 0):
        raise NotSpd("eigenvalue below positive-definiteness floor")
    root = np.sqrt(lam)
    return np.einsum("...ij,...j,...kj->...ik", q, root, q)


def spd_inv_sqrt(p: np.ndarray) -> np.ndarray:
    """Inverse of the SPD square root, with the same validity checks."""
    p = _check_spd(p)
    lam, q = np.linalg.eigh(p)
    lam_max = lam[..., -1]
    if np.any(lam[..., 0] < SPD_EIG_FLOOR * lam_max) or np.any(lam_max <= 0):
        raise NotSpd("eigenvalue below positive-definiteness floor")
    root = 1.0 / np.sqrt(lam)
    return np.einsum("...ij,...j,...kj->...ik", q, root, q)


def metric_adjusted_matrix(jac: np.ndarray, p_src: np.ndarray,
                           p_dst: np.ndarray) -> np.ndarray:
    """Adjusted matrix ``sqrt(P_dst) @ jac @ sqrt(P_src)^{-1}``.

    Singular values of the result are the singular values of ``jac`` measured
    from the ``P_src`` inner product at the source point to the ``P_dst``
    inner product at the image point.
    """
    return spd_sqrt(p_dst) @ np.asarray(jac, dtype=float) @ spd_inv_sqrt(p_src)


def compound_matrix(mat: np.ndarray, m: int) -> np.ndarray:
    """``m``-th multiplicative compound: all ``m x m`` minors of ``mat``.

    Rows and columns are indexed by the ``m``-element subsets of
    ``{0, ..., n-1}`` in lexicographic order; entry ``(I, J)`` is the minor
    ``det(mat[I, J])``.  The spectral norm of the result equals the product
    of the ``m`` largest singular values of ``mat``.
    """
    mat = np.asarray(mat, dtype=float)
    n = mat.shape[-1]
    if mat.shape != (n, n):
        raise ValueError("compound_matrix expects a single square matrix")
    if not 1 <= m <= n:
        raise ValueError(f"m must lie in [1, {n}], got {m}")
    subsets = list(itertools.combinations(range(n), m))
    k = len(subsets)
    rows = np.array(subsets)
    blocks = mat[rows[:, None, :, None], rows[None, :, None, :]]
    out = np.linalg.det(blocks.reshape(k * k, m, m)).reshape(k, k)
    return out


def ln_omega_d_adjusted_vjp(jac: np.ndarray, p_src: np.ndarray,
                            p_dst: np.ndarray, d: float):
    """Value and metric sensitivities of ``ln omega_d`` of the adjusted matrix.

    For ``A = sqrt(P_dst) @ jac @ sqrt(P_src)^{-1}`` this returns

    ``val = ln omega_d(A)`` together with symmetric matrices ``g_src`` and
    ``g_dst`` such that a perturbation ``P -> P + dP`` changes the value by
    ``sum(g * dP)`` to first order, plus a boolean flag marking near-crossing
    singular values (where the derivative is only a subgradient).

    All inputs may be stacked ``(..., n, n)``; outputs broadcast accordingly.
    """
    jac = np.asarray(jac, dtype=float)
    n = jac.shape[-1]
    if d <= 0.0 or d > n:
        raise ValueError(f"d must lie in (0, {n}], got {d}")
    m = int(np.ceil(d)) - 1
    s = d - m

    lam1, q1 = np.linalg.eigh(p_src)
    lam2, q2 = np.linalg.eigh(p_dst)
    if np.any(lam1[..., 0] <= 0) or np.any(lam2[..., 0] <= 0):
        raise NotSpd("metric matrix not positive definite")
    r1 = np.sqrt(lam1)
    r2 = np.sqrt(lam2)
    s1_inv = np.einsum("...ij,...j,...kj->...ik", q1, 1.0 / r1, q1)
    s2 = np.einsum("...ij,...j,...kj->...ik", q2, r2, q2)

    b1 = jac @ s1_inv
    a = s2 @ b1
    u, sig, vt = np.linalg.svd(a)

    coeff = np.zeros(n)
    coeff[:m] = 1.0
    coeff[m] = s
    with np.errstate(divide="ignore"):
        logs = np.log(sig)
    val = np.einsum("...j,j->...", logs, coeff)

    sig_safe = np.where(sig > 0.0, sig, 1.0)
    g = np.einsum("...ij,...j,...jk->...ik", u, coeff / sig_safe, vt)
    m_s2 = g @ np.swapaxes(b1, -1, -2)
    m_s1 = -np.swapaxes(a, -1, -2) @ g @ s1_inv

    def _chain(m_s, q, r):
        x = np.swapaxes(q, -1, -2) @ m_s @ q
        denom = r[..., :, None] + r[..., None, :]
        y = q @ (x / denom) @ np.swapaxes(q, -1, -2)
        return 0.5 * (y + np.swapaxes(y, -1, -2))

    g_src = _chain(m_s1, q1, r1)
    g_dst = _chain(m_s2, q2, r2)

    gaps = sig[..., :-1] - sig[..., 1:]
    kink = coeff[:-1] != coeff[1:]
    tol = SV_CROSSING_GAP * np.maximum(1.0, sig[..., :1])
    near = np.any((gaps < tol) & kink, axis=-1)
    return val, g_src, g_dst, near
