"""Parameterized Riemannian metric families.

A metric family maps a state-space point to a symmetric positive definite
matrix ``P(q)``; weighted singular value functions are then measured in the
adjusted inner products.  Families here:

* :func:`euclidean_metric` - the constant identity;
* :func:`henon_polynomial_metric` - ``P = exp(V) (A^2 + I)`` with polynomial
  entries, tailored to planar maps;
* :func:`symmetric_network_metric` - a small sign-symmetric neural-network
  family for three-dimensional flows.

Each family evaluates in batches and exposes an analytic parameter
vector-Jacobian product so optimization never falls back to finite
differences on the hot path.  Checkpoints serialize to JSON with full
round-trip precision.

Floquet metric fields along periodic orbits live in :mod:`lyapbound.floquet`
and are re-exported here.
"""

from __future__ import annotations

import datetime as _dt
import json
from typing import Optional

import numpy as np

from .errors import DimMismatch, FamilyMismatch, NotAGroup
from .floquet import (FloquetMetricField, floquet_metric,  # noqa: F401
                      symmetry_transport_floquet)

__all__ = [
    "MetricModel", "euclidean_metric", "henon_polynomial_metric",
    "symmetric_network_metric", "symmetry_average_metric",
    "serialize_params", "load_params", "read_checkpoint",
    "FloquetMetricField", "floquet_metric", "symmetry_transport_floquet",
]

# Parameter initialization range for the network family.
NETWORK_INIT_HALF_WIDTH = 0.05
# Tolerance for group closure checks.
GROUP_TOL = 1e-10


class MetricModel:
    """Base class: a parameterized SPD-matrix-valued map on R^n.

    Subclasses implement :meth:`evaluate` and, when cheap, :meth:`param_vjp`.
    """

    family: str = ""
    dim: int = 0
    n_params: int = 0
    #: per-parameter polynomial degree used for degree-scaled trust boxes,
    #: or ``None`` when the family has no natural grading
    degree_tags: Optional[np.ndarray] = None

    def dims(self) -> list:
        """Shape signature stored in checkpoints."""
        raise NotImplementedError

    def evaluate(self, points: np.ndarray, params: np.ndarray) -> np.ndarray:
        """SPD metric matrices at ``points`` ``(..., n) -> (..., n, n)``."""
        raise NotImplementedError

    def param_vjp(self, points: np.ndarray, params: np.ndarray,
                  dl_dp: np.ndarray) -> Optional[np.ndarray]:
        """Gradient of ``sum_k <dl_dp[k], P(points[k])>`` in the parameters.

        ``dl_dp`` has shape ``(N, n, n)`` with symmetric entries.  Returns
        ``None`` when no analytic path exists (callers then use finite
        differences).
        """
        return None

    def init_params(self, seed: Optional[int] = None) -> np.ndarray:
        """Neutral starting parameters (the identity metric)."""
        return np.zeros(self.n_params)

    def _check_points(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.shape[-1] != self.dim:
            raise DimMismatch(
                f"points have dimension {points.shape[-1]}, family expects "
                f"{self.dim}")
        return points


# ---------------------------------------------------------------------------
# constant identity
# ---------------------------------------------------------------------------

class _EuclideanMetric(MetricModel):
    family = "euclidean"

    def __init__(self, dim: int):
        self.dim = int(dim)
        self.n_params = 0
        self.degree_tags = None

    def dims(self) -> list:
        return [self.dim]

    def evaluate(self, points, params=None):
        points = self._check_points(points)
        eye = np.eye(self.dim)
        return np.broadcast_to(eye, points.shape[:-1] + (self.dim, self.dim)
                               ).copy()

    def param_vjp(self, points, params, dl_dp):
        return np.zeros(0)


def euclidean_metric(dim: int) -> MetricModel:
    """The constant identity metric on ``R^dim``."""
    return _EuclideanMetric(dim)


# ---------------------------------------------------------------------------
# planar polynomial family
# ---------------------------------------------------------------------------

def _monomial_exponents(degree: int, skip_constant: bool) -> np.ndarray:
    """Exponent pairs ``(i, j)`` with ``i + j <= degree``.

    Ordered by ``x``-power ascending, then ``y``-power ascending; the
    constant ``(0, 0)`` is dropped when ``skip_constant``.
    """
    out = [(i, j) for i in range(degree + 1) for j in range(degree + 1 - i)]
    if skip_constant:
        out = out[1:]
    return np.array(out, dtype=int)


class _HenonPolynomialMetric(MetricModel):
    """``P(q) = exp(V(q)) (A(q)^2 + I)`` on the plane.

    ``A`` is symmetric with polynomial entries ``a11, a12, a22`` of degree
    ``deg_entries`` (constants included) and ``V`` is a scalar polynomial of
    degree ``deg_v`` without constant term.  Parameters are the
    concatenation ``[a11-coeffs, a12-coeffs, a22-coeffs, V-coeffs]`` in the
    monomial order of :func:`_monomial_exponents`.
    """

    family = "henon_polynomial"

    def __init__(self, deg_entries: int = 1, deg_v: int = 5):
        self.dim = 2
        self.deg_entries = int(deg_entries)
        self.deg_v = int(deg_v)
        self._exp_a = _monomial_exponents(self.deg_entries, False)
        self._exp_v = _monomial_exponents(self.deg_v, True)
        self._na = len(self._exp_a)
        self._nv = len(self._exp_v)
        self.n_params = 3 * self._na + self._nv
        tags = np.concatenate([
            np.tile(self._exp_a.sum(axis=1), 3),
            self._exp_v.sum(axis=1),
        ])
        self.degree_tags = tags.astype(int)

    def dims(self) -> list:
        return [self.dim, self.deg_entries, self.deg_v]

    def _split(self, params: np.ndarray):
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise FamilyMismatch(
                f"expected {self.n_params} parameters, got {params.shape}")
        na = self._na
        return (params[:na], params[na:2 * na], params[2 * na:3 * na],
                params[3 * na:])

    @staticmethod
    def _monomials(points: np.ndarray, exponents: np.ndarray) -> np.ndarray:
        x = points[..., 0, None]
        y = points[..., 1, None]
        return x ** exponents[:, 0] * y ** exponents[:, 1]

    def evaluate(self, points, params):
        points = self._check_points(points)
        c11, c12, c22, cv = self._split(params)
        mono_a = self._monomials(points, self._exp_a)
        mono_v = self._monomials(points, self._exp_v)
        a11 = mono_a @ c11
        a12 = mono_a @ c12
        a22 = mono_a @ c22
        ev = np.exp(mono_v @ cv)
        # A^2 + I for symmetric A
        p = np.empty(points.shape[:-1] + (2, 2))
        p[..., 0, 0] = a11 * a11 + a12 * a12 + 1.0
        p[..., 0, 1] = a12 * (a11 + a22)
        p[..., 1, 0] = p[..., 0, 1]
        p[..., 1, 1] = a12 * a12 + a22 * a22 + 1.0
        return p * ev[..., None, None]

    def conformal_factor(self, points, params):
        """The scalar factor ``exp(V(q))`` splitting off the bounded part."""
        points = self._check_points(points)
        _, _, _, cv = self._split(params)
        return np.exp(self._monomials(points, self._exp_v) @ cv)

    def param_vjp(self, points, params, dl_dp):
        points = self._check_points(points).reshape(-1, 2)
        dl_dp = np.asarray(dl_dp, dtype=float).reshape(-1, 2, 2)
        c11, c12, c22, cv = self._split(params)
        mono_a = self._monomials(points, self._exp_a)
        mono_v = self._monomials(points, self._exp_v)
        a11 = mono_a @ c11
        a12 = mono_a @ c12
        a22 = mono_a @ c22
        ev = np.exp(mono_v @ cv)
        p = self.evaluate(points, params)

        # dL/dV coefficient k = sum_n mono_v[n, k] * <dl_dp[n], P[n]>
        inner_v = np.einsum("nij,nij->n", dl_dp, p)
        g_v = inner_v @ mono_v

        # dL/dA = e^V (A dl + dl A); A symmetric
        a_mat = np.empty((len(points), 2, 2))
        a_mat[:, 0, 0] = a11
        a_mat[:, 0, 1] = a12
        a_mat[:, 1, 0] = a12
        a_mat[:, 1, 1] = a22
        g_a = (a_mat @ dl_dp + dl_dp @ a_mat) * ev[:, None, None]
        g11 = g_a[:, 0, 0] @ mono_a
        g12 = (g_a[:, 0, 1] + g_a[:, 1, 0]) @ mono_a
        g22 = g_a[:, 1, 1] @ mono_a
        return np.concatenate([g11, g12, g22, g_v])


def henon_polynomial_metric(deg_entries: int = 1, deg_v: int = 5) -> MetricModel:
    """Polynomial ``exp(V) (A^2 + I)`` metric family on the plane."""
    return _HenonPolynomialMetric(deg_entries, deg_v)


# ---------------------------------------------------------------------------
# sign-symmetric network family
# ---------------------------------------------------------------------------

_TRIU_IDX = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


class _SymmetricNetworkMetric(MetricModel):
    """``P(q) = ((N(q) + S^T N(Sq) S) / 2)^2 + I`` with a one-layer network.

    ``N(q)`` is the symmetric matrix filled from the six outputs of
    ``M2 @ act(M1 q + b1) + b2`` in the order ``(1,1), (1,2), (1,3), (2,2),
    (2,3), (3,3)``; the activation is ``s -> 1 / (1 + s^2)``.  The built-in
    symmetrization makes ``P(Sq) = S^T P(q) S`` exact for the involution
    ``S`` supplied at construction, and ``P >= I`` holds by construction.
    """

    family = "symmetric_network"

    def __init__(self, hidden: int = 200,
                 symmetry: Optional[np.ndarray] = None):
        self.dim = 3
        self.hidden = int(hidden)
        self.symmetry = (np.diag([-1.0, -1.0, 1.0]) if symmetry is None
                         else np.asarray(symmetry, dtype=float))
        if self.symmetry.shape != (3, 3):
            raise DimMismatch("symmetry matrix must be 3x3")
        if np.abs(self.symmetry @ self.symmetry - np.eye(3)).max() > GROUP_TOL:
            raise NotAGroup("symmetry matrix must be an involution")
        h = self.hidden
        self.n_params = h * 3 + h + 6 * h + 6
        self.degree_tags = None
        self._slices = {
            "m1": slice(0, 3 * h),
            "b1": slice(3 * h, 4 * h),
            "m2": slice(4 * h, 10 * h),
            "b2": slice(10 * h, 10 * h + 6),
        }

    def dims(self) -> list:
        return [3, self.hidden, 6]

    def init_params(self, seed: Optional[int] = None) -> np.ndarray:
        rng = np.random.RandomState(seed)
        return rng.uniform(-NETWORK_INIT_HALF_WIDTH, NETWORK_INIT_HALF_WIDTH,
                           size=self.n_params)

    def _unpack(self, params: np.ndarray):
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise FamilyMismatch(
                f"expected {self.n_params} parameters, got {params.shape}")
        h = self.hidden
        m1 = params[self._slices["m1"]].reshape(h, 3)
        b1 = params[self._slices["b1"]]
        m2 = params[self._slices["m2"]].reshape(6, h)
        b2 = params[self._slices["b2"]]
        return m1, b1, m2, b2

    @staticmethod
    def _sym_from_six(vals: np.ndarray) -> np.ndarray:
        out = np.empty(vals.shape[:-1] + (3, 3))
        for k, (i, j) in enumerate(_TRIU_IDX):
            out[..., i, j] = vals[..., k]
            out[..., j, i] = vals[..., k]
        return out

    def _network(self, points: np.ndarray, params: np.ndarray):
        m1, b1, m2, b2 = self._unpack(params)
        pre = points @ m1.T + b1
        act = 1.0 / (1.0 + pre * pre)
        six = act @ m2.T + b2
        return self._sym_from_six(six), pre, act

    def evaluate(self, points, params):
        points = self._check_points(points)
        s = self.symmetry
        n_q, _, _ = self._network(points, params)
        n_sq, _, _ = self._network(points @ s.T, params)
        b = 0.5 * (n_q + np.swapaxes(s, 0, 1) @ n_sq @ s)
        p = b @ b
        idx = np.arange(3)
        p[..., idx, idx] += 1.0
        return p

    def param_vjp(self, points, params, dl_dp):
        points = self._check_points(points)
        if points.ndim == 1:
            points = points[None]
            dl_dp = np.asarray(dl_dp, dtype=float)[None]
        dl_dp = np.asarray(dl_dp, dtype=float)
        s = self.symmetry
        m1, b1, m2, b2 = self._unpack(params)

        n_q, pre_q, act_q = self._network(points, params)
        pts_s = points @ s.T
        n_sq, pre_s, act_s = self._network(pts_s, params)
        b = 0.5 * (n_q + s.T @ n_sq @ s)

        # P = B^2 + I, B symmetric: dL/dB = B dl + dl B
        g_b = b @ dl_dp + dl_dp @ b
        g_nq = 0.5 * g_b
        g_nsq = 0.5 * (s @ g_b @ s.T)

        def backprop(g_sym, pts, pre, act):
            # symmetric matrix -> six outputs
            g6 = np.empty(g_sym.shape[:-2] + (6,))
            for k, (i, j) in enumerate(_TRIU_IDX):
                if i == j:
                    g6[..., k] = g_sym[..., i, j]
                else:
                    g6[..., k] = g_sym[..., i, j] + g_sym[..., j, i]
            g_m2 = np.einsum("nk,nh->kh", g6, act)
            g_b2 = g6.sum(axis=0)
            g_act = g6 @ m2
            dact = -2.0 * pre * act * act
            g_pre = g_act * dact
            g_m1 = np.einsum("nh,nd->hd", g_pre, pts)
            g_b1 = g_pre.sum(axis=0)
            return g_m1, g_b1, g_m2, g_b2

        g_m1a, g_b1a, g_m2a, g_b2a = backprop(g_nq, points, pre_q, act_q)
        g_m1b, g_b1b, g_m2b, g_b2b = backprop(g_nsq, pts_s, pre_s, act_s)
        return np.concatenate([
            (g_m1a + g_m1b).ravel(), g_b1a + g_b1b,
            (g_m2a + g_m2b).ravel(), g_b2a + g_b2b,
        ])


def symmetric_network_metric(hidden: int = 200,
                             symmetry: Optional[np.ndarray] = None
                             ) -> MetricModel:
    """Sign-symmetric network metric family on ``R^3``."""
    return _SymmetricNetworkMetric(hidden, symmetry)


# ---------------------------------------------------------------------------
# group averaging
# ---------------------------------------------------------------------------

def _check_group(group) -> np.ndarray:
    mats = np.asarray(group, dtype=float)
    if mats.ndim != 3 or mats.shape[-1] != mats.shape[-2]:
        raise NotAGroup("group must be a stack of square matrices")
    k = len(mats)
    has_identity = False
    for i in range(k):
        if np.abs(mats[i] - np.eye(mats.shape[-1])).max() <= GROUP_TOL:
            has_identity = True
        try:
            inv = np.linalg.inv(mats[i])
        except np.linalg.LinAlgError as exc:
            raise NotAGroup("group element is singular") from exc
        if not _in_set(inv, mats):
            raise NotAGroup("group is not closed under inversion")
        for j in range(k):
            if not _in_set(mats[i] @ mats[j], mats):
                raise NotAGroup("group is not closed under products")
    if not has_identity:
        raise NotAGroup("group does not contain the identity")
    return mats


def _in_set(mat: np.ndarray, mats: np.ndarray) -> bool:
    return bool(np.any(np.abs(mats - mat).max(axis=(1, 2)) <= GROUP_TOL))


def symmetry_average_metric(metric_fn, group):
    """Average a metric evaluation over a finite matrix group.

    Returns a callable ``points -> (1/|G|) sum_S S^T P(S points) S``; the
    result satisfies ``P(Sq) = S^T ... `` exactly for every group element.

    Raises
    ------
    NotAGroup
        If the matrices are not closed under product and inverse or omit
        the identity.
    """
    mats = _check_group(group)

    def averaged(points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        total = None
        for s in mats:
            p = metric_fn(points @ s.T)
            term = np.swapaxes(s, 0, 1) @ p @ s
            total = term if total is None else total + term
        return total / len(mats)

    return averaged


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def serialize_params(model: MetricModel, params: np.ndarray, path,
                     loss: Optional[float] = None,
                     bounds=None, extra_meta: Optional[dict] = None) -> None:
    """Write a parameter checkpoint as JSON with round-trip precision."""
    params = np.asarray(params, dtype=float)
    if params.shape != (model.n_params,):
        raise FamilyMismatch(
            f"parameter vector has shape {params.shape}, family needs "
            f"({model.n_params},)")
    meta = {
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "loss": None if loss is None else float(loss),
    }
    if getattr(model, "symmetry", None) is not None:
        meta["symmetry"] = [[float(v) for v in row]
                            for row in np.asarray(model.symmetry)]
    if extra_meta:
        meta.update(extra_meta)
    doc = {
        "family": model.family,
        "dims": model.dims(),
        "bounds": bounds,
        "params": [float(v) for v in params],
        "meta": meta,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_params(model: MetricModel, path) -> np.ndarray:
    """Load checkpoint parameters, validating family and shape.

    Raises
    ------
    FamilyMismatch
        If the file's family name or dims differ from ``model``.
    """
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("family") != model.family:
        raise FamilyMismatch(
            f"checkpoint family {doc.get('family')!r} does not match "
            f"{model.family!r}")
    if list(doc.get("dims", [])) != list(model.dims()):
        raise FamilyMismatch(
            f"checkpoint dims {doc.get('dims')} do not match {model.dims()}")
    params = np.asarray(doc["params"], dtype=float)
    if params.shape != (model.n_params,):
        raise FamilyMismatch("checkpoint parameter count mismatch")
    return params


def read_checkpoint(path):
    """Construct ``(model, params, meta)`` from a checkpoint file."""
    with open(path) as fh:
        doc = json.load(fh)
    family = doc.get("family")
    dims = list(doc.get("dims", []))
    if family == "euclidean":
        model = euclidean_metric(dims[0])
    elif family == "henon_polynomial":
        model = henon_polynomial_metric(dims[1], dims[2])
    elif family == "symmetric_network":
        sym = doc.get("meta", {}).get("symmetry")
        model = symmetric_network_metric(
            dims[1], None if sym is None else np.asarray(sym, dtype=float))
    else:
        raise FamilyMismatch(f"unknown metric family {family!r}")
    params = load_params(model, path)
    return model, params, doc.get("meta", {})
