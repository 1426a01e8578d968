"""Tests for the singular-value kernel.

Expected values come from independent oracles: numpy/scipy factorizations,
brute-force minor enumeration, and central finite differences.
"""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import sqrtm

from lyapbound import linalg
from lyapbound.errors import NotSpd


def oracle_omega_d(mat, d):
    """Singular value function computed straight from LAPACK."""
    sv = np.linalg.svd(np.asarray(mat, dtype=float), compute_uv=False)
    if d == 0:
        return 1.0
    m = int(np.ceil(d)) - 1
    s = d - m
    out = float(np.prod(sv[:m]))
    return out * sv[m] ** s


def oracle_compound(mat, m):
    """Minor matrix assembled entry by entry with explicit cofactor sums."""
    mat = np.asarray(mat, dtype=float)
    n = mat.shape[0]
    subsets = list(itertools.combinations(range(n), m))

    def det_recursive(a):
        k = a.shape[0]
        if k == 1:
            return a[0, 0]
        total = 0.0
        for j in range(k):
            minor = np.delete(np.delete(a, 0, axis=0), j, axis=1)
            total += (-1.0) ** j * a[0, j] * det_recursive(minor)
        return total

    out = np.empty((len(subsets), len(subsets)))
    for i, rows in enumerate(subsets):
        for j, cols in enumerate(subsets):
            out[i, j] = det_recursive(mat[np.ix_(rows, cols)])
    return out


def random_spd(rng, n, spread=2.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.exp(rng.uniform(-spread, spread, size=n))
    return (q * lam) @ q.T


class TestSingularValues:
    def test_matches_lapack_2x2(self):
        rng = np.random.RandomState(42)
        mats = rng.standard_normal((200, 2, 2))
        got = linalg.singular_values(mats)
        want = np.linalg.svd(mats, compute_uv=False)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-14)

    def test_matches_lapack_general(self):
        rng = np.random.RandomState(7)
        for n in (3, 4, 6):
            mats = rng.standard_normal((50, n, n))
            got = linalg.singular_values(mats)
            want = np.linalg.svd(mats, compute_uv=False)
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_tiny_second_value_is_stable(self):
        mat = np.array([[1e8, 0.0], [0.0, 1e-8]])
        got = linalg.singular_values(mat)
        np.testing.assert_allclose(got, [1e8, 1e-8], rtol=1e-12)


class TestOmegaD:
    def test_against_oracle(self):
        rng = np.random.RandomState(3)
        for n in (2, 3, 5):
            mat = rng.standard_normal((n, n))
            for d in (0.0, 0.5, 1.0, 1.3, 2.0, n - 0.25, float(n)):
                got = linalg.omega_d(mat, d)
                np.testing.assert_allclose(got, oracle_omega_d(mat, d),
                                           rtol=1e-12)

    def test_interpolation_identity(self):
        # omega_{m+s} = omega_m^{1-s} * omega_{m+1}^s
        rng = np.random.RandomState(5)
        mat = rng.standard_normal((4, 4))
        for m in (0, 1, 2, 3):
            for s in (0.25, 0.5, 0.9, 1.0):
                d = m + s
                if d > 4:
                    continue
                lhs = linalg.omega_d(mat, d)
                rhs = (oracle_omega_d(mat, m) ** (1 - s)
                       * oracle_omega_d(mat, m + 1) ** s)
                np.testing.assert_allclose(lhs, rhs, rtol=1e-12)

    def test_omega_zero_is_one(self):
        assert linalg.omega_d(np.diag([3.0, 0.5]), 0.0) == 1.0

    def test_out_of_range_d(self):
        with pytest.raises(ValueError):
            linalg.omega_d(np.eye(2), 2.5)
        with pytest.raises(ValueError):
            linalg.omega_d(np.eye(2), -0.1)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10 ** 6), st.floats(0.1, 3.0))
    def test_submultiplicative(self, seed, d):
        # omega_d(L2 @ L1) <= omega_d(L1) * omega_d(L2)
        rng = np.random.RandomState(seed)
        l1 = rng.standard_normal((3, 3))
        l2 = rng.standard_normal((3, 3))
        lhs = linalg.omega_d(l2 @ l1, d)
        rhs = linalg.omega_d(l1, d) * linalg.omega_d(l2, d)
        assert lhs <= rhs * (1 + 1e-10) + 1e-300


class TestSpdSqrt:
    def test_matches_scipy_sqrtm(self):
        rng = np.random.RandomState(11)
        for n in (2, 3, 5):
            p = random_spd(rng, n)
            got = linalg.spd_sqrt(p)
            want = sqrtm(p)
            np.testing.assert_allclose(got, np.real(want), rtol=1e-9,
                                       atol=1e-11)

    def test_multiply_back(self):
        rng = np.random.RandomState(12)
        for n in (2, 3, 4):
            for _ in range(20):
                p = random_spd(rng, n, spread=3.0)
                s = linalg.spd_sqrt(p)
                err = np.abs(s @ s - p).max() / np.abs(p).max()
                assert err < linalg.SPD_RECONSTRUCT_TOL

    def test_batched_2x2(self):
        rng = np.random.RandomState(13)
        ps = np.stack([random_spd(rng, 2) for _ in range(64)])
        got = linalg.spd_sqrt(ps)
        for k in range(64):
            np.testing.assert_allclose(got[k], np.real(sqrtm(ps[k])),
                                       rtol=1e-10, atol=1e-12)

    def test_inv_sqrt(self):
        rng = np.random.RandomState(14)
        p = random_spd(rng, 3)
        s_inv = linalg.spd_inv_sqrt(p)
        np.testing.assert_allclose(s_inv @ p @ s_inv, np.eye(3), atol=1e-10)

    def test_rejects_asymmetric(self):
        with pytest.raises(NotSpd):
            linalg.spd_sqrt(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_rejects_indefinite(self):
        with pytest.raises(NotSpd):
            linalg.spd_sqrt(np.diag([1.0, -0.5]))
        with pytest.raises(NotSpd):
            linalg.spd_sqrt(np.diag([1.0, 0.5e-15]))


class TestMetricAdjusted:
    def test_against_sqrtm(self):
        rng = np.random.RandomState(21)
        jac = rng.standard_normal((3, 3))
        p_src = random_spd(rng, 3)
        p_dst = random_spd(rng, 3)
        got = linalg.metric_adjusted_matrix(jac, p_src, p_dst)
        want = np.real(sqrtm(p_dst)) @ jac @ np.linalg.inv(np.real(sqrtm(p_src)))
        np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-11)

    def test_identity_metric_is_noop(self):
        rng = np.random.RandomState(22)
        jac = rng.standard_normal((2, 2))
        got = linalg.metric_adjusted_matrix(jac, np.eye(2), np.eye(2))
        np.testing.assert_allclose(got, jac, atol=1e-14)

    def test_norms_transform_consistently(self):
        # |A v|_{P_dst} for A = jac equals |adjusted @ (sqrt(P_src) v)|_2
        rng = np.random.RandomState(23)
        jac = rng.standard_normal((3, 3))
        p_src = random_spd(rng, 3)
        p_dst = random_spd(rng, 3)
        adj = linalg.metric_adjusted_matrix(jac, p_src, p_dst)
        v = rng.standard_normal(3)
        lhs = np.sqrt((jac @ v) @ p_dst @ (jac @ v))
        rhs = np.linalg.norm(adj @ (linalg.spd_sqrt(p_src) @ v))
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10)


class TestCompoundMatrix:
    def test_entries_match_cofactor_oracle(self):
        rng = np.random.RandomState(31)
        for n in (2, 3, 4, 5):
            mat = rng.standard_normal((n, n))
            for m in range(1, n + 1):
                got = linalg.compound_matrix(mat, m)
                want = oracle_compound(mat, m)
                np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)

    def test_norm_is_product_of_top_singular_values(self):
        rng = np.random.RandomState(32)
        for n in (2, 3, 4, 6):
            mat = rng.standard_normal((n, n))
            sv = np.linalg.svd(mat, compute_uv=False)
            for m in range(1, n + 1):
                comp = linalg.compound_matrix(mat, m)
                norm = np.linalg.norm(comp, ord=2)
                np.testing.assert_allclose(norm, np.prod(sv[:m]), rtol=1e-9)

    def test_multiplicative(self):
        rng = np.random.RandomState(33)
        a = rng.standard_normal((4, 4))
        b = rng.standard_normal((4, 4))
        for m in (1, 2, 3, 4):
            lhs = linalg.compound_matrix(b @ a, m)
            rhs = linalg.compound_matrix(b, m) @ linalg.compound_matrix(a, m)
            np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-11)

    def test_m_1_and_m_n(self):
        rng = np.random.RandomState(34)
        mat = rng.standard_normal((3, 3))
        np.testing.assert_allclose(linalg.compound_matrix(mat, 1), mat)
        np.testing.assert_allclose(linalg.compound_matrix(mat, 3),
                                   [[np.linalg.det(mat)]], rtol=1e-12)

    def test_rejects_bad_m(self):
        with pytest.raises(ValueError):
            linalg.compound_matrix(np.eye(3), 0)
        with pytest.raises(ValueError):
            linalg.compound_matrix(np.eye(3), 4)


class TestAdjustedVjp:
    def test_value_matches_direct(self):
        rng = np.random.RandomState(41)
        jac = rng.standard_normal((3, 3))
        p1 = random_spd(rng, 3)
        p2 = random_spd(rng, 3)
        for d in (0.7, 1.0, 1.4, 2.5, 3.0):
            val, _, _, _ = linalg.ln_omega_d_adjusted_vjp(jac, p1, p2, d)
            direct = np.log(oracle_omega_d(
                linalg.metric_adjusted_matrix(jac, p1, p2), d))
            np.testing.assert_allclose(val, direct, rtol=1e-10, atol=1e-12)

    def test_gradient_matches_central_differences(self):
        rng = np.random.RandomState(42)
        jac = rng.standard_normal((3, 3))
        p1 = random_spd(rng, 3)
        p2 = random_spd(rng, 3)
        d = 1.6
        _, g1, g2, near = linalg.ln_omega_d_adjusted_vjp(jac, p1, p2, d)
        assert not near

        def value(p_src, p_dst):
            return np.log(oracle_omega_d(
                linalg.metric_adjusted_matrix(jac, p_src, p_dst), d))

        h = 1e-6
        for g, which in ((g1, "src"), (g2, "dst")):
            fd = np.zeros((3, 3))
            base_src, base_dst = p1.copy(), p2.copy()
            for i in range(3):
                for j in range(3):
                    de = np.zeros((3, 3))
                    de[i, j] += 0.5 * h
                    de[j, i] += 0.5 * h
                    if which == "src":
                        up = value(base_src + de, base_dst)
                        dn = value(base_src - de, base_dst)
                    else:
                        up = value(base_src, base_dst + de)
                        dn = value(base_src, base_dst - de)
                    fd[i, j] = (up - dn) / (2 * h)
            np.testing.assert_allclose(g, fd, rtol=5e-5, atol=1e-7)

    def test_batched_matches_loop(self):
        rng = np.random.RandomState(43)
        jac = rng.standard_normal((5, 2, 2))
        p1 = np.stack([random_spd(rng, 2) for _ in range(5)])
        p2 = np.stack([random_spd(rng, 2) for _ in range(5)])
        val, g1, g2, near = linalg.ln_omega_d_adjusted_vjp(jac, p1, p2, 1.3)
        for k in range(5):
            v, a, b, _ = linalg.ln_omega_d_adjusted_vjp(jac[k], p1[k], p2[k], 1.3)
            np.testing.assert_allclose(val[k], v, rtol=1e-12)
            np.testing.assert_allclose(g1[k], a, rtol=1e-12, atol=1e-15)
            np.testing.assert_allclose(g2[k], b, rtol=1e-12, atol=1e-15)

    def test_near_crossing_flag(self):
        # d = 1 on an isotropic matrix: top two singular values coincide.
        _, _, _, near = linalg.ln_omega_d_adjusted_vjp(
            np.eye(2) * 2.0, np.eye(2), np.eye(2), 1.0)
        assert near
