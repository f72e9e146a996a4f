import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from projlearn import numerics


def _charpoly_eigs(sym, tol=1e-13):
    """Eigenvalues of a symmetric matrix by bisection on the Sturm count of its tridiagonal form.

    Householder tridiagonalization followed by bisection; no LAPACK
    eigen/singular value routine is involved.
    """
    a = np.array(sym, dtype=float)
    n = a.shape[0]
    for k in range(n - 2):
        x = a[k + 1 :, k].copy()
        alpha = -np.copysign(np.linalg.norm(x), x[0]) if x[0] != 0 else -np.linalg.norm(x)
        v = x.copy()
        v[0] -= alpha
        nv = np.linalg.norm(v)
        if nv == 0:
            continue
        v /= nv
        H = np.eye(n)
        H[k + 1 :, k + 1 :] -= 2.0 * np.outer(v, v)
        a = H @ a @ H
    d = np.diag(a).copy()
    e = np.diag(a, 1).copy()

    def count_below(x):
        # number of eigenvalues < x (Sturm sequence)
        cnt, q = 0, d[0] - x
        if q < 0:
            cnt += 1
        for i in range(1, n):
            q = d[i] - x - e[i - 1] ** 2 / (q if q != 0 else 1e-300)
            if q < 0:
                cnt += 1
        return cnt

    radius = np.max(np.abs(d)) + 2 * (np.max(np.abs(e)) if e.size else 0)
    out = []
    for k in range(n):
        lo, hi = -radius - 1, radius + 1
        while hi - lo > tol * max(1.0, radius):
            mid = 0.5 * (lo + hi)
            if count_below(mid) > k:
                hi = mid
            else:
                lo = mid
        out.append(0.5 * (lo + hi))
    return np.array(out)


def _power_iteration(a, iters=5000):
    x = np.ones(a.shape[1]) / np.sqrt(a.shape[1])
    for _ in range(iters):
        y = a.T @ (a @ x)
        x = y / np.linalg.norm(y)
    return float(np.sqrt(x @ (a.T @ (a @ x))))


def _rank_deficient(rng, rows, cols, rank):
    return rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols))


# svd -----------------------------------------------------------------------


def test_svd_identity():
    np.testing.assert_allclose(numerics.svd(np.eye(3)).singulars, [1, 1, 1])


def test_svd_diagonal_reorders():
    np.testing.assert_allclose(numerics.svd(np.diag([3.0, 0.0, 1.0])).singulars, [3, 1, 0])


def test_svd_matches_bisection_oracle():
    a = np.random.default_rng(7).standard_normal((5, 4))
    oracle = np.sqrt(np.clip(_charpoly_eigs(a.T @ a), 0, None))[::-1]
    np.testing.assert_allclose(numerics.svd(a).singulars, oracle, atol=1e-8)


def test_svd_sign_convention_and_reconstruction():
    a = np.random.default_rng(1).standard_normal((6, 4))
    u, s, v = numerics.svd(a)
    idx = np.argmax(np.abs(u), axis=0)
    assert np.all(u[idx, np.arange(4)] >= 0)
    assert np.linalg.norm(u * s @ v.T - a) <= 1e-10 * np.linalg.norm(a)
    assert np.all(np.diff(s) <= 0)


def test_svd_rejects_non_finite():
    with pytest.raises(ValueError):
        numerics.svd(np.array([[1.0, np.nan]]))


def test_svd_nonconvergence_is_explicit(monkeypatch):
    def boom(*a, **k):
        raise np.linalg.LinAlgError("SVD did not converge")

    monkeypatch.setattr(np.linalg, "svd", boom)
    with pytest.raises(numerics.ConvergenceError):
        numerics.svd(np.eye(2))


# pinv ----------------------------------------------------------------------


def test_pinv_diagonal():
    np.testing.assert_allclose(numerics.pinv(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))


def test_pinv_inverse_case():
    np.testing.assert_allclose(numerics.pinv([[2.0, 1.0], [1.0, 1.0]]), [[1, -1], [-1, 2]], atol=1e-12)


def test_pinv_rank_two():
    a = _rank_deficient(np.random.default_rng(11), 4, 4, 2)
    np.testing.assert_allclose(a @ numerics.pinv(a) @ a, a, atol=1e-9)
    assert numerics.numerical_rank(a) == 2


def test_pinv_zero_matrix_shape():
    assert numerics.pinv(np.zeros((2, 3))).shape == (3, 2)
    assert not numerics.pinv(np.zeros((2, 3))).any()


@pytest.mark.parametrize("tol", [0.0, 1.0, -1e-3])
def test_pinv_rejects_bad_tolerance(tol):
    with pytest.raises(ValueError):
        numerics.pinv(np.eye(2), tol)


def test_pinv_cutoff_is_relative():
    a = np.diag([1.0, 1e-13])
    assert numerics.pinv(a)[1, 1] == 0.0
    assert numerics.pinv(a, 1e-14)[1, 1] == pytest.approx(1e13)


@st.composite
def matrices(draw):
    rows = draw(st.integers(2, 8))
    cols = draw(st.integers(2, 8))
    rank = draw(st.integers(1, min(rows, cols)))
    seed = draw(st.integers(0, 2**32 - 1))
    return _rank_deficient(np.random.default_rng(seed), rows, cols, rank)


@given(matrices())
def test_moore_penrose_identities(a):
    p = numerics.pinv(a)
    np.testing.assert_allclose(a @ p @ a, a, atol=1e-9)
    np.testing.assert_allclose(p @ a @ p, p, atol=1e-9 * max(1, np.abs(p).max()))
    np.testing.assert_allclose(a @ p, (a @ p).T, atol=1e-9)
    np.testing.assert_allclose(p @ a, (p @ a).T, atol=1e-9)


@given(st.integers(0, 2**32 - 1), st.integers(3, 9), st.data())
def test_projected_pinv_identities(seed, n, data):
    m = data.draw(st.integers(1, n - 1))
    g = np.random.default_rng(seed).standard_normal((n, n))
    B = g @ g.T
    P = np.diag([1.0] * m + [0.0] * (n - m))
    H = P @ B @ P
    Hp = numerics.pinv(H)
    np.testing.assert_allclose(Hp, P @ Hp, atol=1e-9)
    np.testing.assert_allclose(Hp, Hp @ P, atol=1e-9)
    np.testing.assert_allclose(Hp @ H, H @ Hp, atol=1e-9)


@given(matrices())
def test_op_norm_below_hs_norm(a):
    assert numerics.op_norm(a) <= numerics.hs_norm(a) * (1 + 1e-12)


# lambda_min_nonzero --------------------------------------------------------


def test_lambda_min_with_null_direction():
    assert numerics.lambda_min_nonzero(np.diag([4.0, 1.0, 0.0])) == pytest.approx(1.0)


def test_lambda_min_diagonal_model():
    m = np.arange(1, 9)
    assert numerics.lambda_min_nonzero(np.diag(1.0 / m)) == pytest.approx(1 / 8, rel=1e-14)


def test_lambda_min_identity():
    assert numerics.lambda_min_nonzero(np.eye(5)) == pytest.approx(1.0)


def test_lambda_min_zero_operator():
    with pytest.raises(numerics.ZeroOperatorError):
        numerics.lambda_min_nonzero(np.zeros((3, 3)))


def test_lambda_min_rejects_asymmetric():
    with pytest.raises(ValueError):
        numerics.lambda_min_nonzero([[1.0, 0.1], [0.0, 1.0]])


def test_lambda_min_symmetrizes_small_asymmetry():
    a = np.diag([2.0, 1.0])
    a[0, 1] = 1e-12
    assert numerics.lambda_min_nonzero(a) == pytest.approx(1.0)


# hs_norm / op_norm ---------------------------------------------------------


def test_hs_norm_identity():
    assert numerics.hs_norm(np.eye(7)) == pytest.approx(np.sqrt(7))


def test_hs_norm_pythagorean():
    assert numerics.hs_norm([[3.0, 4.0], [0.0, 0.0]]) == pytest.approx(5.0)


def test_hs_norm_double_loop_oracle():
    a = np.random.default_rng(3).standard_normal((6, 6))
    total = 0.0
    for i in range(6):
        for j in range(6):
            total += a[i, j] * a[i, j]
    assert numerics.hs_norm(a) == pytest.approx(np.sqrt(total), rel=1e-14)


def test_op_norm_diagonal():
    assert numerics.op_norm(np.diag([2.0, 5.0])) == pytest.approx(5.0)


def test_op_norm_rank_one():
    u, v = np.array([1.0, 2.0, 2.0]), np.array([3.0, 4.0])
    assert numerics.op_norm(np.outer(u, v)) == pytest.approx(15.0)


def test_op_norm_power_iteration_oracle():
    a = np.random.default_rng(9).standard_normal((4, 7))
    assert numerics.op_norm(a) == pytest.approx(_power_iteration(a), abs=1e-8)


# sqrt_psd ------------------------------------------------------------------


def test_sqrt_diagonal():
    np.testing.assert_allclose(numerics.sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)


def test_sqrt_zero():
    assert not numerics.sqrt_psd(np.zeros((3, 3))).any()


def test_sqrt_random_psd():
    g = np.random.default_rng(5).standard_normal((5, 5))
    a = g @ g.T
    s = numerics.sqrt_psd(a)
    np.testing.assert_allclose(s @ s, a, atol=1e-9)
    np.testing.assert_allclose(s, s.T, atol=0)
    assert np.linalg.eigvalsh(s).min() >= -1e-12


def test_sqrt_rejects_asymmetric():
    with pytest.raises(ValueError):
        numerics.sqrt_psd([[1.0, 0.5], [0.0, 1.0]])


def test_sqrt_rejects_indefinite():
    with pytest.raises(ValueError):
        numerics.sqrt_psd(np.diag([1.0, -1.0]))


@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.data())
def test_sqrt_of_projection_is_itself(seed, n, data):
    k = data.draw(st.integers(1, n))
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, k)))
    P = q @ q.T
    np.testing.assert_allclose(numerics.sqrt_psd(P), P, atol=1e-9)


def test_inputs_not_mutated():
    a = np.array([[2.0, 1.0], [1.0, 2.0]])
    before = a.copy()
    numerics.pinv(a)
    numerics.sqrt_psd(a)
    numerics.lambda_min_nonzero(a)
    np.testing.assert_array_equal(a, before)
