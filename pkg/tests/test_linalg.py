import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxrom.errors import InvalidArgumentError, RankDeficientError
from maxrom.linalg import (
    eig_sym,
    householder_qr,
    numerical_rank,
    orthonormal_complement,
    pod_basis,
    svd_thin,
)


def classical_jacobi(A, tol=1e-15):
    """Textbook Jacobi: rotate away the largest off-diagonal entry until none is left."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    for _ in range(10000):
        off = np.abs(A - np.diag(np.diag(A)))
        p, q = np.unravel_index(np.argmax(off), off.shape)
        if off[p, q] <= tol * np.abs(A).max():
            break
        theta = 0.5 * np.arctan2(2 * A[p, q], A[q, q] - A[p, p])
        c, s = np.cos(theta), np.sin(theta)
        R = np.eye(n)
        R[p, p] = R[q, q] = c
        R[p, q], R[q, p] = s, -s
        A = R.T @ A @ R
        V = V @ R
    order = np.argsort(-np.diag(A))
    return np.diag(A)[order], V[:, order]


# ---------------------------------------------------------------------------
# eig_sym


def test_eig_diagonal():
    w, V = eig_sym(np.diag([1.0, 3.0, 2.0]))
    np.testing.assert_allclose(w, [3, 2, 1])
    np.testing.assert_allclose(np.abs(V), np.eye(3)[:, [1, 2, 0]])


def test_eig_swap_matrix():
    w, V = eig_sym(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(w, [1, -1], atol=1e-15)
    r = 1 / np.sqrt(2)
    np.testing.assert_allclose(np.abs(V), [[r, r], [r, r]], atol=1e-15)
    assert V[:, 0] @ [1, 1] != 0 and abs(V[:, 1] @ [1, 1]) < 1e-15


def test_eig_random_against_classical_jacobi():
    rng = np.random.default_rng(3)
    B = rng.standard_normal((8, 8))
    A = B + B.T
    w, V = eig_sym(A)
    w_ref, V_ref = classical_jacobi(A)
    np.testing.assert_allclose(w, w_ref, atol=1e-12 * np.abs(w_ref).max())
    # vectors agree up to sign
    np.testing.assert_allclose(np.abs(V.T @ V_ref), np.eye(8), atol=1e-9)
    assert np.linalg.norm(A @ V - V * w) <= 1e-9 * np.linalg.norm(A)
    np.testing.assert_allclose(V.T @ V, np.eye(8), atol=1e-10)
    assert np.all(np.diff(w) <= 0)


def test_eig_rejects_bad_input():
    with pytest.raises(InvalidArgumentError):
        eig_sym(np.ones((2, 3)))
    with pytest.raises(InvalidArgumentError):
        eig_sym(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(InvalidArgumentError):
        eig_sym(np.array([[np.nan]]))


def test_eig_sign_convention():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((6, 6))
    _, V = eig_sym(B @ B.T)
    idx = np.argmax(np.abs(V), axis=0)
    assert np.all(V[idx, range(6)] > 0)


# ---------------------------------------------------------------------------
# svd_thin


def check_svd(A, res, tol=1e-9):
    U, s, V = res
    k = min(A.shape)
    assert U.shape == (A.shape[0], k) and V.shape == (A.shape[1], k) and s.shape == (k,)
    assert np.all(np.diff(s) <= 0) and np.all(s >= 0)
    assert np.linalg.norm(A - (U * s) @ V.T) <= tol * max(np.linalg.norm(A), 1e-300)
    np.testing.assert_allclose(U.T @ U, np.eye(k), atol=1e-10)
    np.testing.assert_allclose(V.T @ V, np.eye(k), atol=1e-10)


def test_svd_rank_one():
    rng = np.random.default_rng(1)
    A = np.outer(rng.standard_normal(9), rng.standard_normal(5))
    res = svd_thin(A)
    check_svd(A, res)
    assert numerical_rank(res.singular_values) == 1


def test_svd_orthogonal_matrix():
    Q, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((7, 7)))
    res = svd_thin(Q)
    np.testing.assert_allclose(res.singular_values, 1.0, atol=1e-10)


def test_svd_against_gram_oracle():
    A = np.random.default_rng(4).standard_normal((12, 7))
    res = svd_thin(A)
    check_svd(A, res)
    lam, W = eig_sym(A.T @ A)
    np.testing.assert_allclose(res.singular_values, np.sqrt(lam), rtol=1e-10)
    U_gram = A @ W / np.sqrt(lam)
    np.testing.assert_allclose(np.abs(res.left_vectors.T @ U_gram), np.eye(7), atol=1e-8)


def test_svd_transpose_symmetry():
    A = np.random.default_rng(5).standard_normal((9, 14))
    r1, r2 = svd_thin(A), svd_thin(A.T)
    np.testing.assert_allclose(r1.singular_values, r2.singular_values, rtol=1e-12)
    check_svd(A, r1)
    np.testing.assert_allclose(np.abs(r1.left_vectors.T @ r2.right_vectors), np.eye(9), atol=1e-8)


def test_svd_zero_and_rank_deficient():
    Z = np.zeros((5, 3))
    res = svd_thin(Z)
    assert np.all(res.singular_values == 0)
    np.testing.assert_allclose(res.left_vectors.T @ res.left_vectors, np.eye(3), atol=1e-12)
    rng = np.random.default_rng(6)
    A = rng.standard_normal((40, 3)) @ rng.standard_normal((3, 20))
    res = svd_thin(A)
    check_svd(A, res)
    assert numerical_rank(res.singular_values) == 3


def test_svd_empty_rejected():
    with pytest.raises(InvalidArgumentError):
        svd_thin(np.zeros((0, 3)))


def test_svd_graded_columns_converge():
    # near-dependent columns with rounding-level inner products must not stall the sweeps
    rng = np.random.default_rng(7)
    A = rng.standard_normal((300, 44)) * np.logspace(0, -5, 44)
    A[:, 20:] += 1e-9 * A[:, :24]
    check_svd(A, svd_thin(A))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 25), st.integers(1, 25), st.integers(0, 2**32 - 1))
def test_svd_property_random_shapes(m, n, seed):
    A = np.random.default_rng(seed).standard_normal((m, n))
    check_svd(A, svd_thin(A))


# ---------------------------------------------------------------------------
# QR and complements


def test_householder_qr():
    A = np.random.default_rng(8).standard_normal((10, 6))
    Q, R, perm = householder_qr(A, pivoting=True)
    np.testing.assert_allclose(Q @ R, A[:, perm], atol=1e-13)
    np.testing.assert_allclose(Q.T @ Q, np.eye(Q.shape[1]), atol=1e-13)
    assert np.all(np.diff(np.abs(np.diag(R))) <= 1e-12)


def test_orthonormal_complement_rank_deficient():
    rng = np.random.default_rng(9)
    U, _ = np.linalg.qr(rng.standard_normal((50, 3)))
    C = orthonormal_complement(U, 20)
    assert C.shape == (50, 20)
    np.testing.assert_allclose(C.T @ C, np.eye(20), atol=1e-13)
    np.testing.assert_allclose(U.T @ C, 0, atol=1e-13)


# ---------------------------------------------------------------------------
# POD basis


def test_pod_basis_diagonal():
    V = pod_basis(np.diag([3.0, 2.0, 1.0]), 2)
    np.testing.assert_allclose(np.abs(V), np.eye(3)[:, :2])


def test_pod_basis_full_rank_reconstructs():
    A = np.random.default_rng(10).standard_normal((15, 6))
    V = pod_basis(A, 6)
    assert np.linalg.norm(A - V @ (V.T @ A)) <= 1e-9 * np.linalg.norm(A)


def test_pod_basis_error_identity():
    A = np.random.default_rng(11).standard_normal((20, 9))
    s = svd_thin(A).singular_values
    V = pod_basis(A, 4)
    err = np.sum((A - V @ (V.T @ A)) ** 2)
    assert abs(err - np.sum(s[4:] ** 2)) <= 1e-9 * np.sum(s[4:] ** 2)


def test_pod_basis_matches_gram_formula():
    # columns v_i = A u_i / sqrt(lambda_i) with (lambda_i, u_i) eigenpairs of A^T A
    A = np.random.default_rng(12).standard_normal((30, 8))
    lam, W = eig_sym(A.T @ A)
    V_gram = A @ W[:, :5] / np.sqrt(lam[:5])
    V = pod_basis(A, 5)
    np.testing.assert_allclose(np.abs(V.T @ V_gram), np.eye(5), atol=1e-9)


def test_pod_basis_rank_deficient_names_rank():
    rng = np.random.default_rng(13)
    A = rng.standard_normal((10, 2)) @ rng.standard_normal((2, 6))
    with pytest.raises(RankDeficientError) as info:
        pod_basis(A, 3)
    assert info.value.attainable_rank == 2
