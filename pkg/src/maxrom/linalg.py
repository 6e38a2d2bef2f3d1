"""Dense real matrix kernels: Jacobi eigensolver, thin SVD, Householder QR, POD.

All routines take and return ``numpy.ndarray`` (float64). The Jacobi sweeps use
a round-robin pair ordering, so every rotation inside one round acts on a
disjoint column pair and a whole round is applied with a few vectorised numpy
operations.
"""

from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import ConvergenceError, InvalidArgumentError, RankDeficientError

EPS = np.finfo(np.float64).eps
RANK_RTOL = 1e-12
MAX_SWEEPS = 60


class SvdResult(NamedTuple):
    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray


def _as_matrix(A, name="A"):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {A.shape}")
    if A.size == 0:
        raise InvalidArgumentError(f"{name} is empty (shape {A.shape})")
    if not np.all(np.isfinite(A)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return A


@lru_cache(maxsize=64)
def _round_robin(n):
    """Rounds of disjoint index pairs covering every pair of ``range(n)`` once.

    Odd ``n`` gets a phantom index which is dropped from the pairs.
    """
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def fix_signs(vectors, partners=None):
    """Flip columns so each one's largest-magnitude entry is positive.

    ``partners`` (same column count) receives the same flips, which keeps
    products like ``U diag(s) V^T`` unchanged.
    """
    if vectors.shape[1] == 0:
        return vectors, partners
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    vectors = vectors * signs
    if partners is not None:
        partners = partners * signs
    return vectors, partners


def eig_sym(A, max_sweeps=MAX_SWEEPS):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    A : array_like, shape (n, n)
        Symmetric matrix (asymmetry up to 1e-12 relative is tolerated).
    max_sweeps : int
        Cap on full Jacobi sweeps before :class:`ConvergenceError`.

    Returns
    -------
    eigenvalues : ndarray, shape (n,)
        Sorted in descending order.
    eigenvectors : ndarray, shape (n, n)
        Orthonormal columns; the largest-magnitude entry of each is positive.
    """
    A = _as_matrix(A)
    n, m = A.shape
    if n != m:
        raise InvalidArgumentError(f"eig_sym needs a square matrix, got {A.shape}")
    scale = np.max(np.abs(A))
    if np.max(np.abs(A - A.T)) > 1e-12 * scale:
        raise InvalidArgumentError("eig_sym input is not symmetric")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    if n == 1 or scale == 0.0:
        return _sorted_eig(np.diag(A).copy(), V)

    tiny = (EPS * scale) ** 2
    for _ in range(max_sweeps):
        rotated = False
        for p, q in _round_robin(n):
            apq = A[p, q]
            app = A[p, p]
            aqq = A[q, q]
            active = (np.abs(apq) > EPS * np.sqrt(np.abs(app * aqq))) & (
                np.abs(apq) > tiny
            )
            if not active.any():
                continue
            rotated = True
            p, q, apq, app, aqq = p[active], q[active], apq[active], app[active], aqq[active]
            tau = (aqq - app) / (2.0 * apq)
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            Ap, Aq = A[:, p], A[:, q]
            A[:, p] = c * Ap - s * Aq
            A[:, q] = s * Ap + c * Aq
            Ap, Aq = A[p, :], A[q, :]
            A[p, :] = c[:, None] * Ap - s[:, None] * Aq
            A[q, :] = s[:, None] * Ap + c[:, None] * Aq
            A[p, q] = 0.0
            A[q, p] = 0.0
            A[p, p] = app - t * apq
            A[q, q] = aqq + t * apq

            Vp, Vq = V[:, p], V[:, q]
            V[:, p] = c * Vp - s * Vq
            V[:, q] = s * Vp + c * Vq
        if not rotated:
            return _sorted_eig(np.diag(A).copy(), V)
    raise ConvergenceError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")


def _sorted_eig(w, V):
    order = np.argsort(-w, kind="stable")
    w = w[order]
    V, _ = fix_signs(V[:, order])
    return w, V


def _householder(A, pivoting, stop_rtol=0.0):
    """Reflectors ``(vs, betas)``, triangular factor and permutation of A.

    With pivoting, the factorisation stops once every remaining column norm
    is at most ``stop_rtol`` times the first pivot; the trailing rows of R are
    then left at zero and fewer reflectors are returned.
    """
    m, n = A.shape
    R = A.copy()
    perm = np.arange(n)
    vs = []
    betas = []
    norms = np.einsum("ij,ij->j", R, R) if pivoting else None
    first = None
    for j in range(n):
        if pivoting:
            piv = j + int(np.argmax(norms[j:]))
            if first is None:
                first = np.sqrt(norms[piv])
            if np.sqrt(norms[piv]) <= stop_rtol * first or first == 0.0:
                R[j:, j:] = 0.0
                break
            if piv != j:
                R[:, [j, piv]] = R[:, [piv, j]]
                perm[[j, piv]] = perm[[piv, j]]
                norms[[j, piv]] = norms[[piv, j]]
        x = R[j:, j]
        alpha = np.linalg.norm(x)
        v = x.copy()
        beta = 0.0
        if alpha != 0.0:
            v[0] += np.copysign(alpha, x[0])
            beta = 2.0 / (v @ v)
            R[j:, j:] -= np.outer(beta * v, v @ R[j:, j:])
            R[j + 1 :, j] = 0.0
        vs.append(v)
        betas.append(beta)
        if pivoting:
            # downdate the trailing column norms; recompute to avoid cancellation
            norms[j + 1 :] -= R[j, j + 1 :] ** 2
            stale = norms[j + 1 :] <= 1e-6 * np.einsum("ij,ij->j", R[:j + 1, j + 1 :], R[:j + 1, j + 1 :])
            if stale.any():
                cols = j + 1 + np.flatnonzero(stale)
                norms[cols] = np.einsum("ij,ij->j", R[j + 1 :, cols], R[j + 1 :, cols])
    return vs, np.array(betas), np.triu(R[:n, :]), perm


def _apply_reflectors(vs, betas, E):
    """Compute ``H_0 H_1 ... H_{n-1} E`` in place."""
    for j in range(len(vs) - 1, -1, -1):
        if betas[j] == 0.0:
            continue
        v = vs[j]
        E[j:] -= np.outer(betas[j] * v, v @ E[j:])
    return E


def householder_qr(A, pivoting=False):
    """Thin Householder QR, optionally with column pivoting.

    Returns ``(Q, R, perm)`` with ``A[:, perm] = Q @ R``, ``Q`` of shape
    ``(m, n)`` with orthonormal columns and ``R`` upper triangular. Requires
    ``m >= n``.
    """
    A = _as_matrix(A)
    m, n = A.shape
    if m < n:
        raise InvalidArgumentError(f"householder_qr needs rows >= cols, got {A.shape}")
    vs, betas, R, perm = _householder(A, pivoting)
    Q = _apply_reflectors(vs, betas, np.eye(m, n))
    return Q, R, perm


def orthonormal_complement(U, count):
    """Return ``count`` orthonormal vectors orthogonal to the columns of ``U``.

    ``U`` must have orthonormal columns (or be empty).
    """
    m, r = U.shape
    if count + r > m:
        raise InvalidArgumentError(f"cannot complete {r} columns by {count} in R^{m}")
    E = np.zeros((m, count))
    E[np.arange(r, r + count), np.arange(count)] = 1.0
    if r == 0:
        return E
    vs, betas, _, _ = _householder(U, pivoting=False)
    return _apply_reflectors(vs, betas, E)


def _one_sided_jacobi(Y, max_sweeps):
    """Orthogonalise the rows of Y in place; returns the accumulated rotations.

    Rows are used instead of columns so the gathers in each round touch
    contiguous memory. On return ``Y = W^T Y0`` has mutually orthogonal rows.
    """
    n, length = Y.shape
    if n == 1:
        return np.eye(1)
    # Y and the rotation accumulator side by side, so one update rotates both
    Z = np.hstack([Y, np.eye(n)])
    # rounding in the inner products keeps |gamma| / sqrt(alpha beta) at a few
    # eps, so a bare eps threshold can cycle forever; sqrt(length) eps is safe
    tol = EPS * np.sqrt(length)
    for _ in range(max_sweeps):
        rotated = False
        for p, q in _round_robin(n):
            Zp, Zq = Z[p], Z[q]
            Yp, Yq = Zp[:, :length], Zq[:, :length]
            alpha = np.einsum("ij,ij->i", Yp, Yp)
            beta = np.einsum("ij,ij->i", Yq, Yq)
            gamma = np.einsum("ij,ij->i", Yp, Yq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            # inactive pairs get the exact identity rotation c = 1, s = 0
            gamma = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t = np.where(active, t, 0.0)
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = t[:, None] * c
            Z[p] = c * Zp - s * Zq
            Z[q] = s * Zp + c * Zq
        if not rotated:
            Y[:] = Z[:, :length]
            return Z[:, length:].T.copy()
    raise ConvergenceError(f"one-sided Jacobi SVD did not converge in {max_sweeps} sweeps")


def svd_thin(A, max_sweeps=MAX_SWEEPS):
    """Thin SVD ``A = U diag(s) V^T`` with ``k = min(m, n)`` terms.

    The matrix is first reduced by pivoted Householder QR; rows of ``R`` whose
    pivot is at rounding level (below ``10 eps |R_00|``) are dropped, which
    perturbs ``A`` by less than ``10 eps sqrt(n) ||A||``. The kept rows are
    factored once more by QR and the resulting triangular factor is
    orthogonalised by one-sided Jacobi rotations. Singular values
    come out sorted descending with high relative accuracy; left vectors are
    sign-fixed (largest-magnitude entry positive) and the right vectors follow.
    """
    A = _as_matrix(A)
    m, n = A.shape
    if m < n:
        U, s, V = svd_thin(A.T, max_sweeps)
        U, V = fix_signs(V, U)
        return SvdResult(U, s, V)

    vs, betas, R, perm = _householder(A, pivoting=True, stop_rtol=10.0 * EPS)
    pivots = np.abs(np.diag(R))
    r = int(np.count_nonzero(pivots > 10.0 * EPS * pivots[0])) if pivots[0] > 0 else 0
    Q = _apply_reflectors(vs, betas, np.eye(m, r))

    s = np.zeros(n)
    U = np.zeros((m, n))
    Ut = np.zeros((n, n))
    if r > 0:
        # second QR: R_r^T = Q2 R2, so R_r = R2^T Q2^T and Jacobi runs on the
        # nearly diagonal r x r factor R2^T, which needs far fewer sweeps
        vs2, betas2, R2, _ = _householder(R[:r].T.copy(), pivoting=False)
        Q2 = _apply_reflectors(vs2, betas2, np.eye(n, r))
        X = np.ascontiguousarray(R2.T)
        W = _one_sided_jacobi(X, max_sweeps)
        # R_r = W X Q2^T with orthogonal rows in X  =>  A P = (Q W) diag(s) (X Q2^T / s)
        sr = np.linalg.norm(X, axis=1)
        order = np.argsort(-sr, kind="stable")
        sr, X, W = sr[order], X[order], W[:, order]
        live = sr > 0.0
        s[:r] = sr
        U[:, :r] = Q @ W
        Ut[:, :r][:, live] = Q2 @ (X[live] / sr[live, None]).T
        if not live.all():
            Ut[:, :r][:, ~live] = orthonormal_complement(Ut[:, :r][:, live], int((~live).sum()))
    if r < n:
        U[:, r:] = orthonormal_complement(U[:, :r], n - r)
        Ut[:, r:] = orthonormal_complement(Ut[:, :r], n - r)

    V = np.empty_like(Ut)
    V[perm, :] = Ut
    U, V = fix_signs(U, V)
    return SvdResult(U, s, V)


def numerical_rank(singular_values, rtol=RANK_RTOL):
    """Count singular values above ``rtol`` times the largest one."""
    s = np.asarray(singular_values)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


def basis_from_svd(res, k, step=None):
    """Leading ``k`` left singular vectors of an existing SVD, rank-checked."""
    if k < 1:
        raise InvalidArgumentError(f"basis size must be >= 1, got {k}")
    r = numerical_rank(res.singular_values)
    if k > r:
        where = f" in {step}" if step else ""
        raise RankDeficientError(
            f"requested {k} POD modes{where} but the numerical rank is {r}",
            attainable_rank=r,
            step=step,
        )
    return res.left_vectors[:, :k].copy()


def pod_basis(A, k):
    """Orthonormal POD basis of size ``k`` for the columns of ``A``.

    Equivalent to ``v_i = A u_i / sqrt(lambda_i)`` with ``(lambda_i, u_i)``
    the leading eigenpairs of ``A^T A``, but computed from the SVD of ``A``
    so that modes with small singular values stay orthonormal.
    """
    return basis_from_svd(svd_thin(A), k)
