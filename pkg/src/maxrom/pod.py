"""Two-step POD, projection and the POD error measures."""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .containers import Reader, Writer
from .errors import CorruptModelError, InvalidArgumentError
from .linalg import basis_from_svd, svd_thin


def is_perfect_square(n):
    return n >= 1 and math.isqrt(n) ** 2 == n


@dataclass(frozen=True)
class PodBasis:
    """Per-component POD bases.

    Attributes
    ----------
    bases : ndarray, shape (ncomp, N_h, n_basis)
        Orthonormal columns per component.
    k : int
        First-step truncation.
    components : tuple of str
    sv_step1 : ndarray, shape (ncomp, N_p, min(N_h, N_t))
        Singular values of every trajectory matrix.
    sv_step2 : ndarray, shape (ncomp, min(N_h, k N_p))
        Singular values of the assembled compressed matrix.
    """

    bases: np.ndarray
    k: int
    components: tuple
    sv_step1: np.ndarray
    sv_step2: np.ndarray

    @property
    def n_basis(self):
        return self.bases.shape[2]

    @property
    def n_h(self):
        return self.bases.shape[1]

    @property
    def side(self):
        return math.isqrt(self.n_basis)

    def basis(self, component):
        if isinstance(component, str):
            component = self.components.index(component)
        return self.bases[component]


def two_step_pod(snapshots, k, n_basis, *, require_square=True):
    """Two-step POD of every component of a snapshot set.

    Step 1 compresses each trajectory ``S^j`` to its ``k`` leading POD modes
    ``T^j``; step 2 takes the ``n_basis`` leading modes of ``[T^1 | ... | T^Np]``.

    Raises
    ------
    RankDeficientError
        If ``k`` exceeds the numerical rank of a trajectory or ``n_basis`` the
        rank of the assembled matrix; ``step`` names where.
    """
    if k < 1 or n_basis < 1:
        raise InvalidArgumentError(f"k and n_basis must be >= 1, got {k}, {n_basis}")
    if require_square and not is_perfect_square(n_basis):
        raise InvalidArgumentError(f"basis size {n_basis} is not a perfect square")
    nc, n_p, n_h, n_t = snapshots.data.shape
    bases, sv1, sv2 = [], [], []
    for c, name in enumerate(snapshots.components):
        blocks, svals = [], []
        for j in range(n_p):
            res = svd_thin(snapshots.data[c, j])
            svals.append(res.singular_values)
            blocks.append(basis_from_svd(res, k, step=f"step 1 ({name}, parameter {j})"))
        res = svd_thin(np.concatenate(blocks, axis=1))
        bases.append(basis_from_svd(res, n_basis, step=f"step 2 ({name})"))
        sv1.append(np.array(svals))
        sv2.append(res.singular_values)
    return PodBasis(np.array(bases), int(k), tuple(snapshots.components), np.array(sv1), np.array(sv2))


def compressed_bases(snapshots, k, component):
    """First-step bases ``T^j`` of one component (list over parameters)."""
    c = snapshots._index(component)
    return [
        basis_from_svd(svd_thin(S), k, step=f"step 1 (parameter {j})")
        for j, S in enumerate(snapshots.data[c])
    ]


def project(V, u):
    """Intrinsic coordinates ``V^T u`` (``u`` may hold several columns)."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] != V.shape[0]:
        raise InvalidArgumentError(f"vector length {u.shape[0]} does not match basis rows {V.shape[0]}")
    return V.T @ u


def reconstruct(V, alpha):
    """Field ``V alpha`` from intrinsic coordinates."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape[0] != V.shape[1]:
        raise InvalidArgumentError(f"coefficient length {alpha.shape[0]} does not match basis size {V.shape[1]}")
    return V @ alpha


def intrinsic_coordinates(basis, snapshots):
    """Coefficients ``C[c]`` of shape (n_basis, N_s), columns parameter-major."""
    if basis.n_h != snapshots.n_h:
        raise InvalidArgumentError("basis and snapshots disagree on N_h")
    return np.array(
        [project(basis.bases[c], snapshots.snapshot_matrix(c)) for c in range(len(basis.components))]
    )


class ErrorIndicator(NamedTuple):
    mean: dict
    excluded: dict


def relative_errors(reference, approx):
    """Column-wise ``||ref - approx|| / ||ref||``; zero-norm columns give NaN."""
    num = np.linalg.norm(reference - approx, axis=0)
    den = np.linalg.norm(reference, axis=0)
    out = np.full(num.shape, np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def pod_error_indicator(basis, snapshots):
    """Mean relative projection error over all snapshots, per component.

    Zero-norm snapshot columns are skipped and counted in ``excluded``.
    """
    if basis.n_basis < 1:
        raise InvalidArgumentError("empty basis")
    if basis.n_h != snapshots.n_h:
        raise InvalidArgumentError("basis and snapshots disagree on N_h")
    mean, excluded = {}, {}
    for c, name in enumerate(basis.components):
        S = snapshots.snapshot_matrix(c)
        V = basis.bases[c]
        e = relative_errors(S, V @ (V.T @ S))
        ok = ~np.isnan(e)
        excluded[name] = int((~ok).sum())
        mean[name] = float(e[ok].mean()) if ok.any() else float("nan")
    return ErrorIndicator(mean, excluded)


class BoundCheck(NamedTuple):
    measured: float
    l1: float
    l2: float


def two_step_error_bound(snapshots, basis, component):
    """Measured two-step projection error and the two a-priori terms.

    ``measured`` is the sum over all snapshots of the (unsquared) projection
    error norm. ``l1`` bounds the first-step part::

        (1 + ||V V^T||_F) sum_j (N_t sum_{i>k} (sigma_i^j)^2)^(1/2)

    and ``l2`` the second-step part::

        max_j sum_i ||S^j(:, i)|| * max_{i,j} ||T^j(:, i)|| * (k N_p sum_{i>N} sigma_i^2)^(1/2)

    where ``sigma_i`` are the singular values of the assembled compressed
    matrix ``[T^1 | ... | T^Np]``.
    """
    c = snapshots._index(component)
    V = basis.bases[c]
    k = basis.k
    n_p, n_t = snapshots.plan.n_p, snapshots.plan.n_t
    measured = 0.0
    col_sums = []
    for S in snapshots.data[c]:
        R = S - V @ (V.T @ S)
        measured += float(np.linalg.norm(R, axis=0).sum())
        col_sums.append(float(np.linalg.norm(S, axis=0).sum()))
    vv_fro = math.sqrt(basis.n_basis)  # ||V V^T||_F for orthonormal V
    tails1 = [math.sqrt(n_t * float(np.sum(s[k:] ** 2))) for s in basis.sv_step1[c]]
    l1 = (1.0 + vv_fro) * sum(tails1)
    # columns of each T^j are orthonormal, so their norms are one
    t_max = max(float(np.max(np.linalg.norm(T, axis=0))) for T in compressed_bases(snapshots, k, c))
    tail2 = float(np.sum(basis.sv_step2[c][basis.n_basis :] ** 2))
    l2 = max(col_sums) * t_max * math.sqrt(k * n_p * tail2)
    return BoundCheck(measured, l1, l2)


# ---------------------------------------------------------------------------
# persistence (section payload)


def pod_payload(basis):
    w = Writer()
    w.u32(basis.k, len(basis.components))
    for name in basis.components:
        w.text(name)
    w.array(basis.bases)
    w.array(basis.sv_step1)
    w.array(basis.sv_step2)
    return w.getvalue()


def pod_from_payload(data, offset=0):
    r = Reader(data, offset, what="PODBASIS section")
    k, nc = r.u32(), r.u32()
    names = tuple(r.text() for _ in range(nc))
    bases = r.array()
    sv1 = r.array()
    sv2 = r.array()
    r.done()
    if bases.ndim != 3 or bases.shape[0] != nc:
        raise CorruptModelError("PODBASIS section has inconsistent shapes")
    return PodBasis(bases, int(k), names, sv1, sv2)
