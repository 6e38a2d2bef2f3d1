import numpy as np
import pytest
import scipy.linalg
from helpers import synthetic_snapshots

from maxrom.errors import InvalidArgumentError, RankDeficientError
from maxrom.pod import (
    PodBasis,
    intrinsic_coordinates,
    pod_error_indicator,
    pod_from_payload,
    pod_payload,
    project,
    reconstruct,
    two_step_error_bound,
    two_step_pod,
)
from maxrom.snapshots import SamplingPlan, SnapshotSet


def small_set(n_h=30, n_t=8, n_p=3, seed=0, rank=None):
    rng = np.random.default_rng(seed)
    if rank is None:
        data = rng.standard_normal((3, n_p, n_h, n_t))
    else:
        data = np.einsum("cpir,cprj->cpij", rng.standard_normal((3, n_p, n_h, rank)),
                         rng.standard_normal((3, n_p, rank, n_t)))
    return SnapshotSet(data, SamplingPlan(np.arange(n_t, dtype=float), np.arange(n_p, dtype=float)[:, None]))


def smooth_set(n_h=30, n_t=8, n_p=3):
    """Four dominant spatial modes with smooth weights plus a small perturbation."""
    rng = np.random.default_rng(1)
    x = np.linspace(0, 1, n_h)[:, None]
    t = np.linspace(0, 1, n_t)[None, :]
    modes = [np.sin((m + 1) * np.pi * x) for m in range(4)]
    data = np.empty((3, n_p, n_h, n_t))
    for j, mu in enumerate(np.linspace(1, 2, n_p)):
        u = sum(m * np.cos((i + 1) * mu * t + i) * 2.0**-i for i, m in enumerate(modes))
        for c in range(3):
            data[c, j] = (c + 1) * u + 1e-3 * rng.standard_normal((n_h, n_t))
    return SnapshotSet(data, SamplingPlan(t.ravel(), np.linspace(1, 2, n_p)[:, None]))


def test_lossless_limit():
    s = small_set(n_h=30, n_t=4, n_p=4)
    basis = two_step_pod(s, k=4, n_basis=16)
    for c in range(3):
        S = s.snapshot_matrix(c)
        V = basis.bases[c]
        assert np.linalg.norm(S - V @ (V.T @ S)) <= 1e-8 * np.linalg.norm(S)
        np.testing.assert_allclose(V.T @ V, np.eye(16), atol=1e-12)


def test_subspace_close_to_direct_pod():
    s = smooth_set()
    basis = two_step_pod(s, k=4, n_basis=4)
    for c in range(3):
        direct = np.linalg.svd(s.snapshot_matrix(c), full_matrices=False)[0][:, :4]
        angles = scipy.linalg.subspace_angles(basis.bases[c], direct)
        assert angles.max() <= 0.1


def test_rank_deficiency_names_step():
    s = small_set(rank=2)
    with pytest.raises(RankDeficientError) as info:
        two_step_pod(s, k=3, n_basis=4)
    assert "step 1" in info.value.step and info.value.attainable_rank == 2
    with pytest.raises(RankDeficientError) as info:
        two_step_pod(s, k=2, n_basis=9)
    assert "step 2" in info.value.step and info.value.attainable_rank == 6


def test_non_square_basis_rejected():
    with pytest.raises(InvalidArgumentError):
        two_step_pod(small_set(), k=2, n_basis=5)


def test_projection_identities():
    rng = np.random.default_rng(2)
    V, _ = np.linalg.qr(rng.standard_normal((40, 9)))
    a = rng.standard_normal(9)
    u = V @ a
    back = reconstruct(V, project(V, u))
    assert np.linalg.norm(back - u) <= 1e-10 * np.linalg.norm(u)
    w = rng.standard_normal(40)
    w -= V @ (V.T @ w)
    np.testing.assert_allclose(project(V, w), 0, atol=1e-13)
    r = rng.standard_normal(40)
    p = reconstruct(V, project(V, r))
    total = np.sum((r - p) ** 2) + np.sum(p**2)
    assert abs(total - np.sum(r**2)) <= 1e-9 * np.sum(r**2)
    with pytest.raises(InvalidArgumentError):
        project(V, np.ones(39))
    with pytest.raises(InvalidArgumentError):
        reconstruct(V, np.ones(8))


def test_error_indicator_against_direct_recomputation():
    s = small_set(seed=4)
    basis = two_step_pod(s, k=3, n_basis=4)
    ind = pod_error_indicator(basis, s)
    for c, name in enumerate(s.components):
        V = basis.bases[c]
        errs = []
        for j in range(s.plan.n_p):
            for i in range(s.plan.n_t):
                u = s.data[c, j][:, i]
                errs.append(np.linalg.norm(u - V @ (V.T @ u)) / np.linalg.norm(u))
        assert ind.mean[name] == pytest.approx(np.mean(errs), rel=1e-12)
        assert ind.excluded[name] == 0


def test_error_indicator_zero_inside_span_and_excludes_zero_columns():
    s = small_set(n_t=4, n_p=2)
    rng = np.random.default_rng(3)
    shape = rng.standard_normal(30)
    data = np.einsum("i,cpt->cpit", shape, rng.standard_normal((3, 2, 4)))
    data[:, 0, :, 0] = 0.0
    s = SnapshotSet(data, s.plan)
    basis = two_step_pod(s, k=1, n_basis=1)
    ind = pod_error_indicator(basis, s)
    for name in s.components:
        assert ind.mean[name] < 1e-12
        assert ind.excluded[name] == 1


def test_indicator_monotone_in_basis_size():
    s = synthetic_snapshots(n_h=200, n_t=16, n_p=4)
    values = [pod_error_indicator(two_step_pod(s, 4, n), s).mean["Ez"] for n in (1, 4, 9, 16)]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


def test_empty_basis_rejected():
    s = small_set()
    empty = PodBasis(np.zeros((3, 30, 0)), 1, s.components, np.zeros((3, 3, 8)), np.zeros((3, 3)))
    with pytest.raises(InvalidArgumentError):
        pod_error_indicator(empty, s)


def test_two_step_bound_holds_on_small_set():
    s = synthetic_snapshots(n_h=300, n_t=16, n_p=4)
    basis = two_step_pod(s, 3, 4)
    for c in s.components:
        b = two_step_error_bound(s, basis, c)
        assert 0 < b.measured <= b.l1 + b.l2


def test_intrinsic_coordinates_and_payload():
    s = small_set()
    basis = two_step_pod(s, 3, 4)
    C = intrinsic_coordinates(basis, s)
    assert C.shape == (3, 4, 24)
    np.testing.assert_allclose(C[1], basis.bases[1].T @ s.snapshot_matrix(1))
    back = pod_from_payload(pod_payload(basis))
    assert back.k == 3 and back.components == basis.components
    assert back.bases.tobytes() == basis.bases.tobytes()
    np.testing.assert_array_equal(back.sv_step2, basis.sv_step2)
