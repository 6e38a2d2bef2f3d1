import numpy as np
import pytest

from maxrom.cae import (
    CaeModel,
    TrainConfig,
    cae_from_payload,
    cae_payload,
    coefficients_to_items,
    init_params,
    items_to_coefficients,
    mirrored_architecture,
    paper_architecture,
    prepare_dataset,
    train,
)
from maxrom.errors import CorruptModelError, InvalidArgumentError, SnapshotFormatError, TrainingDivergedError


def cosine_coefficients(d=3, n_basis=16, n_t=20, n_p=10, seed=1):
    """Smooth coefficient trajectories over a (t, mu) grid, decaying with the mode index."""
    rng = np.random.default_rng(seed)
    T, M = np.meshgrid(np.linspace(0, 1, n_t), np.linspace(1, 2, n_p), indexing="ij")
    T, M = T.ravel(), M.ravel()
    freq = rng.uniform(0.5, 2, (d, n_basis))
    phase = rng.uniform(0, 2 * np.pi, (d, n_basis))
    amp = np.exp(-0.2 * np.arange(n_basis))
    return amp[None, :, None] * np.cos(2 * np.pi * freq[..., None] * T * M + phase[..., None])


@pytest.fixture(scope="module")
def trained():
    coords = cosine_coefficients()
    ds = prepare_dataset(coords, 0.8, 0)
    arch = mirrored_architecture(4, 4, hidden=64)
    model = train(ds, arch, TrainConfig(lr0=1e-3, decay=1e-3, batch=20, max_epochs=300, patience=300))
    return ds, model


def test_items_layout_round_trip():
    coords = np.arange(2 * 9 * 5, dtype=float).reshape(2, 9, 5)
    items = coefficients_to_items(coords)
    assert items.shape == (5, 3, 3, 2)
    # column 4 of channel 1, reshaped row-major
    np.testing.assert_array_equal(items[4, :, :, 1], coords[1, :, 4].reshape(3, 3))
    np.testing.assert_array_equal(items_to_coefficients(items), coords)
    with pytest.raises(InvalidArgumentError):
        coefficients_to_items(np.zeros((1, 8, 3)))


def test_dataset_split_and_normalisation():
    coords = cosine_coefficients()
    ds = prepare_dataset(coords, 0.8, 7)
    assert len(ds.train_index) == 160 and len(ds.valid_index) == 40
    assert sorted(np.concatenate([ds.train_index, ds.valid_index])) == list(range(200))
    assert ds.train.min() == 0.0 and ds.train.max() == 1.0
    raw = coefficients_to_items(coords)
    assert ds.lo == raw[ds.train_index].min() and ds.hi == raw[ds.train_index].max()
    np.testing.assert_allclose(ds.denormalize(ds.valid), raw[ds.valid_index], atol=1e-12)
    again = prepare_dataset(coords, 0.8, 7)
    np.testing.assert_array_equal(again.train_index, ds.train_index)


def test_unit_range_data_unchanged():
    coords = np.random.default_rng(2).uniform(size=(1, 4, 50))
    coords[0, 0, :2] = [0.0, 1.0]
    ds = prepare_dataset(coords, 0.5, 3)
    if ds.lo == 0.0 and ds.hi == 1.0:
        np.testing.assert_array_equal(ds.train, coefficients_to_items(coords)[ds.train_index])


def test_dataset_errors():
    with pytest.raises(InvalidArgumentError):
        prepare_dataset(np.ones((1, 4, 10)), 0.8, 0)
    with pytest.raises(InvalidArgumentError):
        prepare_dataset(np.random.default_rng(0).random((1, 4, 10)), 1.0, 0)


def test_learning_rate_schedule():
    cfg = TrainConfig()
    assert cfg.learning_rate(0) == 1e-4
    assert cfg.learning_rate(20) == pytest.approx(0.5e-4)


def test_training_beats_linear_autoencoder(trained):
    ds, model = trained
    X = ds.train.reshape(len(ds.train), -1)
    s = np.linalg.svd(X - X.mean(0), compute_uv=False)
    linear = np.sum(s[4:] ** 2) / X.size  # best rank-4 affine reconstruction MSE
    assert model.log[model.best_epoch].train_loss < 1.5 * linear


def test_best_checkpoint_and_round_trip_audit(trained):
    ds, model = trained
    best = model.log[model.best_epoch].val_loss
    assert all(best <= e.val_loss for e in model.log)
    assert model.loss(ds.valid) == pytest.approx(best, rel=1e-12)
    assert model.loss(ds.train) <= 2 * best


def test_encode_decode_shapes_and_determinism(trained):
    ds, model = trained
    code = model.encode(ds.train[0])
    assert code.shape == (4,)
    assert model.encode(ds.train[0]).tobytes() == code.tobytes()
    assert model.encode(ds.train[:5]).shape == (5, 4)
    assert model.decode(np.zeros(4)).shape == (4, 4, 3)
    raw = model.decode_coefficients(code)
    np.testing.assert_allclose(raw, items_to_coefficients(model.denormalize(model.decode(code))[None])[:, :, 0])
    assert (model.lo, model.hi) == (ds.lo, ds.hi)
    with pytest.raises(InvalidArgumentError):
        model.decode(np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        model.encode(np.zeros((5, 5, 3)))


def test_training_is_bit_reproducible():
    ds = prepare_dataset(cosine_coefficients(n_t=8, n_p=5), 0.8, 0)
    arch = mirrored_architecture(4, 2, channels=(2, 2, 2, 2), hidden=8)
    cfg = TrainConfig(lr0=1e-3, decay=0.0, batch=8, max_epochs=5, patience=5, seed=3)
    a, b = train(ds, arch, cfg), train(ds, arch, cfg)
    for p, q in zip(a.params, b.params):
        assert p.tobytes() == q.tobytes()
    assert a.log == b.log


def test_divergence_reports_epoch():
    ds = prepare_dataset(cosine_coefficients(n_t=8, n_p=5), 0.8, 0)
    arch = mirrored_architecture(4, 2, channels=(2, 2, 2, 2), hidden=8)
    with pytest.raises(TrainingDivergedError) as info:
        train(ds, arch, TrainConfig(lr0=1e300, decay=0.0, batch=8, max_epochs=5, patience=5))
    assert info.value.epoch >= 0


def test_batch_larger_than_training_set_rejected():
    ds = prepare_dataset(cosine_coefficients(n_t=4, n_p=5), 0.8, 0)
    with pytest.raises(InvalidArgumentError):
        train(ds, mirrored_architecture(4, 2), TrainConfig(batch=17))


def test_payload_round_trip_and_corruption():
    arch = paper_architecture(20)
    model = CaeModel(arch, init_params(arch, np.random.default_rng(0)), -0.5, 2.0, [], 12)
    back = cae_from_payload(cae_payload(model))
    assert back.arch == arch and (back.lo, back.hi, back.best_epoch) == (-0.5, 2.0, 12)
    for p, q in zip(model.params, back.params):
        assert p.tobytes() == q.tobytes()
    with pytest.raises(SnapshotFormatError):
        cae_from_payload(cae_payload(model)[:-16])
    raw = bytearray(cae_payload(model))
    raw[0:4] = np.uint32(13).tobytes()  # input side no longer matches the layer chain
    with pytest.raises(CorruptModelError):
        cae_from_payload(bytes(raw))
