"""Convolutional autoencoder over the intrinsic coordinates.

Each snapshot contributes one item: its ``N = side^2`` coefficients per field
component, reshaped row-major to ``side x side`` and stacked as ``d``
channels. The encoder is a stack of convolutions followed by dense layers
down to the code; the decoder is dense layers followed by transposed
convolutions. Every layer uses ELU except the last decoder layer.
"""

import copy
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .containers import Reader, Writer
from .errors import CorruptModelError, InvalidArgumentError, TrainingDivergedError
from .nn import autodiff as ad
from .nn import kernels
from .nn.optim import AdamState, adam_step, random_streams, xavier_uniform

KIND_CONV, KIND_DENSE, KIND_TCONV = 1, 2, 3


# ---------------------------------------------------------------------------
# architecture


class ConvSpec(NamedTuple):
    """One (transposed) convolution: output channels, square kernel, stride, padding."""

    channels: int
    kernel: int
    stride: int
    padding: int


@dataclass(frozen=True)
class Architecture:
    """Layer plan of the autoencoder.

    Attributes
    ----------
    side : int
        Spatial size of the input planes.
    in_channels : int
    code_size : int
    encoder_convs : tuple of ConvSpec
    encoder_hidden : tuple of int
        Widths of the dense layers between the flattened features and the code.
    decoder_hidden : tuple of int
        Widths of the dense layers after the code; the last one must equal the
        size of ``decoder_grid``.
    decoder_grid : (channels, height, width)
        Shape the last dense output is reshaped to.
    decoder_tconvs : tuple of (ConvSpec, int)
        Transposed convolutions with their output spatial size. The last one
        must output ``in_channels`` planes of size ``side``.
    """

    side: int
    in_channels: int
    code_size: int
    encoder_convs: tuple
    encoder_hidden: tuple
    decoder_hidden: tuple
    decoder_grid: tuple
    decoder_tconvs: tuple

    def __post_init__(self):
        if self.code_size < 1:
            raise InvalidArgumentError("code size must be >= 1")
        self.encoder_shapes()  # validates the encoder chain
        c, h, w = self.decoder_grid
        if self.decoder_hidden[-1] != c * h * w:
            raise InvalidArgumentError("last decoder dense width must match the reshape grid")
        size = h
        for spec, out in self.decoder_tconvs:
            kernels.tconv_output_padding(size, out, spec.kernel, spec.stride, spec.padding)
            size = out
        last = self.decoder_tconvs[-1]
        if last[0].channels != self.in_channels or last[1] != self.side:
            raise InvalidArgumentError("decoder must end with the input shape")

    def encoder_shapes(self):
        """(channels, size) after every encoder convolution, starting with the input."""
        out = [(self.in_channels, self.side)]
        for spec in self.encoder_convs:
            n = kernels.conv_output_size(out[-1][1], spec.kernel, spec.stride, spec.padding)
            if n < 1:
                raise InvalidArgumentError(f"encoder conv {spec} produces an empty map")
            out.append((spec.channels, n))
        return out

    @property
    def flat_size(self):
        c, n = self.encoder_shapes()[-1]
        return c * n * n

    def layer_shapes(self):
        """Weight and bias shapes in parameter order, with the layer kind."""
        out = []
        chans = [c for c, _ in self.encoder_shapes()]
        for spec, c_in in zip(self.encoder_convs, chans[:-1]):
            out.append((KIND_CONV, (spec.channels, c_in, spec.kernel, spec.kernel), (spec.channels,)))
        widths = [self.flat_size, *self.encoder_hidden, self.code_size]
        for a, b in zip(widths[:-1], widths[1:]):
            out.append((KIND_DENSE, (b, a), (b,)))
        widths = [self.code_size, *self.decoder_hidden]
        for a, b in zip(widths[:-1], widths[1:]):
            out.append((KIND_DENSE, (b, a), (b,)))
        c_in = self.decoder_grid[0]
        for spec, _ in self.decoder_tconvs:
            out.append((KIND_TCONV, (c_in, spec.channels, spec.kernel, spec.kernel), (spec.channels,)))
            c_in = spec.channels
        return out

    @property
    def n_encoder_layers(self):
        return len(self.encoder_convs) + len(self.encoder_hidden) + 1


def paper_architecture(code_size, in_channels=3):
    """The 14 x 14 network: four convolutions, 256-wide dense layers, four transposed convolutions."""
    return Architecture(
        side=14,
        in_channels=in_channels,
        code_size=code_size,
        encoder_convs=(ConvSpec(8, 5, 1, 2), ConvSpec(16, 5, 2, 3), ConvSpec(32, 5, 2, 2), ConvSpec(64, 5, 2, 2)),
        encoder_hidden=(256, 256),
        decoder_hidden=(256, 256, 256),
        decoder_grid=(64, 2, 2),
        decoder_tconvs=(
            (ConvSpec(64, 5, 1, 1), 4),
            (ConvSpec(32, 5, 1, 0), 8),
            (ConvSpec(16, 5, 3, 6), 14),
            (ConvSpec(in_channels, 5, 1, 2), 14),
        ),
    )


def mirrored_architecture(side, code_size, channels=(4, 8, 8, 16), hidden=64, kernel=5, in_channels=3):
    """Small network for ``side < 14``: the same layer kinds and counts.

    The first convolution keeps the size (stride 1); the others use stride 2.
    The decoder mirrors the encoder with transposed convolutions that restore
    each intermediate size exactly.
    """
    pad = kernel // 2
    strides = [1] + [2] * (len(channels) - 1)
    convs = tuple(ConvSpec(c, kernel, s, pad) for c, s in zip(channels, strides))
    sizes = [side]
    for s in strides:
        sizes.append(kernels.conv_output_size(sizes[-1], kernel, s, pad))
    grid = (channels[-1], sizes[-1], sizes[-1])
    flat = grid[0] * grid[1] * grid[2]
    outs = list(channels[-2::-1]) + [in_channels]
    tconvs = tuple(
        (ConvSpec(c, kernel, s, pad), n) for c, s, n in zip(outs, strides[::-1], sizes[-2::-1])
    )
    return Architecture(
        side=side,
        in_channels=in_channels,
        code_size=code_size,
        encoder_convs=convs,
        encoder_hidden=(hidden, hidden),
        decoder_hidden=(hidden, hidden, flat),
        decoder_grid=grid,
        decoder_tconvs=tconvs,
    )


def init_params(arch, rng):
    """Xavier-uniform weights and zero biases, drawn in layer order."""
    params = []
    for _, wshape, bshape in arch.layer_shapes():
        params.append(xavier_uniform(wshape, rng))
        params.append(np.zeros(bshape))
    return params


# ---------------------------------------------------------------------------
# forward passes


def _forward_graph(arch, tparams, x, upto=None):
    """Autodiff forward. ``x`` is a Tensor (B, d, side, side).

    Returns ``(code, reconstruction)`` Tensors.
    """
    it = iter(zip(tparams[0::2], tparams[1::2]))
    h = x
    for spec in arch.encoder_convs:
        w, b = next(it)
        h = ad.elu(ad.conv2d(h, w, b, spec.stride, spec.padding))
    h = ad.reshape(h, (h.shape[0], -1))
    for _ in range(len(arch.encoder_hidden) + 1):
        w, b = next(it)
        h = ad.elu(ad.dense(h, w, b))
    code = h
    for _ in arch.decoder_hidden:
        w, b = next(it)
        h = ad.elu(ad.dense(h, w, b))
    h = ad.reshape(h, (h.shape[0], *arch.decoder_grid))
    last = len(arch.decoder_tconvs) - 1
    for i, (spec, out) in enumerate(arch.decoder_tconvs):
        w, b = next(it)
        h = ad.conv_transpose2d(h, w, b, spec.stride, spec.padding, (out, out))
        if i != last:
            h = ad.elu(h)
    return code, h


def encode_array(arch, params, x):
    """Encoder on raw arrays: (B, d, side, side) -> (B, n)."""
    k = 0
    h = x
    for spec in arch.encoder_convs:
        h = kernels.elu(kernels.conv2d(h, params[k], params[k + 1], spec.stride, spec.padding))
        k += 2
    h = h.reshape(h.shape[0], -1)
    for _ in range(len(arch.encoder_hidden) + 1):
        h = kernels.elu(kernels.dense(h, params[k], params[k + 1]))
        k += 2
    return h


def decode_array(arch, params, code):
    """Decoder on raw arrays: (B, n) -> (B, d, side, side)."""
    k = 2 * arch.n_encoder_layers
    h = code
    for _ in arch.decoder_hidden:
        h = kernels.elu(kernels.dense(h, params[k], params[k + 1]))
        k += 2
    h = h.reshape(h.shape[0], *arch.decoder_grid)
    last = len(arch.decoder_tconvs) - 1
    for i, (spec, out) in enumerate(arch.decoder_tconvs):
        h = kernels.conv_transpose2d(h, params[k], params[k + 1], spec.stride, spec.padding, (out, out))
        if i != last:
            h = kernels.elu(h)
        k += 2
    return h


def loss_and_grads(arch, params, x):
    """Reconstruction MSE on a batch (B, d, side, side) and its parameter gradients."""
    tparams = [ad.parameter(p) for p in params]
    _, rec = _forward_graph(arch, tparams, ad.Tensor(x))
    loss = ad.mse(rec, x)
    loss.backward()
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in tparams]
    return float(loss.data), grads


# ---------------------------------------------------------------------------
# dataset


@dataclass(frozen=True)
class CaeDataset:
    """Normalised training and validation items.

    Attributes
    ----------
    train, valid : ndarray, shape (count, side, side, d)
        Values of ``train`` lie in [0, 1].
    train_index, valid_index : ndarray of int
        Columns of the coefficient matrix that went to each split.
    lo, hi : float
        Global min and max of the raw training coefficients.
    """

    train: np.ndarray
    valid: np.ndarray
    train_index: np.ndarray
    valid_index: np.ndarray
    lo: float
    hi: float
    seed: int

    @property
    def side(self):
        return self.train.shape[1]

    def normalize(self, raw):
        return (raw - self.lo) / (self.hi - self.lo)

    def denormalize(self, values):
        return values * (self.hi - self.lo) + self.lo


def coefficients_to_items(coords):
    """(d, N, N_s) coefficient stack -> (N_s, side, side, d) items."""
    d, n_basis, n_s = coords.shape
    side = math.isqrt(n_basis)
    if side * side != n_basis:
        raise InvalidArgumentError(f"basis size {n_basis} is not a perfect square")
    return np.ascontiguousarray(coords.transpose(2, 1, 0).reshape(n_s, side, side, d))


def items_to_coefficients(items):
    """Inverse of :func:`coefficients_to_items` for a stack of items."""
    n_s, side, _, d = items.shape
    return np.ascontiguousarray(items.reshape(n_s, side * side, d).transpose(2, 1, 0))


def prepare_dataset(coords, train_fraction, seed):
    """Shuffle, split and min-max normalise intrinsic coordinates.

    Parameters
    ----------
    coords : ndarray, shape (d, N, N_s)
        Coefficient matrices per component.
    train_fraction : float
        In (0, 1); the first ``floor(train_fraction * N_s)`` shuffled columns train.
    seed : int
    """
    if not 0.0 < train_fraction < 1.0:
        raise InvalidArgumentError(f"train fraction must be in (0, 1), got {train_fraction}")
    items = coefficients_to_items(np.asarray(coords, dtype=np.float64))
    n_s = items.shape[0]
    n_train = int(math.floor(train_fraction * n_s))
    if n_train < 1 or n_train >= n_s:
        raise InvalidArgumentError(f"split of {n_s} items at {train_fraction} leaves an empty side")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    perm = rng.permutation(n_s)
    tr, va = perm[:n_train], perm[n_train:]
    lo, hi = float(items[tr].min()), float(items[tr].max())
    if not hi > lo:
        raise InvalidArgumentError("training coefficients are constant; cannot normalise")
    scale = hi - lo
    return CaeDataset((items[tr] - lo) / scale, (items[va] - lo) / scale, tr, va, lo, hi, int(seed))


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings; ``lr = lr0 / (1 + decay * epoch)``."""

    lr0: float = 1e-4
    decay: float = 0.05
    batch: int = 50
    max_epochs: int = 5000
    patience: int = 500
    seed: int = 0

    def learning_rate(self, epoch):
        return self.lr0 / (1.0 + self.decay * epoch)


class LogEntry(NamedTuple):
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class CaeModel:
    """Trained autoencoder with its normalisation constants."""

    arch: Architecture
    params: list
    lo: float
    hi: float
    log: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def code_size(self):
        return self.arch.code_size

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        if single:
            x = x[None]
        a = self.arch
        if x.shape[1:] != (a.side, a.side, a.in_channels):
            raise InvalidArgumentError(
                f"expected items of shape {(a.side, a.side, a.in_channels)}, got {x.shape[1:]}"
            )
        return np.ascontiguousarray(x.transpose(0, 3, 1, 2)), single

    def encode(self, x):
        """Normalised items ``(side, side, d)`` (or a batch) to codes."""
        xb, single = self._as_batch(x)
        code = encode_array(self.arch, self.params, xb)
        return code[0] if single else code

    def decode(self, code):
        """Codes to normalised items ``(side, side, d)``."""
        code = np.asarray(code, dtype=np.float64)
        single = code.ndim == 1
        if single:
            code = code[None]
        if code.shape[1] != self.arch.code_size:
            raise InvalidArgumentError(f"code length must be {self.arch.code_size}, got {code.shape[1]}")
        out = decode_array(self.arch, self.params, code).transpose(0, 2, 3, 1)
        return out[0] if single else out

    def denormalize(self, values):
        return values * (self.hi - self.lo) + self.lo

    def normalize(self, raw):
        return (raw - self.lo) / (self.hi - self.lo)

    def decode_coefficients(self, code):
        """Code to raw intrinsic coordinates, shape (d, N) (or (d, N, B) for a batch)."""
        items = self.denormalize(self.decode(code))
        if items.ndim == 3:
            return items_to_coefficients(items[None])[:, :, 0]
        return items_to_coefficients(items)

    def loss(self, items):
        xb, _ = self._as_batch(items)
        rec = decode_array(self.arch, self.params, encode_array(self.arch, self.params, xb))
        return float(np.mean((rec - xb) ** 2))


def _batched_loss(arch, params, x, chunk=512):
    total = 0.0
    for s in range(0, x.shape[0], chunk):
        xb = x[s : s + chunk]
        rec = decode_array(arch, params, encode_array(arch, params, xb))
        total += float(np.sum((rec - xb) ** 2))
    return total / x.size


def train(dataset, arch, config=TrainConfig(), callback=None):
    """Mini-batch Adam on the reconstruction MSE with early stopping.

    The weights with the lowest validation loss are returned.

    Raises
    ------
    TrainingDivergedError
        On a non-finite loss or gradient.
    """
    xtr = np.ascontiguousarray(dataset.train.transpose(0, 3, 1, 2))
    xva = np.ascontiguousarray(dataset.valid.transpose(0, 3, 1, 2))
    if xtr.shape[0] == 0:
        raise InvalidArgumentError("empty training set")
    if not 1 <= config.batch <= xtr.shape[0]:
        raise InvalidArgumentError(f"batch size {config.batch} exceeds the {xtr.shape[0]} training items")
    if xtr.shape[1:] != (arch.in_channels, arch.side, arch.side):
        raise InvalidArgumentError("dataset items do not match the architecture input")
    init_rng, shuffle_rng = random_streams(config.seed)
    params = init_params(arch, init_rng)
    state = AdamState.for_params(params)

    best = (np.inf, -1, copy.deepcopy(params))
    log = []
    n = xtr.shape[0]
    for epoch in range(config.max_epochs):
        lr = config.learning_rate(epoch)
        order = shuffle_rng.permutation(n)
        for s in range(0, n, config.batch):
            xb = xtr[order[s : s + config.batch]]
            loss, grads = loss_and_grads(arch, params, xb)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", epoch)
            try:
                adam_step(params, grads, state, lr)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(f"{exc} at epoch {epoch}", epoch) from None
        tr_loss = _batched_loss(arch, params, xtr)
        va_loss = _batched_loss(arch, params, xva) if xva.shape[0] else tr_loss
        if not (math.isfinite(tr_loss) and math.isfinite(va_loss)):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", epoch)
        log.append(LogEntry(epoch, tr_loss, va_loss, lr))
        if callback is not None:
            callback(log[-1])
        if va_loss < best[0]:
            best = (va_loss, epoch, copy.deepcopy(params))
        elif epoch - best[1] >= config.patience:
            break
    return CaeModel(arch, best[2], dataset.lo, dataset.hi, log, best[1])


def write_log_csv(model, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for e in model.log:
            w.writerow([e.epoch, f"{e.train_loss:.17g}", f"{e.val_loss:.17g}", f"{e.lr:.17g}"])


# ---------------------------------------------------------------------------
# persistence


def cae_payload(model):
    a = model.arch
    w = Writer()
    w.u32(a.side, a.in_channels, a.code_size)
    w.u32(len(a.encoder_convs))
    for spec in a.encoder_convs:
        w.u32(*spec)
    w.u32(len(a.encoder_hidden), *a.encoder_hidden)
    w.u32(len(a.decoder_hidden), *a.decoder_hidden)
    w.u32(*a.decoder_grid)
    w.u32(len(a.decoder_tconvs))
    for spec, out in a.decoder_tconvs:
        w.u32(*spec, out)
    w.f64([model.lo, model.hi])
    w.u32(model.best_epoch + 1)
    shapes = a.layer_shapes()
    w.u32(len(shapes))
    for i, (kind, _, _) in enumerate(shapes):
        w.u32(kind)
        w.array(model.params[2 * i])
        w.array(model.params[2 * i + 1])
    return w.getvalue()


def cae_from_payload(data, offset=0):
    r = Reader(data, offset, what="ROMCAE01 section")
    side, d, n = r.u32(), r.u32(), r.u32()
    convs = tuple(ConvSpec(*(r.u32() for _ in range(4))) for _ in range(r.u32()))
    enc_hidden = tuple(r.u32() for _ in range(r.u32()))
    dec_hidden = tuple(r.u32() for _ in range(r.u32()))
    grid = tuple(r.u32() for _ in range(3))
    tconvs = []
    for _ in range(r.u32()):
        vals = [r.u32() for _ in range(5)]
        tconvs.append((ConvSpec(*vals[:4]), vals[4]))
    lo, hi = r.f64(2)
    best_epoch = r.u32() - 1
    try:
        arch = Architecture(side, d, n, convs, enc_hidden, dec_hidden, grid, tuple(tconvs))
    except InvalidArgumentError as exc:
        raise CorruptModelError(f"ROMCAE01 architecture is inconsistent: {exc}") from None
    shapes = arch.layer_shapes()
    if r.u32() != len(shapes):
        raise CorruptModelError("ROMCAE01 layer count does not match its architecture")
    params = []
    for kind, wshape, bshape in shapes:
        if r.u32() != kind:
            raise CorruptModelError("ROMCAE01 layer kinds do not match the architecture")
        wt, bs = r.array(), r.array()
        if wt.shape != wshape or bs.shape != bshape:
            raise CorruptModelError(f"ROMCAE01 layer shapes {wt.shape}, {bs.shape} != {wshape}, {bshape}")
        params += [wt, bs]
    r.done()
    return CaeModel(arch, params, float(lo), float(hi), [], best_epoch)
