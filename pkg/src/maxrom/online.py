"""The reduced-order model bundle and its online evaluation.

Only the POD basis, the decoder and the mode models are needed online; this
module deliberately imports nothing from the solver or the snapshot store.
"""

import json
from dataclasses import dataclass

import numpy as np

from .cae import CaeModel, cae_from_payload, cae_payload
from .containers import read_container, write_container
from .csi import ModeModel, csi_from_payload, csi_payload
from .errors import CorruptModelError, SnapshotFormatError
from .pod import PodBasis, pod_from_payload, pod_payload

MODEL_FORMAT = 1


@dataclass
class RomModel:
    """POD basis, autoencoder, code mode model and the POD-CSI baseline."""

    pod: PodBasis
    cae: CaeModel
    csi: ModeModel
    baseline: ModeModel
    config_digest: str = ""

    def __post_init__(self):
        check_dimensions(self)

    @property
    def components(self):
        return self.pod.components

    @property
    def n_h(self):
        return self.pod.n_h


def check_dimensions(model):
    """Verify the chain n -> (d, N) -> (d, N_h)."""
    nc, _, n_basis = model.pod.bases.shape
    a = model.cae.arch
    if a.in_channels != nc or a.side * a.side != n_basis:
        raise CorruptModelError(
            f"autoencoder expects {a.in_channels} channels of {a.side}x{a.side}, "
            f"basis has {nc} components of size {n_basis}"
        )
    if model.csi.n != a.code_size:
        raise CorruptModelError(f"mode model has {model.csi.n} components, code size is {a.code_size}")
    if model.baseline.n != nc * n_basis:
        raise CorruptModelError(f"baseline has {model.baseline.n} components, expected {nc * n_basis}")
    if not np.array_equal(model.csi.times, model.baseline.times):
        raise CorruptModelError("mode models disagree on the time grid")


def online(model, t, mu):
    """Approximate fields ``(Hx, Hy, Ez)`` at ``(t, mu)``, shape (ncomp, N_h)."""
    code = model.csi.eval(t, mu).code
    coeffs = model.cae.decode_coefficients(code)
    return np.einsum("chn,cn->ch", model.pod.bases, coeffs)


def online_pod_csi(model, t, mu):
    """Baseline: interpolate the intrinsic coordinates directly, no autoencoder."""
    nc, _, n_basis = model.pod.bases.shape
    coeffs = model.baseline.eval(t, mu).code.reshape(nc, n_basis)
    return np.einsum("chn,cn->ch", model.pod.bases, coeffs)


# ---------------------------------------------------------------------------
# persistence


def model_sections(model):
    meta = {"format": MODEL_FORMAT, "config_digest": model.config_digest}
    return {
        "META": json.dumps(meta, sort_keys=True).encode(),
        "PODBASIS": pod_payload(model.pod),
        "ROMCAE01": cae_payload(model.cae),
        "ROMCSI01": csi_payload(model.csi),
        "PODCSI01": csi_payload(model.baseline),
    }


def save_model(model, path):
    write_container(path, model_sections(model))


def load_model(path):
    """Read a model file.

    Raises
    ------
    CorruptModelError
        If a section is missing or the dimension chain does not close.
    SnapshotFormatError
        If the container itself is malformed.
    """
    sections = read_container(path)
    missing = [t for t in ("META", "PODBASIS", "ROMCAE01", "ROMCSI01", "PODCSI01") if t not in sections]
    if missing:
        raise CorruptModelError(f"{path}: missing section(s) {', '.join(missing)}")
    data, off = sections["META"]
    try:
        meta = json.loads(bytes(data).decode())
    except ValueError:
        raise CorruptModelError(f"{path}: unreadable META section at byte {off}") from None
    if meta.get("format") != MODEL_FORMAT:
        raise CorruptModelError(f"{path}: unsupported model format {meta.get('format')}")
    try:
        return RomModel(
            pod_from_payload(*sections["PODBASIS"]),
            cae_from_payload(*sections["ROMCAE01"]),
            csi_from_payload(*sections["ROMCSI01"]),
            csi_from_payload(*sections["PODCSI01"], what="PODCSI01 section"),
            meta.get("config_digest", ""),
        )
    except SnapshotFormatError as exc:
        raise CorruptModelError(f"{path}: {exc}") from None
