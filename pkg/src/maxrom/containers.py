"""Little-endian binary helpers and the section-tagged model container.

A container file starts with the 8-byte magic ``ROMSNAP1``, a u32 version
(2 for containers, 1 is the plain snapshot layout) and a u32 section count,
followed by sections ``[8-byte ASCII tag][u64 payload length][payload]``.
"""

import io
import struct
from pathlib import Path

import numpy as np

from .errors import SnapshotFormatError

MAGIC = b"ROMSNAP1"
CONTAINER_VERSION = 2


class Writer:
    """Append little-endian scalars and float64 arrays to a byte buffer."""

    def __init__(self):
        self._buf = io.BytesIO()

    def u32(self, *values):
        for v in values:
            self._buf.write(struct.pack("<I", int(v)))

    def u64(self, value):
        self._buf.write(struct.pack("<Q", int(value)))

    def f64(self, values):
        """Raw float64 payload in C order (no length prefix)."""
        self._buf.write(np.ascontiguousarray(values, dtype="<f8").tobytes())

    def array(self, values):
        """Shape-prefixed float64 array: u32 ndim, u32 dims, payload."""
        a = np.asarray(values, dtype=np.float64)
        self.u32(a.ndim, *a.shape)
        self.f64(a)

    def text(self, s):
        data = s.encode("utf-8")
        self.u32(len(data))
        self._buf.write(data)

    def bytes(self, data):
        self._buf.write(data)

    def getvalue(self):
        return self._buf.getvalue()


class Reader:
    """Sequential reader matching :class:`Writer`, reporting offsets on failure."""

    def __init__(self, data, base_offset=0, what="file"):
        self.data = memoryview(data)
        self.pos = 0
        self.base = base_offset
        self.what = what

    @property
    def offset(self):
        return self.base + self.pos

    def take(self, n):
        if n < 0 or self.pos + n > len(self.data):
            raise SnapshotFormatError(
                f"{self.what} truncated: need {n} bytes, {len(self.data) - self.pos} left",
                self.offset,
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def array(self):
        ndim = self.u32()
        if ndim > 8:
            raise SnapshotFormatError(f"{self.what}: implausible array rank {ndim}", self.offset)
        shape = tuple(self.u32() for _ in range(ndim))
        return self.f64(int(np.prod(shape, dtype=np.int64))).reshape(shape)

    def text(self):
        n = self.u32()
        return bytes(self.take(n)).decode("utf-8")

    def done(self):
        if self.pos != len(self.data):
            raise SnapshotFormatError(
                f"{self.what}: {len(self.data) - self.pos} unexpected trailing bytes", self.offset
            )


def _tag(name):
    raw = name.encode("ascii")
    if len(raw) > 8:
        raise ValueError(f"section tag {name!r} longer than 8 bytes")
    return raw.ljust(8, b" ")


def write_container(path, sections):
    """Write ``sections`` (mapping tag -> bytes, order preserved) to ``path``."""
    w = Writer()
    w.bytes(MAGIC)
    w.u32(CONTAINER_VERSION, len(sections))
    for name, payload in sections.items():
        w.bytes(_tag(name))
        w.u64(len(payload))
        w.bytes(payload)
    Path(path).write_bytes(w.getvalue())


def read_container(path):
    """Read a container into an ordered ``{tag: (payload_bytes, offset)}`` dict."""
    data = Path(path).read_bytes()
    r = Reader(data, what=str(path))
    if bytes(r.take(8)) != MAGIC:
        raise SnapshotFormatError(f"{path}: bad magic", 0)
    version = r.u32()
    if version != CONTAINER_VERSION:
        raise SnapshotFormatError(f"{path}: expected container version 2, got {version}", 8)
    count = r.u32()
    sections = {}
    for _ in range(count):
        name = bytes(r.take(8)).decode("ascii", errors="replace").rstrip()
        length = r.u64()
        start = r.offset
        sections[name] = (bytes(r.take(length)), start)
    r.done()
    return sections
