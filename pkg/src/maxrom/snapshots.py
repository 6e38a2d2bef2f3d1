"""Parameter/time sampling and the snapshot store.

Binary layout (all little-endian)::

    "ROMSNAP1" | u32 version=1 | u32 ncomp | u32 N_h | u32 N_t | u32 N_p | u32 dim
    | f64 times[N_t] | f64 params[dim x N_p] (column j is mu_j)
    | for each component, for each parameter: f64 block N_h x N_t, column-major
"""

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .containers import MAGIC, Reader, Writer
from .errors import InvalidArgumentError, SnapshotFormatError

COMPONENTS = ("Hx", "Hy", "Ez")
SNAPSHOT_VERSION = 1
_HEADER = 8 + 6 * 4


def sample_parameters(spec):
    """Tensor-product grid of equidistant points.

    Parameters
    ----------
    spec : sequence of (lo, hi, count)
        One triple per parameter dimension.

    Returns
    -------
    ndarray, shape (N_p, dim)
        Lexicographic order: the last dimension varies fastest.
    """
    axes = parameter_axes(spec)
    return np.array(list(itertools.product(*axes)), dtype=np.float64).reshape(-1, len(axes))


def parameter_axes(spec):
    axes = []
    for d, (lo, hi, count) in enumerate(spec):
        count = int(count)
        if count < 1:
            raise InvalidArgumentError(f"dimension {d}: count must be >= 1, got {count}")
        if not lo <= hi:
            raise InvalidArgumentError(f"dimension {d}: lo {lo} exceeds hi {hi}")
        if count == 1 and lo != hi:
            raise InvalidArgumentError(f"dimension {d}: a single point needs lo == hi")
        axes.append(np.linspace(lo, hi, count))
    if not axes:
        raise InvalidArgumentError("at least one parameter dimension is required")
    return axes


def window_indices(n_window, n_t):
    """Uniform subsample of ``n_t`` indices out of ``n_window`` ending at the last one.

    Index ``i`` maps to ``n_window - 1 - floor((n_t - 1 - i) * n_window / n_t)``.
    """
    if not 1 <= n_t <= n_window:
        raise InvalidArgumentError(f"cannot pick {n_t} samples from a window of {n_window}")
    i = np.arange(n_t)
    return n_window - 1 - ((n_t - 1 - i) * n_window) // n_t


@dataclass(frozen=True)
class SamplingPlan:
    """Training times and parameters; ``params`` has shape (N_p, dim)."""

    times: np.ndarray
    params: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        params = np.asarray(self.params, dtype=np.float64)
        if params.ndim == 1:
            params = params[:, None]
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise InvalidArgumentError("time points must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "params", params)

    @property
    def n_t(self):
        return self.times.size

    @property
    def n_p(self):
        return self.params.shape[0]

    @property
    def n_s(self):
        return self.n_t * self.n_p


@dataclass(frozen=True)
class SnapshotSet:
    """Trajectory matrices ``data[c, j]`` (N_h x N_t) per component and parameter."""

    data: np.ndarray
    plan: SamplingPlan
    components: tuple = COMPONENTS

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4:
            raise InvalidArgumentError(f"snapshot data must be 4-D, got shape {data.shape}")
        nc, n_p, _, n_t = data.shape
        if (n_p, n_t) != (self.plan.n_p, self.plan.n_t):
            raise InvalidArgumentError(
                f"data has N_p={n_p}, N_t={n_t} but the plan has {self.plan.n_p}, {self.plan.n_t}"
            )
        if len(self.components) != nc:
            object.__setattr__(self, "components", tuple(f"c{i}" for i in range(nc)))
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n_h(self):
        return self.data.shape[2]

    def trajectory(self, component, j):
        return self.data[self._index(component), j]

    def snapshot_matrix(self, component):
        """All trajectories side by side: N_h x (N_t N_p), parameter-major."""
        c = self._index(component)
        return np.concatenate(list(self.data[c]), axis=1)

    def _index(self, component):
        if isinstance(component, str):
            return self.components.index(component)
        return int(component)


def collect_snapshots(trajectories, params, window, n_t):
    """Subsample each run uniformly inside ``window = (t_lo, t_hi]``.

    Parameters
    ----------
    trajectories : sequence of Trajectory
        One per parameter, all with identical time stamps.
    params : array_like, shape (N_p, dim)
    window : (float, float)
    n_t : int

    Returns
    -------
    SnapshotSet
    """
    if not trajectories:
        raise InvalidArgumentError("no trajectories given")
    times = trajectories[0].times
    t_lo, t_hi = window
    tol = 1e-9 * max(1.0, abs(t_hi))
    if times.size == 0 or t_lo < times[0] - tol or t_hi > times[-1] + tol:
        span = (times[0], times[-1]) if times.size else ()
        raise InvalidArgumentError(f"window {window} lies outside the recorded times {span}")
    sel = np.flatnonzero((times > t_lo + tol) & (times <= t_hi + tol))
    picks = sel[window_indices(sel.size, n_t)]
    data = []
    for tr in trajectories:
        if tr.times.shape != times.shape or np.any(tr.times != times):
            raise InvalidArgumentError("trajectories have different time stamps")
        data.append([tr.hx[picks].T, tr.hy[picks].T, tr.ez[picks].T])
    data = np.transpose(np.array(data), (1, 0, 2, 3))
    return SnapshotSet(data, SamplingPlan(times[picks], params))


def snapshot_bytes(snapshots):
    nc, n_p, n_h, n_t = snapshots.data.shape
    dim = snapshots.plan.params.shape[1]
    w = Writer()
    w.bytes(MAGIC)
    w.u32(SNAPSHOT_VERSION, nc, n_h, n_t, n_p, dim)
    w.f64(snapshots.plan.times)
    w.f64(snapshots.plan.params)  # (N_p, dim) C-order == dim x N_p column-major
    # each (N_h, N_t) block column-major == the C-order bytes of its transpose
    w.f64(np.swapaxes(snapshots.data, 2, 3))
    return w.getvalue()


def write_snapshots(snapshots, path):
    Path(path).write_bytes(snapshot_bytes(snapshots))


def parse_snapshots(data, what="snapshot file"):
    r = Reader(data, what=what)
    if len(data) < 8 or bytes(data[:8]) != MAGIC:
        raise SnapshotFormatError(f"{what}: bad magic", 0)
    r.take(8)
    version = r.u32()
    if version != SNAPSHOT_VERSION:
        raise SnapshotFormatError(f"{what}: unsupported version {version}", 8)
    nc, n_h, n_t, n_p, dim = (r.u32() for _ in range(5))
    for name, value, off in (("component count", nc, 12), ("N_h", n_h, 16), ("N_t", n_t, 20),
                             ("N_p", n_p, 24), ("parameter dimension", dim, 28)):
        if value == 0:
            raise SnapshotFormatError(f"{what}: {name} is zero", off)
    expected = _HEADER + 8 * (n_t + dim * n_p + nc * n_p * n_h * n_t)
    if len(data) != expected:
        raise SnapshotFormatError(
            f"{what}: header declares {expected} bytes but the file has {len(data)}",
            min(len(data), expected),
        )
    times = r.f64(n_t)
    params = r.f64(dim * n_p).reshape(n_p, dim)
    blocks = r.f64(nc * n_p * n_h * n_t).reshape(nc, n_p, n_t, n_h)
    r.done()
    try:
        plan = SamplingPlan(times, params)
    except InvalidArgumentError as exc:
        raise SnapshotFormatError(f"{what}: {exc}", _HEADER) from None
    names = COMPONENTS if nc == len(COMPONENTS) else tuple(f"c{i}" for i in range(nc))
    return SnapshotSet(np.ascontiguousarray(np.swapaxes(blocks, 2, 3)), plan, names)


def read_snapshots(path):
    return parse_snapshots(Path(path).read_bytes(), what=str(path))
