"""Cubic spline interpolation and the time/parameter mode models.

A reduced matrix ``P_l`` (times x parameters) holds one code component over the
training grid. Its SVD ``P_l = sum_k sigma_k psi_k phi_k^T`` is truncated by an
energy tolerance; the discrete time modes ``psi_k`` are interpolated by
not-a-knot cubic splines and the parameter modes ``phi_k`` by tensor-product
splines on the parameter grid.
"""

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_banded

from .containers import Reader, Writer
from .errors import CorruptModelError, IncompleteDataError, InsufficientDataError, InvalidArgumentError
from .linalg import svd_thin


class ExtrapolationWarning(UserWarning):
    """A query lies outside the fitted knot span."""


# ---------------------------------------------------------------------------
# 1-D splines


@dataclass(frozen=True)
class Spline1D:
    """Piecewise cubic ``a + b dx + c dx^2 + d dx^3`` with ``dx = x - knots[i]``.

    ``coeffs`` has shape ``(4, n_pieces, *value_shape)``; values may be
    vector-valued, in which case every component shares the knots.
    """

    knots: np.ndarray
    coeffs: np.ndarray

    @property
    def span(self):
        return float(self.knots[0]), float(self.knots[-1])

    def _locate(self, x):
        x = np.asarray(x, dtype=np.float64)
        n_pieces = self.coeffs.shape[1]
        idx = np.searchsorted(self.knots, x, side="right") - 1
        idx = np.clip(idx, 0, n_pieces - 1)
        return x, idx, x - self.knots[idx]

    def __call__(self, x, nu=0):
        """Value (or ``nu``-th derivative) at ``x``; outside the span the end pieces extend."""
        x, idx, dx = self._locate(x)
        a, b, c, d = (self.coeffs[k, idx] for k in range(4))
        dx = np.reshape(dx, np.shape(dx) + (1,) * (self.coeffs.ndim - 2))
        if nu == 0:
            return a + dx * (b + dx * (c + dx * d))
        if nu == 1:
            return b + dx * (2.0 * c + 3.0 * dx * d)
        if nu == 2:
            return 2.0 * c + 6.0 * dx * d
        if nu == 3:
            return 6.0 * d + 0.0 * dx
        raise InvalidArgumentError(f"derivative order {nu} not supported")

    def outside(self, x):
        lo, hi = self.span
        x = np.asarray(x)
        return bool(np.any((x < lo) | (x > hi)))


def _check_knots(knots):
    knots = np.asarray(knots, dtype=np.float64).reshape(-1)
    if knots.size == 0:
        raise InsufficientDataError("no knots given")
    if not np.all(np.isfinite(knots)):
        raise InvalidArgumentError("knots must be finite")
    if np.any(np.diff(knots) <= 0):
        raise InvalidArgumentError("knots must be strictly increasing (no duplicates)")
    return knots


def fit_spline_1d(knots, values):
    """Not-a-knot cubic spline through ``(knots[i], values[i])``.

    The second derivatives ``M_i`` solve a pentadiagonal system: interior rows
    impose C2 continuity, the first and last rows impose continuity of the third
    derivative at ``knots[1]`` and ``knots[-2]``.

    Raises
    ------
    InsufficientDataError
        For fewer than four knots.
    """
    x = _check_knots(knots)
    y = np.asarray(values, dtype=np.float64)
    if y.shape[0] != x.size:
        raise InvalidArgumentError(f"{x.size} knots but {y.shape[0]} values")
    if x.size < 4:
        raise InsufficientDataError(f"not-a-knot spline needs >= 4 knots, got {x.size}")
    n = x.size - 1
    h = np.diff(x)
    tail = y.shape[1:]
    slope = np.diff(y, axis=0) / h.reshape(-1, *([1] * len(tail)))

    # banded storage: ab[u + i - j, j] = A[i, j] with u = l = 2
    ab = np.zeros((5, n + 1))
    rhs = np.zeros((n + 1, *tail))
    # row 0: h1 M0 - (h0 + h1) M1 + h0 M2 = 0
    ab[2, 0], ab[1, 1], ab[0, 2] = h[1], -(h[0] + h[1]), h[0]
    for i in range(1, n):
        ab[3, i - 1] = h[i - 1]
        ab[2, i] = 2.0 * (h[i - 1] + h[i])
        ab[1, i + 1] = h[i]
        rhs[i] = 6.0 * (slope[i] - slope[i - 1])
    # row n: h_{n-1} M_{n-2} - (h_{n-2} + h_{n-1}) M_{n-1} + h_{n-2} M_n = 0
    ab[4, n - 2], ab[3, n - 1], ab[2, n] = h[n - 1], -(h[n - 2] + h[n - 1]), h[n - 2]
    M = solve_banded((2, 2), ab, rhs.reshape(n + 1, -1)).reshape(n + 1, *tail)

    hb = h.reshape(-1, *([1] * len(tail)))
    a = y[:-1]
    b = slope - hb * (2.0 * M[:-1] + M[1:]) / 6.0
    c = M[:-1] / 2.0
    d = (M[1:] - M[:-1]) / (6.0 * hb)
    return Spline1D(x, np.stack([a, b, c, d]))


def fit_interpolant_1d(knots, values):
    """Not-a-knot spline, or the interpolating polynomial for fewer than four knots.

    One knot gives a constant, two a line, three a parabola; each is stored as
    a single cubic piece so evaluation is uniform.
    """
    x = _check_knots(knots)
    y = np.asarray(values, dtype=np.float64)
    if y.shape[0] != x.size:
        raise InvalidArgumentError(f"{x.size} knots but {y.shape[0]} values")
    if x.size >= 4:
        return fit_spline_1d(x, y)
    coeffs = np.zeros((4, 1, *y.shape[1:]))
    coeffs[0, 0] = y[0]
    if x.size >= 2:
        d1 = (y[1] - y[0]) / (x[1] - x[0])
        coeffs[1, 0] = d1
    if x.size == 3:
        d2 = (y[2] - y[1]) / (x[2] - x[1])
        c2 = (d2 - d1) / (x[2] - x[0])
        # Newton form y0 + d1 (x - x0) + c2 (x - x0)(x - x1), expanded around x0
        coeffs[1, 0] = d1 - c2 * (x[1] - x[0])
        coeffs[2, 0] = c2
    knots_out = x if x.size > 1 else np.array([x[0], x[0]])
    return Spline1D(knots_out[[0, -1]], coeffs)


# ---------------------------------------------------------------------------
# tensor-product interpolation


class CardinalBasis:
    """Spline weights ``w(x)`` with ``S(x) = w(x) . y`` for data ``y`` on fixed knots."""

    def __init__(self, knots):
        self.knots = _check_knots(knots)
        self.spline = fit_interpolant_1d(self.knots, np.eye(self.knots.size))

    def __call__(self, x):
        return self.spline(x)

    def outside(self, x):
        return bool(np.any((np.asarray(x) < self.knots[0]) | (np.asarray(x) > self.knots[-1])))


class TensorInterpolant:
    """Tensor-product spline interpolant on a rectilinear grid.

    ``values`` has shape ``(n_1, ..., n_D, *value_shape)``. Along each dimension
    the interpolant is the not-a-knot cubic spline through all knots of that
    dimension (or the interpolating polynomial when it has fewer than four).
    """

    def __init__(self, grids, values):
        self.grids = [_check_knots(g) for g in grids]
        self.values = np.asarray(values, dtype=np.float64)
        shape = tuple(g.size for g in self.grids)
        if self.values.shape[: len(shape)] != shape:
            raise InvalidArgumentError(f"values shape {self.values.shape} does not start with grid shape {shape}")
        self.bases = [CardinalBasis(g) for g in self.grids]

    @property
    def ndim(self):
        return len(self.grids)

    def weights(self, point):
        point = np.asarray(point, dtype=np.float64).reshape(-1)
        if point.size != self.ndim:
            raise InvalidArgumentError(f"expected a {self.ndim}-D point, got {point.size} coordinates")
        return [b(p) for b, p in zip(self.bases, point)]

    def __call__(self, point):
        out = self.values
        for w in self.weights(point):
            out = np.tensordot(w, out, axes=(0, 0))
        return out

    def outside(self, point):
        point = np.asarray(point, dtype=np.float64).reshape(-1)
        return any(b.outside(p) for b, p in zip(self.bases, point))


def fit_tensor_product(grids, values):
    return TensorInterpolant(grids, values)


# ---------------------------------------------------------------------------
# reduced matrices and mode models


def build_reduced_matrices(codes, n_t, n_p):
    """Reshape codes into ``n`` matrices ``P_l`` of shape (N_t, N_p).

    Parameters
    ----------
    codes : ndarray, shape (N_t * N_p, n) or mapping (i, j) -> code
        An array is read parameter-major (all times of parameter 0 first).

    Raises
    ------
    IncompleteDataError
        If a grid entry is missing or not finite.
    """
    if isinstance(codes, dict):
        first = next(iter(codes.values()))
        n = np.asarray(first).size
        P = np.full((n, n_t, n_p), np.nan)
        for (i, j), code in codes.items():
            P[:, i, j] = code
    else:
        codes = np.asarray(codes, dtype=np.float64)
        if codes.ndim != 2 or codes.shape[0] != n_t * n_p:
            raise IncompleteDataError(f"expected {n_t * n_p} codes, got array of shape {codes.shape}")
        P = codes.reshape(n_p, n_t, -1).transpose(2, 1, 0).copy()
    bad = np.argwhere(~np.isfinite(P))
    if bad.size:
        _, i, j = bad[0]
        raise IncompleteDataError(f"no code for time index {i}, parameter index {j}")
    return P


def truncation_rank(singular_values, delta):
    """Smallest ``q`` whose leading energy fraction reaches ``1 - delta``."""
    s2 = np.asarray(singular_values, dtype=np.float64) ** 2
    total = s2.sum()
    if total == 0.0:
        return 0
    frac = np.cumsum(s2) / total
    return int(np.searchsorted(frac, 1.0 - delta, side="left") + 1)


class ModeSet(NamedTuple):
    """Truncated modes of one reduced matrix."""

    sigma: np.ndarray  # (q,)
    time_spline: Spline1D  # values (N_t, q)
    param_interp: TensorInterpolant  # values (*grid, q)
    time_modes: np.ndarray  # (N_t, q)
    param_modes: np.ndarray  # (N_p, q)

    @property
    def rank(self):
        return self.sigma.size


class CodeEval(NamedTuple):
    code: np.ndarray
    extrapolated: bool


@dataclass
class ModeModel:
    """Per-component mode sets for the reduced matrices over a shared grid."""

    times: np.ndarray
    param_grids: list
    delta: float
    modes: list

    @property
    def n(self):
        return len(self.modes)

    def ranks(self):
        return [m.rank for m in self.modes]

    def eval(self, t, mu):
        """Code ``omega_l = sum_k sigma_k psi_k(t) phi_k(mu)`` for every component ``l``."""
        mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
        out = np.zeros(self.n)
        extrapolated = bool(t < self.times[0] or t > self.times[-1])
        for l, m in enumerate(self.modes):
            if m.rank == 0:
                continue
            psi = m.time_spline(t)
            phi = m.param_interp(mu)
            out[l] = np.sum(m.sigma * psi * phi)
        if any(b.outside(p) for b, p in zip(_bases(self), mu)):
            extrapolated = True
        return CodeEval(out, extrapolated)


def _bases(model):
    for m in model.modes:
        if m.rank:
            return m.param_interp.bases
    return [CardinalBasis(g) for g in model.param_grids]


def decompose_modes(P, times, param_grids, delta):
    """Truncated SVD of each reduced matrix and spline fits of its modes.

    Parameters
    ----------
    P : ndarray, shape (n, N_t, N_p)
    times : ndarray, shape (N_t,)
    param_grids : list of 1-D arrays
        Per-dimension knots; ``N_p`` must equal the product of their sizes, with
        columns of ``P`` in lexicographic grid order.
    delta : float
        Energy tolerance in (0, 1).
    """
    if not 0.0 < delta < 1.0:
        raise InvalidArgumentError(f"delta must lie in (0, 1), got {delta}")
    P = np.asarray(P, dtype=np.float64)
    times = _check_knots(times)
    grids = [_check_knots(g) for g in param_grids]
    shape = tuple(g.size for g in grids)
    if P.ndim != 3 or P.shape[1] != times.size or P.shape[2] != int(np.prod(shape)):
        raise InvalidArgumentError(f"P of shape {P.shape} does not match {times.size} times and grid {shape}")
    modes = []
    for Pl in P:
        res = svd_thin(Pl)
        q = truncation_rank(res.singular_values, delta)
        # contiguous copies so a model rebuilt from stored modes fits bit-identically
        psi = np.ascontiguousarray(res.left_vectors[:, :q])
        phi = np.ascontiguousarray(res.right_vectors[:, :q])
        modes.append(_mode_set(res.singular_values[:q], psi, phi, times, grids, shape))
    return ModeModel(times, grids, float(delta), modes)


def _mode_set(sigma, psi, phi, times, grids, shape):
    q = sigma.size
    return ModeSet(
        sigma.copy(),
        fit_interpolant_1d(times, psi),
        TensorInterpolant(grids, phi.reshape(*shape, q)),
        psi.copy(),
        phi.copy(),
    )


def eval_code(model, t, mu):
    """Predicted code at ``(t, mu)`` with an extrapolation flag; warns when extrapolating."""
    res = model.eval(t, mu)
    if res.extrapolated:
        warnings.warn(f"query (t={t}, mu={mu}) lies outside the training ranges", ExtrapolationWarning, stacklevel=2)
    return res


# ---------------------------------------------------------------------------
# persistence


def csi_payload(model):
    w = Writer()
    w.f64([model.delta])
    w.array(model.times)
    w.u32(len(model.param_grids))
    for g in model.param_grids:
        w.array(g)
    w.u32(model.n)
    for m in model.modes:
        w.u32(m.rank)
        w.array(m.sigma)
        w.array(m.time_modes)
        w.array(m.param_modes)
        w.array(m.time_spline.knots)
        w.array(m.time_spline.coeffs)
    return w.getvalue()


def csi_from_payload(data, offset=0, what="ROMCSI01 section"):
    r = Reader(data, offset, what=what)
    (delta,) = r.f64(1)
    times = r.array()
    grids = [r.array() for _ in range(r.u32())]
    shape = tuple(g.size for g in grids)
    modes = []
    for _ in range(r.u32()):
        q = r.u32()
        sigma, psi, phi = r.array(), r.array(), r.array()
        knots, coeffs = r.array(), r.array()
        if sigma.shape != (q,) or psi.shape != (times.size, q) or phi.shape != (int(np.prod(shape)), q):
            raise CorruptModelError(f"{what}: mode arrays do not match the declared rank {q}")
        m = _mode_set(sigma, psi, phi, times, grids, shape)
        if not (np.array_equal(m.time_spline.knots, knots) and np.array_equal(m.time_spline.coeffs, coeffs)):
            raise CorruptModelError(f"{what}: stored spline coefficients disagree with the stored modes")
        modes.append(m)
    r.done()
    return ModeModel(times, grids, float(delta), modes)
