"""Nodal discontinuous Galerkin time-domain solver for 2-D TM Maxwell.

Normalised units (``c = 1``)::

    eps dEz/dt = dHy/dx - dHx/dy
    nu  dHx/dt = -dEz/dy
    nu  dHy/dt =  dEz/dx

Each triangle carries an equispaced nodal Lagrange basis of degree 1 or 2.
Interior faces use centred fluxes; the outer boundary uses a first-order
Silver-Muller condition written in characteristic form, with the incident
plane wave supplying the incoming characteristic. The semi-discrete system is

    M_eps dE/dt = C H - D_E E + s_E(t)
    M_nu  dH/dt = -C^T E - D_H H + s_H(t)

where ``C`` is assembled so that the centred-flux coupling is exactly
skew-adjoint, and ``D_E``, ``D_H`` are the (positive semi-definite) absorbing
boundary terms. Time integration is leapfrog with the boundary damping
treated by the trapezoidal rule, which keeps the scheme explicit (``D`` is
element-local) and exactly reversible.
"""

import time
from dataclasses import dataclass, field
from math import factorial
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import BlowUpError, InvalidArgumentError, MeshQualityError
from .mesh import MIN_AREA

CFL_SAFETY = 0.5
_FACES = ((0, 1), (1, 2), (2, 0))


# ---------------------------------------------------------------------------
# incident wave and materials


def incident_field(x, y, t, omega):
    """Plane wave travelling in +x: ``(Hx, Hy, Ez) = (0, -cos(wt - kx), cos(wt - kx))``.

    ``k = omega`` since the wave speed is normalised to one. Arguments
    broadcast against each other.
    """
    x, y, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(t, float))
    phase = np.cos(omega * t - omega * x)
    return np.zeros_like(phase), -phase, phase


@dataclass(frozen=True)
class MaterialMap:
    """Relative permittivity and permeability per material tag.

    Tags missing from ``table`` fall back to vacuum ``(1, 1)``.
    """

    table: dict = field(default_factory=dict)

    def __post_init__(self):
        for tag, (eps, nu) in self.table.items():
            if not eps >= 1.0:
                raise InvalidArgumentError(f"tag {tag}: eps_r must be >= 1, got {eps}")
            if not nu > 0.0:
                raise InvalidArgumentError(f"tag {tag}: nu_r must be > 0, got {nu}")

    def coefficients(self, tags):
        eps = np.ones(len(tags))
        nu = np.ones(len(tags))
        for tag, (e, n) in self.table.items():
            sel = tags == tag
            eps[sel] = e
            nu[sel] = n
        return eps, nu


# ---------------------------------------------------------------------------
# reference element


def _monomials(order):
    return [(a, b) for b in range(order + 1) for a in range(order + 1 - b)]


def _tri_integral(a, b):
    """Exact integral of r^a s^b over the reference triangle (0,0),(1,0),(0,1)."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


class ReferenceElement:
    """Equispaced Lagrange element of a given order on the unit triangle."""

    def __init__(self, order):
        if order not in (1, 2):
            raise InvalidArgumentError(f"only orders 1 and 2 are supported, got {order}")
        self.order = N = order
        pts = [(i / N, j / N) for j in range(N + 1) for i in range(N + 1 - j)]
        self.rs = np.array(pts)
        self.n_nodes = len(pts)
        mono = _monomials(N)
        V = np.array([[r**a * s**b for a, b in mono] for r, s in pts])
        coef = np.linalg.inv(V)  # phi_i = sum_m coef[m, i] r^a_m s^b_m

        # integrals of monomial products and of monomial x derivative
        G = np.array([[_tri_integral(a1 + a2, b1 + b2) for a2, b2 in mono] for a1, b1 in mono])
        Gr = np.array(
            [
                [a2 * _tri_integral(a1 + a2 - 1, b1 + b2) if a2 else 0.0 for a2, b2 in mono]
                for a1, b1 in mono
            ]
        )
        Gs = np.array(
            [
                [b2 * _tri_integral(a1 + a2, b1 + b2 - 1) if b2 else 0.0 for a2, b2 in mono]
                for a1, b1 in mono
            ]
        )
        self.mass = coef.T @ G @ coef
        # S_r[i, j] = int phi_i d(phi_j)/dr
        self.Sr = coef.T @ Gr @ coef
        self.Ss = coef.T @ Gs @ coef

        # face node lists, ordered from the face's first vertex to its second
        idx = {p: k for k, p in enumerate((round(r * N), round(s * N)) for r, s in pts)}
        self.face_nodes = np.array(
            [
                [idx[(i, 0)] for i in range(N + 1)],
                [idx[(N - i, i)] for i in range(N + 1)],
                [idx[(0, N - i)] for i in range(N + 1)],
            ]
        )
        # 1-D mass matrix of the equispaced Lagrange basis on a unit-length face
        s1 = np.linspace(0.0, 1.0, N + 1)
        V1 = np.vander(s1, N + 1, increasing=True)
        c1 = np.linalg.inv(V1)
        H1 = np.array([[1.0 / (p + q + 1) for q in range(N + 1)] for p in range(N + 1)])
        self.face_mass = c1.T @ H1 @ c1


# ---------------------------------------------------------------------------
# operators


@dataclass
class DgOperators:
    """Global sparse DG operators for one mesh, material map and order.

    Attributes
    ----------
    order : int
    n_per_elem : int
    coords : ndarray, shape (N_h, 2)
        Physical coordinates of every nodal degree of freedom.
    mass_e, mass_h : sparse
        ``M_eps`` (N_h x N_h) and ``M_nu`` (2N_h x 2N_h, Hx block then Hy).
    coupling : sparse
        ``C`` (N_h x 2N_h); the H equation uses ``-C^T``.
    coupling_interior : sparse
        Interior-face part of ``C`` only.
    damp_e, damp_h : sparse
        Absorbing boundary terms.
    src_e, src_h : sparse
        Map boundary data ``g`` at the boundary face nodes to load vectors.
    bnd_xy, bnd_tau, bnd_z : ndarray
        Boundary face node coordinates, unit tangents ``(-n_y, n_x)`` and
        wave impedances.
    dt_max : float
        Time-step bound ``0.5 * min inradius / order^2``.
    """

    order: int
    n_per_elem: int
    coords: np.ndarray
    mass_e: sp.csr_matrix
    mass_h: sp.csr_matrix
    coupling: sp.csr_matrix
    coupling_interior: sp.csr_matrix
    damp_e: sp.csr_matrix
    damp_h: sp.csr_matrix
    src_e: sp.csr_matrix
    src_h: sp.csr_matrix
    bnd_xy: np.ndarray
    bnd_tau: np.ndarray
    bnd_z: np.ndarray
    dt_max: float
    eps: np.ndarray
    nu: np.ndarray
    _steppers: dict = field(default_factory=dict, repr=False)

    @property
    def n_dof(self):
        return self.coords.shape[0]

    def boundary_data(self, t, omega, amplitude=1.0):
        """Incoming characteristic ``g = Ez_inc + Z tau . H_inc`` at boundary nodes."""
        if amplitude == 0.0 or self.bnd_xy.shape[0] == 0:
            return np.zeros(self.bnd_xy.shape[0])
        hx, hy, ez = incident_field(self.bnd_xy[:, 0], self.bnd_xy[:, 1], t, omega)
        g = ez + self.bnd_z * (self.bnd_tau[:, 0] * hx + self.bnd_tau[:, 1] * hy)
        return amplitude * g

    def energy(self, state):
        """Discrete electromagnetic energy ``E^T M_eps E + H^T M_nu H``."""
        h = np.concatenate([state.hx, state.hy])
        return float(state.ez @ (self.mass_e @ state.ez) + h @ (self.mass_h @ h))

    def stepper(self, dt):
        key = float(dt)
        if key not in self._steppers:
            self._steppers[key] = _Stepper(self, key)
        return self._steppers[key]


def _block_diag(blocks):
    """Sparse block-diagonal matrix from an array of equal-size dense blocks."""
    K, n, _ = blocks.shape
    rows = (np.arange(K)[:, None, None] * n + np.arange(n)[None, :, None]).repeat(n, axis=2)
    cols = (np.arange(K)[:, None, None] * n + np.arange(n)[None, None, :]).repeat(n, axis=1)
    return sp.csr_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(K * n, K * n))


def assemble_operators(mesh, materials, order):
    """Build the global DG operators.

    Parameters
    ----------
    mesh : Mesh
    materials : MaterialMap
    order : {1, 2}

    Returns
    -------
    DgOperators
    """
    ref = ReferenceElement(order)
    Np = ref.n_nodes
    K = mesh.n_triangles
    nodes, tri = mesh.nodes, mesh.triangles
    eps, nu = materials.coefficients(mesh.tags)

    v0, v1, v2 = nodes[tri[:, 0]], nodes[tri[:, 1]], nodes[tri[:, 2]]
    J = np.stack([v1 - v0, v2 - v0], axis=2)  # J[k] = [[x1-x0, x2-x0], [y1-y0, y2-y0]]
    det = np.linalg.det(J)
    if np.any(det < 2 * MIN_AREA):
        bad = int(np.argmax(det < 2 * MIN_AREA))
        raise MeshQualityError(f"triangle {bad} is degenerate or inverted (area {det[bad] / 2:.3e})")
    Jinv = np.linalg.inv(J)
    rx, ry = Jinv[:, 0, 0], Jinv[:, 0, 1]
    sx, sy = Jinv[:, 1, 0], Jinv[:, 1, 1]

    coords = (v0[:, None, :] + np.einsum("kij,nj->kni", J, ref.rs)).reshape(-1, 2)

    Mk = det[:, None, None] * ref.mass
    # Sx[k][i, j] = int phi_i d(phi_j)/dx over element k
    Sx = det[:, None, None] * (rx[:, None, None] * ref.Sr + sx[:, None, None] * ref.Ss)
    Sy = det[:, None, None] * (ry[:, None, None] * ref.Sr + sy[:, None, None] * ref.Ss)

    mass_e = _block_diag(eps[:, None, None] * Mk)
    mass_h = sp.block_diag([_block_diag(nu[:, None, None] * Mk)] * 2, format="csr")

    # volume coupling: rows E, cols [Hx | Hy];  -int grad(phi) . (Hy, -Hx)
    vol_x = _block_diag(np.transpose(Sy, (0, 2, 1)))
    vol_y = _block_diag(-np.transpose(Sx, (0, 2, 1)))

    # faces
    faces = np.array(_FACES)
    fa, fb = tri[:, faces[:, 0]], tri[:, faces[:, 1]]  # (K, 3) global vertex ids
    pa, pb = nodes[fa], nodes[fb]
    d = pb - pa
    length = np.linalg.norm(d, axis=2)
    normal = np.stack([d[..., 1], -d[..., 0]], axis=2) / length[..., None]
    tau = np.stack([-normal[..., 1], normal[..., 0]], axis=2)

    key = np.sort(np.stack([fa, fb], axis=2), axis=2).reshape(-1, 2)
    _, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    order_idx = np.argsort(inv, kind="stable")
    partner = np.full(3 * K, -1)
    sorted_inv = inv[order_idx]
    same = sorted_inv[1:] == sorted_inv[:-1]
    first, second = order_idx[:-1][same], order_idx[1:][same]
    partner[first] = second
    partner[second] = first

    Nf = order + 1
    fm = ref.face_mass
    rows_c, cols_c, vals_c = [], [], []
    rows_i, cols_i, vals_i = [], [], []
    rows_de, cols_de, vals_de = [], [], []
    rows_dh, cols_dh, vals_dh = [], [], []
    bnd_rows = []
    bnd_xy, bnd_tau, bnd_z = [], [], []

    N_h = K * Np
    z_elem = np.sqrt(nu / eps)
    for gf in range(3 * K):
        k, f = divmod(gf, 3)
        own = k * Np + ref.face_nodes[f]
        L = length[k, f]
        tx, ty = tau[k, f]
        Mf = L * fm
        # self term  1/2 int phi tau . psi
        I, Jc = np.meshgrid(own, own, indexing="ij")
        rows_c += [I.ravel(), I.ravel()]
        cols_c += [Jc.ravel(), Jc.ravel() + N_h]
        vals_c += [0.5 * tx * Mf.ravel(), 0.5 * ty * Mf.ravel()]
        p = partner[gf]
        if p >= 0:
            kn, fn = divmod(int(p), 3)
            nbr = kn * Np + ref.face_nodes[fn][::-1]  # neighbour runs the edge backwards
            I, Jc = np.meshgrid(own, nbr, indexing="ij")
            for target_r, target_c, target_v in ((rows_c, cols_c, vals_c), (rows_i, cols_i, vals_i)):
                target_r += [I.ravel(), I.ravel()]
                target_c += [Jc.ravel(), Jc.ravel() + N_h]
                target_v += [0.5 * tx * Mf.ravel(), 0.5 * ty * Mf.ravel()]
            # the self part of an interior face also belongs to the interior flux
            I2, J2 = np.meshgrid(own, own, indexing="ij")
            rows_i += [I2.ravel(), I2.ravel()]
            cols_i += [J2.ravel(), J2.ravel() + N_h]
            vals_i += [0.5 * tx * Mf.ravel(), 0.5 * ty * Mf.ravel()]
        else:
            Z = z_elem[k]
            rows_de.append(I.ravel())
            cols_de.append(Jc.ravel())
            vals_de.append(Mf.ravel() / (2.0 * Z))
            for a, ta in enumerate((tx, ty)):
                for b, tb in enumerate((tx, ty)):
                    rows_dh.append(I.ravel() + a * N_h)
                    cols_dh.append(Jc.ravel() + b * N_h)
                    vals_dh.append(0.5 * Z * ta * tb * Mf.ravel())
            bnd_rows.append((own, Mf, Z, (tx, ty)))
            bnd_xy.append(coords[own])
            bnd_tau.append(np.tile([tx, ty], (Nf, 1)))
            bnd_z.append(np.full(Nf, Z))

    def coo(r, c, v, shape):
        if not r:
            return sp.csr_matrix(shape)
        return sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=shape)

    coupling_faces = coo(rows_c, cols_c, vals_c, (N_h, 2 * N_h))
    coupling = (sp.hstack([vol_x, vol_y]) + coupling_faces).tocsr()
    coupling_interior = coo(rows_i, cols_i, vals_i, (N_h, 2 * N_h))
    damp_e = coo(rows_de, cols_de, vals_de, (N_h, N_h))
    damp_h = coo(rows_dh, cols_dh, vals_dh, (2 * N_h, 2 * N_h))

    nb = len(bnd_rows) * Nf
    se_r, se_c, se_v, sh_r, sh_c, sh_v = [], [], [], [], [], []
    for q, (own, Mf, Z, (tx, ty)) in enumerate(bnd_rows):
        I, Jc = np.meshgrid(own, q * Nf + np.arange(Nf), indexing="ij")
        se_r.append(I.ravel())
        se_c.append(Jc.ravel())
        se_v.append(Mf.ravel() / (2.0 * Z))
        for a, ta in enumerate((tx, ty)):
            sh_r.append(I.ravel() + a * N_h)
            sh_c.append(Jc.ravel())
            sh_v.append(0.5 * ta * Mf.ravel())
    src_e = coo(se_r, se_c, se_v, (N_h, nb))
    src_h = coo(sh_r, sh_c, sh_v, (2 * N_h, nb))

    # inradius = 2 area / perimeter
    inradius = det / length.sum(axis=1)
    dt_max = CFL_SAFETY * float(inradius.min()) / order**2

    return DgOperators(
        order=order,
        n_per_elem=Np,
        coords=coords,
        mass_e=mass_e,
        mass_h=mass_h,
        coupling=coupling,
        coupling_interior=coupling_interior,
        damp_e=damp_e,
        damp_h=damp_h,
        src_e=src_e,
        src_h=src_h,
        bnd_xy=np.concatenate(bnd_xy) if bnd_xy else np.zeros((0, 2)),
        bnd_tau=np.concatenate(bnd_tau) if bnd_tau else np.zeros((0, 2)),
        bnd_z=np.concatenate(bnd_z) if bnd_z else np.zeros(0),
        dt_max=dt_max,
        eps=eps,
        nu=nu,
    )


# ---------------------------------------------------------------------------
# time stepping


class FieldState(NamedTuple):
    """Leapfrog state: ``ez`` at time ``t`` and ``hx``, ``hy`` at ``t + dt/2``."""

    hx: np.ndarray
    hy: np.ndarray
    ez: np.ndarray
    t: float

    @classmethod
    def zeros(cls, n_dof, t=0.0):
        return cls(np.zeros(n_dof), np.zeros(n_dof), np.zeros(n_dof), float(t))


class _Stepper:
    """Precomputed update matrices for one time step size."""

    def __init__(self, ops, dt):
        if dt == 0.0:
            raise InvalidArgumentError("time step must be non-zero")
        self.dt = dt
        Ae = (ops.mass_e / dt + 0.5 * ops.damp_e).tocsc()
        Ah = (ops.mass_h / dt + 0.5 * ops.damp_h).tocsc()
        # both matrices are block diagonal per element: invert blockwise
        Ae_inv = _block_inverse(Ae, ops.n_per_elem)
        Ah_inv = _block_inverse(Ah, ops.n_per_elem)
        self.ee = (Ae_inv @ (ops.mass_e / dt - 0.5 * ops.damp_e)).tocsr()
        self.eh = (Ae_inv @ ops.coupling).tocsr()
        self.eg = (Ae_inv @ ops.src_e).tocsr()
        self.hh = (Ah_inv @ (ops.mass_h / dt - 0.5 * ops.damp_h)).tocsr()
        self.he = (Ah_inv @ (-ops.coupling.T)).tocsr()
        self.hg = (Ah_inv @ ops.src_h).tocsr()


def _block_inverse(A, n):
    """Inverse of a block-diagonal sparse matrix with n x n diagonal blocks."""
    N = A.shape[0]
    K = N // n
    dense = np.zeros((K, n, n))
    A = A.tocoo()
    k = A.row // n
    if np.any(k != A.col // n):
        raise InvalidArgumentError("matrix is not block diagonal")
    np.add.at(dense, (k, A.row % n, A.col % n), A.data)
    return _block_diag(np.linalg.inv(dense))


def leapfrog_step(state, ops, dt, omega=1.0, amplitude=1.0):
    """Advance one leapfrog step.

    For ``dt > 0`` the electric field is advanced first (incident data at
    ``t + dt/2``) and the magnetic field second (data at ``t + dt``). A
    negative ``dt`` runs the two half-updates in reverse order, which is the
    exact inverse of the forward step.

    Raises
    ------
    BlowUpError
        If any degree of freedom becomes non-finite.
    """
    st = ops.stepper(dt)
    h = np.concatenate([state.hx, state.hy])
    ez = state.ez
    t = state.t
    src = amplitude != 0.0
    if dt > 0:
        ez = st.ee @ ez + st.eh @ h
        if src:
            ez += st.eg @ ops.boundary_data(t + 0.5 * dt, omega, amplitude)
        h = st.hh @ h + st.he @ ez
        if src:
            h += st.hg @ ops.boundary_data(t + dt, omega, amplitude)
    else:
        h = st.hh @ h + st.he @ ez
        if src:
            h += st.hg @ ops.boundary_data(t, omega, amplitude)
        ez = st.ee @ ez + st.eh @ h
        if src:
            ez += st.eg @ ops.boundary_data(t + 0.5 * dt, omega, amplitude)
    t_new = t + dt
    if not (np.all(np.isfinite(ez)) and np.all(np.isfinite(h))):
        raise BlowUpError(f"non-finite field values at t = {t_new:.6g}", t_new)
    n = ops.n_dof
    return FieldState(h[:n], h[n:], ez, t_new)


@dataclass
class Trajectory:
    """Recorded states of a run.

    ``ez[i]`` is the electric field at ``times[i]``; ``hx[i]``, ``hy[i]``
    are the magnetic fields half a step later.
    """

    times: np.ndarray
    hx: np.ndarray
    hy: np.ndarray
    ez: np.ndarray
    final: FieldState
    wall_time: float
    dt: float


def run_fom(ops, omega, dt, t_final, initial=None, record_from=None, amplitude=1.0):
    """Integrate from ``initial`` (zero fields at t=0 by default) to ``t_final``.

    Parameters
    ----------
    ops : DgOperators
    omega : float
        Angular frequency of the incident wave.
    dt : float
        Time step, positive and at most ``ops.dt_max``.
    t_final : float
        Final time; the number of steps is ``round((t_final - t0) / dt)``.
    record_from : float, optional
        Only states with time ``>= record_from`` (minus a rounding margin)
        are stored. Defaults to recording everything including the
        initial state.

    Returns
    -------
    Trajectory
    """
    if not t_final >= 0:
        raise InvalidArgumentError(f"t_final must be non-negative, got {t_final}")
    if not 0 < dt <= ops.dt_max * (1 + 1e-12):
        raise InvalidArgumentError(f"dt = {dt} violates the stability bound {ops.dt_max:.6g}")
    state = initial if initial is not None else FieldState.zeros(ops.n_dof)
    n_steps = int(round((t_final - state.t) / dt))
    if n_steps < 0:
        raise InvalidArgumentError("t_final precedes the initial time")
    t0 = state.t
    lo = -np.inf if record_from is None else record_from - 1e-9 * max(1.0, abs(record_from))
    times, hx, hy, ez = [], [], [], []

    def keep(s):
        if s.t >= lo:
            times.append(s.t)
            hx.append(s.hx)
            hy.append(s.hy)
            ez.append(s.ez)

    start = time.perf_counter()
    keep(state)
    for n in range(n_steps):
        state = leapfrog_step(state, ops, dt, omega, amplitude)
        # recompute the clock from the step count to avoid drift
        state = state._replace(t=t0 + (n + 1) * dt)
        keep(state)
    wall = time.perf_counter() - start

    def stack(xs):
        return np.array(xs) if xs else np.zeros((0, ops.n_dof))

    return Trajectory(np.array(times), stack(hx), stack(hy), stack(ez), state, wall, dt)


def interpolate_incident(ops, t_e, t_h, omega):
    """Nodal interpolant of the incident wave as a leapfrog state.

    ``ez`` is sampled at ``t_e`` and the magnetic field at ``t_h``.
    """
    x, y = ops.coords[:, 0], ops.coords[:, 1]
    _, _, ez = incident_field(x, y, t_e, omega)
    hx, hy, _ = incident_field(x, y, t_h, omega)
    return FieldState(hx.copy(), hy.copy(), ez.copy(), float(t_e))


def l2_norm(ops, values, component="e"):
    """Element-wise L2 norm of a nodal field (vacuum-weighted mass matrix)."""
    M = ops.mass_e if component == "e" else ops.mass_h[: ops.n_dof, : ops.n_dof]
    w = ops.eps if component == "e" else ops.nu
    scale = np.repeat(1.0 / w, ops.n_per_elem)
    return float(np.sqrt(values @ (M @ (values * scale))))
