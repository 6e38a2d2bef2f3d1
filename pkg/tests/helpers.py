"""Shared oracles and builders for the test-suite."""

from pathlib import Path

import numpy as np

from maxrom.dgtd import MaterialMap, assemble_operators, incident_field, interpolate_incident, run_fom
from maxrom.mesh import generate_mesh

ROOT = Path(__file__).resolve().parents[1]
DESK_CONFIG = ROOT / "configs" / "desk_disk.yaml"
TINY_CONFIG = ROOT / "configs" / "tiny.yaml"


def plane_wave_error(resolution, order, omega=2 * np.pi, t_final=1.0, half_width=1.0):
    """Relative L2 error of the discrete vacuum plane wave against the exact one.

    The total field starts as the interpolated incident wave; with the
    absorbing boundary fed by the same wave the exact solution is the wave itself.
    """
    mesh = generate_mesh(half_width, resolution)
    ops = assemble_operators(mesh, MaterialMap(), order)
    n = int(np.ceil(t_final / ops.dt_max))
    dt = t_final / n
    init = interpolate_incident(ops, 0.0, 0.5 * dt, omega)
    tr = run_fom(ops, omega, dt, t_final, initial=init, record_from=t_final)
    final = tr.final
    x, y = ops.coords[:, 0], ops.coords[:, 1]
    _, _, ez = incident_field(x, y, final.t, omega)
    hx, hy, _ = incident_field(x, y, final.t + 0.5 * dt, omega)
    num = np.sqrt(
        _sq(ops, final.ez - ez, "e") + _sq(ops, final.hx - hx, "h") + _sq(ops, final.hy - hy, "h")
    )
    den = np.sqrt(_sq(ops, ez, "e") + _sq(ops, hx, "h") + _sq(ops, hy, "h"))
    return num / den, ops.n_dof


def _sq(ops, v, which):
    M = ops.mass_e if which == "e" else ops.mass_h[: ops.n_dof, : ops.n_dof]
    return float(v @ (M @ v))


def observed_orders(errors, ratio=2.0):
    e = np.asarray(errors)
    return np.log(e[:-1] / e[1:]) / np.log(ratio)


def synthetic_snapshots(n_h=2000, n_t=64, n_p=9, noise=1e-3, seed=0):
    """Smooth parametric waves with a little noise, three components.

    Every trajectory has full numerical rank, so both POD steps truncate
    something for any k < N_t.
    """
    from maxrom.snapshots import SamplingPlan, SnapshotSet

    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, n_h)[:, None]
    t = np.linspace(0.0, 1.0, n_t, endpoint=False)[None, :]
    mus = np.linspace(1.0, 3.0, n_p)
    data = np.empty((3, n_p, n_h, n_t))
    for j, mu in enumerate(mus):
        base = np.cos(2 * np.pi * (t - mu * x)) + 0.3 * np.sin(4 * np.pi * (t + x / mu)) * np.exp(-mu * x)
        for c in range(3):
            data[c, j] = (c + 1) * base + noise * rng.standard_normal((n_h, n_t))
    plan = SamplingPlan(t.ravel(), mus[:, None])
    return SnapshotSet(data, plan)


def layer_adjoint_errors(arch, seed=0):
    """Relative adjointness defect of every (transposed) convolution in ``arch``.

    For a convolution ``A`` the check is ``<A x, y> = <x, A^T y>`` with the
    transposed kernel; for a transposed convolution the roles swap.
    """
    from maxrom.nn import kernels

    rng = np.random.default_rng(seed)
    out = []
    shapes = arch.encoder_shapes()
    for spec, (c_in, n_in), (c_out, n_out) in zip(arch.encoder_convs, shapes[:-1], shapes[1:]):
        w = rng.standard_normal((c_out, c_in, spec.kernel, spec.kernel))
        x = rng.standard_normal((2, c_in, n_in, n_in))
        y = rng.standard_normal((2, c_out, n_out, n_out))
        lhs = np.vdot(kernels.conv2d(x, w, None, spec.stride, spec.padding), y)
        rhs = np.vdot(x, kernels.conv_transpose2d(y, w, None, spec.stride, spec.padding, (n_in, n_in)))
        out.append(("conv", spec, abs(lhs - rhs) / abs(lhs)))
    c_in, n_in = arch.decoder_grid[0], arch.decoder_grid[1]
    for spec, n_out in arch.decoder_tconvs:
        w = rng.standard_normal((c_in, spec.channels, spec.kernel, spec.kernel))
        x = rng.standard_normal((2, c_in, n_in, n_in))
        y = rng.standard_normal((2, spec.channels, n_out, n_out))
        lhs = np.vdot(kernels.conv_transpose2d(x, w, None, spec.stride, spec.padding, (n_out, n_out)), y)
        rhs = np.vdot(x, kernels.conv2d(y, w, None, spec.stride, spec.padding))
        out.append(("tconv", spec, abs(lhs - rhs) / abs(lhs)))
        c_in, n_in = spec.channels, n_out
    return out


def gradient_check(arch, seed=0, n_items=2, h=1e-5):
    """Worst per-tensor relative gap between autodiff and central differences.

    Every entry of every parameter is perturbed. The gap of a tensor is
    ``||g_fd - g|| / ||g||``. The early encoder layers have gradient norms
    near 1e-5, so ``h`` sits above the forward-pass rounding floor ``eps L / h``.
    """
    from maxrom.cae import decode_array, encode_array, init_params, loss_and_grads

    rng = np.random.default_rng(seed)
    params = init_params(arch, rng)
    # non-zero biases so their gradients and the ELU branches are exercised
    params = [p if p.ndim > 1 else 0.1 * rng.standard_normal(p.shape) for p in params]
    x = rng.uniform(0, 1, (n_items, arch.in_channels, arch.side, arch.side))

    def loss():
        rec = decode_array(arch, params, encode_array(arch, params, x))
        return np.mean((rec - x) ** 2)

    _, grads = loss_and_grads(arch, params, x)
    worst = 0.0
    for p, g in zip(params, grads):
        fd = np.empty_like(p)
        flat, gflat = p.reshape(-1), fd.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss()
            flat[i] = keep - h
            down = loss()
            flat[i] = keep
            gflat[i] = (up - down) / (2 * h)
        worst = max(worst, np.linalg.norm(fd - g) / np.linalg.norm(g))
    return worst


def random_cubic_errors(count=50, seed=0):
    """Worst spline error on random cubics and the worst continuity jumps.

    Returns ``(value_err, c2_jump, nak_jump)``: the max deviation from the
    cubic on a dense grid, the largest jump of value/first/second derivative
    at interior knots and the largest third-derivative jump at the second and
    second-to-last knots.
    """
    from maxrom.csi import fit_spline_1d

    rng = np.random.default_rng(seed)
    worst = [0.0, 0.0, 0.0]
    for _ in range(count):
        n = int(rng.integers(4, 15))
        knots = np.sort(rng.uniform(-3, 3, n))
        while np.min(np.diff(knots)) < 1e-2:
            knots = np.sort(rng.uniform(-3, 3, n))
        poly = np.polynomial.Polynomial(rng.standard_normal(4))
        s = fit_spline_1d(knots, poly(knots))
        xs = np.linspace(knots[0], knots[-1], 2001)
        worst[0] = max(worst[0], np.abs(s(xs) - poly(xs)).max())
        worst[1] = max(worst[1], max_knot_jump(s, range(1, n - 1), (0, 1, 2)))
        worst[2] = max(worst[2], max_knot_jump(s, (1, n - 2), (3,)))
    return tuple(worst)


def max_knot_jump(spline, knot_indices, orders):
    """Largest |left - right| derivative mismatch at the given interior knots."""
    c = spline.coeffs
    jump = 0.0
    for i in knot_indices:
        h = spline.knots[i] - spline.knots[i - 1]
        a, b, cc, d = (c[k, i - 1] for k in range(4))
        left = [a + h * (b + h * (cc + h * d)), b + h * (2 * cc + 3 * h * d), 2 * cc + 6 * h * d, 6 * d]
        right = [c[0, i], c[1, i], 2 * c[2, i], 6 * c[3, i]]
        for nu in orders:
            jump = max(jump, float(np.max(np.abs(np.asarray(left[nu]) - right[nu]))))
    return jump


def separable_cubic_error(seed=0, points=300):
    """Max error of a 4-D tensor interpolant on a product of random cubics."""
    from maxrom.csi import fit_tensor_product

    rng = np.random.default_rng(seed)
    grids = [np.sort(rng.uniform(0, 1, n)) for n in (5, 4, 6, 4)]
    polys = [np.polynomial.Polynomial(rng.standard_normal(4)) for _ in grids]
    values = np.einsum("i,j,k,l->ijkl", *(p(g) for p, g in zip(polys, grids)))
    interp = fit_tensor_product(grids, values)
    pts = np.column_stack([rng.uniform(g[0], g[-1], points) for g in grids])
    exact = np.prod([p(pts[:, d]) for d, p in enumerate(polys)], axis=0)
    approx = np.array([interp(x) for x in pts])
    return float(np.abs(approx - exact).max())
