import numpy as np
import pytest
from helpers import DESK_CONFIG, observed_orders, plane_wave_error

from maxrom.config import load_config
from maxrom.dgtd import (
    FieldState,
    MaterialMap,
    ReferenceElement,
    assemble_operators,
    incident_field,
    interpolate_incident,
    leapfrog_step,
    run_fom,
)
from maxrom.errors import BlowUpError, InvalidArgumentError
from maxrom.mesh import Inclusion, Mesh, generate_mesh
from maxrom.pipeline import build_mesh, material_map


def test_incident_field_values():
    hx, hy, ez = incident_field(0.0, 0.0, 0.0, 3.0)
    assert (hx, hy, ez) == (0.0, -1.0, 1.0)
    rng = np.random.default_rng(0)
    x, y, t = rng.uniform(-3, 3, (3, 50))
    hx, hy, ez = incident_field(x, y, t, 2.5)
    assert np.all(hx == 0)
    assert np.all(ez + hy == 0)
    np.testing.assert_allclose(ez, np.cos(2.5 * t - 2.5 * x))


def test_reference_mass_p1():
    ref = ReferenceElement(1)
    np.testing.assert_allclose(24 * ref.mass, [[2, 1, 1], [1, 2, 1], [1, 1, 2]], atol=1e-13)


def test_single_triangle_mass_scaled_by_material():
    nodes = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 1.5]])
    mesh = Mesh(nodes, np.array([[0, 1, 2]]), np.array([1]))
    ops = assemble_operators(mesh, MaterialMap({1: (3.0, 2.0)}), 1)
    area = 1.5
    expected = area / 12 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]])
    np.testing.assert_allclose(ops.mass_e.toarray(), 3.0 * expected, atol=1e-13)
    np.testing.assert_allclose(ops.mass_h.toarray()[:3, :3], 2.0 * expected, atol=1e-13)


@pytest.mark.parametrize("order", [1, 2])
def test_dof_count_and_spd_mass(order):
    mesh = generate_mesh(1.0, 4, [Inclusion("disk", 0.5, 1)])
    ops = assemble_operators(mesh, MaterialMap({1: (4.0, 1.0)}), order)
    assert ops.n_dof == mesh.n_triangles * (order + 1) * (order + 2) // 2
    M = ops.mass_e.toarray()
    np.testing.assert_allclose(M, M.T, atol=1e-15)
    assert np.linalg.eigvalsh(M).min() > 0


def test_vacuum_masses_coincide():
    ops = assemble_operators(generate_mesh(1.0, 3), MaterialMap(), 2)
    n = ops.n_dof
    diff = ops.mass_e - ops.mass_h[:n, :n]
    assert abs(diff).max() == 0


def test_interior_flux_reciprocity():
    ops = assemble_operators(generate_mesh(1.0, 5), MaterialMap(), 2)
    n = ops.n_dof
    ones, zeros = np.ones(n), np.zeros(n)
    for h in (np.concatenate([ones, zeros]), np.concatenate([zeros, ones])):
        assert abs(ones @ (ops.coupling_interior @ h)) < 1e-13


def test_zero_state_without_source_stays_zero():
    ops = assemble_operators(generate_mesh(1.0, 4), MaterialMap(), 2)
    s = FieldState.zeros(ops.n_dof)
    for _ in range(50):
        s = leapfrog_step(s, ops, 0.9 * ops.dt_max, omega=3.0, amplitude=0.0)
    assert not np.any(s.ez) and not np.any(s.hx) and not np.any(s.hy)


def test_step_is_reversible_without_sources():
    mesh = generate_mesh(1.0, 4, [Inclusion("disk", 0.5, 1)])
    ops = assemble_operators(mesh, MaterialMap({1: (3.0, 1.0)}), 2)
    rng = np.random.default_rng(1)
    s0 = FieldState(*rng.standard_normal((3, ops.n_dof)), 0.0)
    dt = 0.8 * ops.dt_max
    s1 = leapfrog_step(s0, ops, dt, amplitude=0.0)
    back = leapfrog_step(s1, ops, -dt, amplitude=0.0)
    for a, b in zip(back[:3], s0[:3]):
        assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(b)


def test_blow_up_reports_time():
    ops = assemble_operators(generate_mesh(1.0, 2), MaterialMap(), 1)
    s = FieldState.zeros(ops.n_dof, t=0.25)
    s = s._replace(ez=np.full(ops.n_dof, np.inf))
    with pytest.raises(BlowUpError) as info:
        leapfrog_step(s, ops, 0.5 * ops.dt_max)
    assert info.value.t == pytest.approx(0.25 + 0.5 * ops.dt_max)


def test_run_fom_rejects_unstable_step_and_handles_zero_time():
    ops = assemble_operators(generate_mesh(1.0, 3), MaterialMap(), 1)
    with pytest.raises(InvalidArgumentError):
        run_fom(ops, 3.0, 1.5 * ops.dt_max, 1.0)
    tr = run_fom(ops, 3.0, ops.dt_max, 0.0)
    assert tr.times.tolist() == [0.0]
    assert tr.ez.shape == (1, ops.n_dof)


def test_plane_wave_error_decreases_with_refinement():
    errs = [plane_wave_error(r, 2, t_final=0.5)[0] for r in (4, 8)]
    assert errs[1] < errs[0] / 4


def test_desk_mesh_stability_ten_thousand_steps():
    cfg = load_config(DESK_CONFIG)
    mesh = build_mesh(cfg)
    ops = assemble_operators(mesh, material_map(cfg, [cfg.parameters[0].hi]), cfg.fom.order)
    dt = 0.9 * ops.dt_max
    s = FieldState.zeros(ops.n_dof)
    peak = 0.0
    for i in range(10_000):
        s = leapfrog_step(s, ops, dt, omega=cfg.fom.omega)
        if i % 100 == 99:
            peak = max(peak, np.abs(s.ez).max(), np.abs(s.hx).max(), np.abs(s.hy).max())
    assert peak <= 10.0


def test_energy_bounded_over_last_period():
    cfg = load_config(DESK_CONFIG)
    ops = assemble_operators(build_mesh(cfg), material_map(cfg, [5.0]), cfg.fom.order)
    period = cfg.period
    dt = period / 64 / int(np.ceil(period / 64 / ops.dt_max))
    init = interpolate_incident(ops, 0.0, 0.5 * dt, cfg.fom.omega)
    tr = run_fom(ops, cfg.fom.omega, dt, 12 * period, initial=init, record_from=10 * period)
    energy = np.array([ops.energy(FieldState(hx, hy, ez, 0.0)) for hx, hy, ez in zip(tr.hx, tr.hy, tr.ez)])
    half = len(energy) // 2
    assert energy[half:].max() <= 1.05 * energy[:half].max()
