"""Offline stages, error evaluation, timing report and field exports.

Offline stages run in order ``fom -> snapshots -> pod -> cae -> csi``. Each
writes its products into the output directory together with a digest of the
configuration sections it depends on; a stage whose digest still matches is
loaded instead of recomputed. Wall-clock times go to ``timings.json`` so the
model file itself stays bitwise reproducible.
"""

import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cae as cae_mod
from .config import to_dict
from .containers import read_container, write_container
from .csi import build_reduced_matrices, decompose_modes
from .dgtd import FieldState, MaterialMap, assemble_operators, interpolate_incident, run_fom
from .errors import InvalidArgumentError, MaxromError, StageError
from .mesh import Inclusion, generate_mesh, read_mesh
from .online import RomModel, load_model, online, online_pod_csi, save_model
from .pod import intrinsic_coordinates, pod_from_payload, pod_payload, two_step_pod
from .snapshots import (
    COMPONENTS,
    SnapshotSet,
    SamplingPlan,
    collect_snapshots,
    parameter_axes,
    read_snapshots,
    sample_parameters,
    write_snapshots,
)

STAGES = ("fom", "snapshots", "pod", "cae", "csi")
# configuration sections each stage reads (cumulative along the chain)
_STAGE_KEYS = {
    "fom": ("mesh", "materials", "parameters", "fom", "sampling", "test"),
    "snapshots": (),
    "pod": ("pod",),
    "cae": ("cae",),
    "csi": ("csi",),
}
FIELDS = {"H": ("Hx", "Hy"), "E": ("Ez",)}
MODEL_FILE = "model.rom"


def fmt(x):
    """Float formatted with 17 significant digits."""
    return f"{x:.17g}"


# ---------------------------------------------------------------------------
# stage bookkeeping


def stage_digest(cfg, stage):
    data = to_dict(cfg)
    keys = []
    for s in STAGES:
        keys += _STAGE_KEYS[s]
        if s == stage:
            break
    blob = json.dumps({k: data[k] for k in keys}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


class Workspace:
    """Output directory with the stage manifest and timing ledger."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "fom").mkdir(exist_ok=True)

    def path(self, name):
        return self.root / name

    def _read_json(self, name):
        p = self.path(name)
        return json.loads(p.read_text()) if p.exists() else {}

    def _write_json(self, name, data):
        self.path(name).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")

    def is_current(self, cfg, stage):
        return self._read_json("stages.json").get(stage) == stage_digest(cfg, stage)

    def mark(self, cfg, stage):
        manifest = self._read_json("stages.json")
        manifest[stage] = stage_digest(cfg, stage)
        # anything downstream is now stale
        for s in STAGES[STAGES.index(stage) + 1 :]:
            manifest.pop(s, None)
        self._write_json("stages.json", manifest)

    @property
    def timings(self):
        return self._read_json("timings.json")

    def record_time(self, **entries):
        t = self.timings
        t.update(entries)
        self._write_json("timings.json", t)


# ---------------------------------------------------------------------------
# FOM sweeps


def build_mesh(cfg):
    if cfg.mesh.file:
        return read_mesh(cfg.mesh.file)
    incs = [Inclusion(i.shape, i.radius, i.tag) for i in cfg.mesh.inclusions]
    return generate_mesh(cfg.mesh.half_width, cfg.mesh.resolution, incs)


def material_map(cfg, mu):
    table = {int(t): tuple(v) for t, v in cfg.materials.items()}
    for value, p in zip(np.atleast_1d(mu), cfg.parameters):
        eps, nu = table.get(p.tag, (1.0, 1.0))
        table[p.tag] = (float(value), nu) if p.property == "eps" else (eps, float(value))
    return MaterialMap(table)


def time_step(cfg, dt_max):
    """Step with an integer number of steps per period, a multiple of ``n_t``."""
    spp = cfg.fom.steps_per_period
    if not spp:
        n_t = cfg.sampling.n_t
        spp = n_t * math.ceil(cfg.period / (dt_max * n_t))
    dt = cfg.period / spp
    if dt > dt_max * (1 + 1e-12):
        raise InvalidArgumentError(
            f"{spp} steps per period give dt = {dt:.6g} above the stability bound {dt_max:.6g}"
        )
    return dt, spp


def test_parameters(cfg):
    return np.array(cfg.test.params, dtype=np.float64).reshape(-1, len(cfg.parameters))


def solve(cfg, mesh, mu, dt):
    """One FOM run over ``n_periods``, recording the last period."""
    ops = assemble_operators(mesh, material_map(cfg, mu), cfg.fom.order)
    period = cfg.period
    if cfg.fom.initial == "incident":
        init = interpolate_incident(ops, 0.0, 0.5 * dt, cfg.fom.omega)
    else:
        init = FieldState.zeros(ops.n_dof)
    t_final = cfg.fom.n_periods * period
    return ops, run_fom(ops, cfg.fom.omega, dt, t_final, initial=init, record_from=t_final - period)


def stage_fom(cfg, ws, log=None):
    mesh = build_mesh(cfg)
    train_mu = sample_parameters(cfg.parameter_spec)
    test_mu = test_parameters(cfg)
    all_mu = np.concatenate([train_mu, test_mu])
    dt_max = min(
        assemble_operators(mesh, material_map(cfg, mu), cfg.fom.order).dt_max for mu in _extremes(cfg)
    )
    dt, spp = time_step(cfg, dt_max)
    walls = []
    for j, mu in enumerate(all_mu):
        ops, tr = solve(cfg, mesh, mu, dt)
        name = f"train_{j:04d}" if j < len(train_mu) else f"test_{j - len(train_mu):04d}"
        np.savez(ws.path(f"fom/{name}.npz"), times=tr.times, hx=tr.hx, hy=tr.hy, ez=tr.ez, mu=mu)
        walls.append(tr.wall_time)
    np.save(ws.path("fom/coords.npy"), ops.coords)
    meta = {"dt": dt, "steps_per_period": spp, "dt_max": dt_max, "n_dof": ops.n_dof,
            "n_train": len(train_mu), "n_test": len(test_mu), "run_wall_times": walls}
    ws.path("fom/meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return {"dgtd_solve": float(np.mean(walls)), "fom_runs": float(np.sum(walls))}


def _extremes(cfg):
    """Corners of the parameter box; the stability bound is checked at each."""
    corners = np.array(np.meshgrid(*[(p.lo, p.hi) for p in cfg.parameters], indexing="ij"))
    return corners.reshape(len(cfg.parameters), -1).T


class _Run:
    def __init__(self, path):
        z = np.load(path)
        self.times, self.hx, self.hy, self.ez, self.mu = z["times"], z["hx"], z["hy"], z["ez"], z["mu"]


def load_runs(ws, prefix):
    meta = json.loads(ws.path("fom/meta.json").read_text())
    count = meta["n_train"] if prefix == "train" else meta["n_test"]
    return [_Run(ws.path(f"fom/{prefix}_{j:04d}.npz")) for j in range(count)]


def node_coordinates(ws):
    return np.load(ws.path("fom/coords.npy"))


# ---------------------------------------------------------------------------
# snapshots


def stage_snapshots(cfg, ws, log=None):
    runs = load_runs(ws, "train")
    t_hi = cfg.fom.n_periods * cfg.period
    window = (t_hi - cfg.period, t_hi)
    params = sample_parameters(cfg.parameter_spec)
    snaps = collect_snapshots(runs, params, window, cfg.sampling.n_t)
    write_snapshots(snaps, ws.path("snapshots.bin"))
    tests = load_runs(ws, "test")
    if tests:
        ref = test_reference(cfg, tests, snaps.plan.times)
        write_snapshots(ref, ws.path("test_snapshots.bin"))
    return {}


def test_reference(cfg, runs, train_times):
    """Reference fields at the test times (training times when none are configured)."""
    times = np.asarray(cfg.test.times, dtype=np.float64) if cfg.test.times else train_times
    recorded = runs[0].times
    tol = 1e-6 * cfg.period
    picks = []
    for t in times:
        i = int(np.argmin(np.abs(recorded - t)))
        if abs(recorded[i] - t) > tol:
            raise InvalidArgumentError(f"test time {t} is not a recorded step of the final period")
        picks.append(i)
    data = np.array([[r.hx[picks].T, r.hy[picks].T, r.ez[picks].T] for r in runs]).transpose(1, 0, 2, 3)
    return SnapshotSet(data, SamplingPlan(recorded[picks], np.array([r.mu for r in runs])))


# ---------------------------------------------------------------------------
# POD, CAE and CSI


def stage_pod(cfg, ws, log=None):
    snaps = read_snapshots(ws.path("snapshots.bin"))
    basis = two_step_pod(snaps, cfg.pod.k, cfg.pod.n_basis)
    write_container(ws.path("pod.bin"), {"PODBASIS": pod_payload(basis)})
    return {}


def load_pod(ws):
    return pod_from_payload(*read_container(ws.path("pod.bin"))["PODBASIS"])


def architecture(cfg, side, channels_in):
    c = cfg.cae
    return cae_mod.mirrored_architecture(side, c.code_size, c.channels, c.hidden, c.kernel, channels_in)


def train_config(cfg):
    c = cfg.cae
    return cae_mod.TrainConfig(c.lr0, c.decay, c.batch, c.max_epochs, c.patience, c.seed)


def stage_cae(cfg, ws, log=None):
    snaps = read_snapshots(ws.path("snapshots.bin"))
    basis = load_pod(ws)
    coords = intrinsic_coordinates(basis, snaps)
    dataset = cae_mod.prepare_dataset(coords, cfg.cae.train_fraction, cfg.cae.seed)
    arch = architecture(cfg, basis.side, len(basis.components))

    def progress(entry):
        if log and entry.epoch % 100 == 0:
            log(f"cae: epoch {entry.epoch} train {entry.train_loss:.3e} valid {entry.val_loss:.3e}")

    model = cae_mod.train(dataset, arch, train_config(cfg), callback=progress)
    write_container(ws.path("cae.bin"), {"ROMCAE01": cae_mod.cae_payload(model)})
    cae_mod.write_log_csv(model, ws.path("training_log.csv"))
    return {}


def load_cae(ws):
    return cae_mod.cae_from_payload(*read_container(ws.path("cae.bin"))["ROMCAE01"])


def stage_csi(cfg, ws, log=None):
    snaps = read_snapshots(ws.path("snapshots.bin"))
    basis = load_pod(ws)
    net = load_cae(ws)
    coords = intrinsic_coordinates(basis, snaps)
    items = net.normalize(cae_mod.coefficients_to_items(coords))
    codes = net.encode(items)
    axes = parameter_axes(cfg.parameter_spec)
    n_t, n_p = snaps.plan.n_t, snaps.plan.n_p
    modes = decompose_modes(build_reduced_matrices(codes, n_t, n_p), snaps.plan.times, axes, cfg.csi.delta)
    nc, n_basis, n_s = coords.shape
    flat = coords.reshape(nc * n_basis, n_s).T
    baseline = decompose_modes(build_reduced_matrices(flat, n_t, n_p), snaps.plan.times, axes, cfg.csi.delta)
    model = RomModel(basis, net, modes, baseline, cfg.digest())
    save_model(model, ws.path(MODEL_FILE))
    return {}


_RUNNERS = {
    "fom": stage_fom,
    "snapshots": stage_snapshots,
    "pod": stage_pod,
    "cae": stage_cae,
    "csi": stage_csi,
}


def run_stages(cfg, out=None, until="csi", force=False, log=None):
    """Run (or reuse) every stage up to and including ``until``.

    Raises
    ------
    StageError
        Wrapping the first failure, tagged with the stage name.
    """
    ws = Workspace(out or cfg.output)
    for stage in STAGES[: STAGES.index(until) + 1]:
        if not force and ws.is_current(cfg, stage):
            if log:
                log(f"{stage}: up to date")
            continue
        start = time.perf_counter()
        try:
            extra = _RUNNERS[stage](cfg, ws, log)
        except MaxromError as exc:
            raise StageError(stage, exc) from exc
        elapsed = time.perf_counter() - start
        ws.record_time(**{stage: elapsed}, **extra)
        ws.mark(cfg, stage)
        force = True  # downstream stages must follow a recomputed stage
        if log:
            log(f"{stage}: {elapsed:.2f} s")
    return ws


def offline(cfg, out=None, force=False, log=None):
    """Full offline phase; returns the model."""
    ws = run_stages(cfg, out, "csi", force, log)
    return load_model(ws.path(MODEL_FILE))


# ---------------------------------------------------------------------------
# evaluation


def _field_rows(components, fields=FIELDS):
    index = {c: i for i, c in enumerate(components)}
    return {f: [index[c] for c in names] for f, names in fields.items()}


def relative_error(ref, approx):
    den = np.linalg.norm(ref)
    return float(np.linalg.norm(ref - approx) / den) if den > 0 else math.nan


@dataclass
class Evaluation:
    """Per-sample errors on a test set and their averages."""

    rows: list  # (param index, mu, t, {name: (e_pro, e_rom, e_base)})
    mean: dict  # name -> (e_pro, e_rom, e_base)
    excluded: dict
    online_time: float  # seconds per CAE-CSI query
    baseline_time: float
    names: tuple = field(default=())


def evaluate(model, reference):
    """Projection, CAE-CSI and POD-CSI errors at every test sample.

    ``reference`` is a :class:`SnapshotSet` of test fields. Errors are reported
    per field (H stacks Hx and Hy, E is Ez) and per component; zero-norm
    references are excluded and counted.
    """
    if reference.n_h != model.n_h:
        raise InvalidArgumentError("reference fields and model disagree on N_h")
    groups = _field_rows(model.components)
    groups.update({c: [i] for i, c in enumerate(model.components)})
    names = tuple(groups)
    V = model.pod.bases
    rows, t_rom, t_base = [], [], []
    for j, mu in enumerate(reference.plan.params):
        for i, t in enumerate(reference.plan.times):
            u = reference.data[:, j, :, i]
            proj = projection(V, u)
            s = time.perf_counter()
            rom = online(model, t, mu)
            t_rom.append(time.perf_counter() - s)
            s = time.perf_counter()
            base = online_pod_csi(model, t, mu)
            t_base.append(time.perf_counter() - s)
            errs = {}
            for name, idx in groups.items():
                ref = u[idx]
                errs[name] = (relative_error(ref, proj[idx]), relative_error(ref, rom[idx]), relative_error(ref, base[idx]))
            rows.append((j, np.asarray(mu), float(t), errs))
    mean, excluded = {}, {}
    for name in names:
        vals = np.array([r[3][name] for r in rows])
        ok = ~np.isnan(vals[:, 0])
        excluded[name] = int((~ok).sum())
        mean[name] = tuple(float(v) for v in vals[ok].mean(axis=0)) if ok.any() else (math.nan,) * 3
    return Evaluation(rows, mean, excluded, float(np.median(t_rom)), float(np.median(t_base)), names)


def projection(V, u):
    """Orthogonal projection of per-component fields ``u`` (ncomp, N_h)."""
    return np.einsum("chn,cn->ch", V, np.einsum("chn,ch->cn", V, u))


def write_errors_csv(ev, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["param_index", "mu", "t"]
        for name in ev.names:
            header += [f"e_{name}_pro", f"e_{name}_cae_csi", f"e_{name}_pod_csi"]
        w.writerow(header)
        for j, mu, t, errs in ev.rows:
            row = [j, ";".join(fmt(m) for m in np.atleast_1d(mu)), fmt(t)]
            for name in ev.names:
                row += [fmt(v) for v in errs[name]]
            w.writerow(row)


# ---------------------------------------------------------------------------
# report


def speedup(reference_time, online_time):
    """Ratio of a full solve to an online query; ``inf`` for a zero online time."""
    if online_time <= 0.0:
        return math.inf
    return reference_time / online_time


def report(timings, ev):
    """Human-readable summary and CSV rows of the timing and error tables."""
    dgtd = timings.get("dgtd_solve", math.nan)
    offline = {
        "snapshots": timings.get("fom", math.nan) + timings.get("snapshots", 0.0),
        "pod": timings.get("pod", math.nan),
        "cae_csi_training": timings.get("cae", math.nan) + timings.get("csi", 0.0),
    }
    online_t = {"cae_csi": ev.online_time, "pod_csi": ev.baseline_time, "dgtd": dgtd}
    ratios = {"cae_csi": speedup(dgtd, ev.online_time), "pod_csi": speedup(dgtd, ev.baseline_time)}
    lines = ["Offline CPU time [s]"]
    lines += [f"  {k:<18} {v:12.4f}" for k, v in offline.items()]
    lines.append("Online CPU time per query [s]")
    lines += [f"  {k:<18} {v:12.6f}" for k, v in online_t.items()]
    lines.append("Speed-up over one DGTD solve")
    lines += [f"  {k:<18} {v:12.1f}" for k, v in ratios.items()]
    lines.append("Average relative error (projection / CAE-CSI / POD-CSI)")
    for name in ev.names:
        p, r, b = ev.mean[name]
        extra = f"  ({ev.excluded[name]} zero-norm samples excluded)" if ev.excluded[name] else ""
        lines.append(f"  {name:<4} {100 * p:8.3f}% {100 * r:8.3f}% {100 * b:8.3f}%{extra}")
    rows = [("section", "quantity", "value")]
    rows += [("offline", k, fmt(v)) for k, v in offline.items()]
    rows += [("online", k, fmt(v)) for k, v in online_t.items()]
    rows += [("speedup", k, fmt(v)) for k, v in ratios.items()]
    for name in ev.names:
        for label, v in zip(("pro", "cae_csi", "pod_csi"), ev.mean[name]):
            rows.append(("error", f"{name}_{label}", fmt(v)))
    return "\n".join(lines) + "\n", rows


def write_report(ws, ev):
    text, rows = report(ws.timings, ev)
    ws.path("report.txt").write_text(text)
    with open(ws.path("report.csv"), "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    return text


# ---------------------------------------------------------------------------
# field exports


def fourier_coefficient(samples, times, omega):
    """Complex amplitude at ``omega`` of samples spanning one period.

    ``samples`` has time along its last axis; uniform samples over a full
    period make this exact for a pure harmonic ``Re(a exp(i omega t))``.
    """
    phase = np.exp(-1j * omega * np.asarray(times))
    return 2.0 * (np.asarray(samples) @ phase) / len(times)


def slice_indices(coords, y0=0.0):
    """Nodes on the grid line closest to ``y = y0``, ordered by x."""
    dy = np.abs(coords[:, 1] - y0)
    on = np.flatnonzero(dy <= dy.min() + 1e-9)
    return on[np.argsort(coords[on, 0], kind="stable")]


def export_fields(model, reference, coords, omega, out_dir, param_index=0):
    """Fourier-domain fields over the final period and the y = 0 slice, as CSV.

    Writes ``fourier_<j>.csv`` (all nodes) and ``slice_y0_<j>.csv``; each has
    reference and CAE-CSI real/imaginary parts per component.
    """
    out_dir = Path(out_dir)
    mu = reference.plan.params[param_index]
    times = reference.plan.times
    ref = reference.data[:, param_index]  # (ncomp, N_h, N_t)
    rom = np.stack([online(model, t, mu) for t in times], axis=-1)
    ref_hat = fourier_coefficient(ref, times, omega)
    rom_hat = fourier_coefficient(rom, times, omega)
    header = ["x", "y"]
    for c in model.components:
        header += [f"{c}_ref_re", f"{c}_ref_im", f"{c}_rom_re", f"{c}_rom_im"]

    def write(path, nodes):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for n in nodes:
                row = [fmt(coords[n, 0]), fmt(coords[n, 1])]
                for c in range(len(model.components)):
                    a, b = ref_hat[c, n], rom_hat[c, n]
                    row += [fmt(a.real), fmt(a.imag), fmt(b.real), fmt(b.imag)]
                w.writerow(row)

    write(out_dir / f"fourier_{param_index}.csv", range(coords.shape[0]))
    write(out_dir / f"slice_y0_{param_index}.csv", slice_indices(coords))
    return ref_hat, rom_hat


def evaluate_workspace(cfg, out=None, exports=True):
    """Evaluate the stored model on the stored test references and write the report."""
    ws = Workspace(out or cfg.output)
    model = load_model(ws.path(MODEL_FILE))
    path = ws.path("test_snapshots.bin")
    if not path.exists():
        raise InvalidArgumentError("no test parameters configured; nothing to evaluate")
    reference = read_snapshots(path)
    ev = evaluate(model, reference)
    write_errors_csv(ev, ws.path("errors.csv"))
    text = write_report(ws, ev)
    if exports:
        coords = node_coordinates(ws)
        for j in range(reference.plan.n_p):
            export_fields(model, reference, coords, cfg.fom.omega, ws.root, j)
    return ev, text
