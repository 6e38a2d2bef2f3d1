"""Command-line interface: ``maxrom <command> --config FILE``.

Stage commands reuse up-to-date products in the output directory. Options
such as ``pod --k`` are stored in ``overrides.json`` there, so later commands
keep working with the same settings.
"""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_text, dump_config, load_config
from .errors import InvalidArgumentError, MaxromError

_OVERRIDE_KEYS = {
    "k": "pod__k",
    "nbasis": "pod__n_basis",
    "n": "cae__code_size",
    "seed": "cae__seed",
    "delta": "csi__delta",
}


def _parser():
    p = argparse.ArgumentParser(prog="maxrom", description="POD-CAE-CSI reduced-order modelling for 2-D Maxwell scattering")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", "-c", help="YAML experiment configuration (defaults when omitted)")
        sp.add_argument("--out", "-o", help="output directory (overrides the config)")
        sp.add_argument("--force", action="store_true", help="recompute even if up to date")
        return sp

    add("fom-run", "run the full-order sweeps over training and test parameters")
    add("snapshots", "subsample the final period into snapshot files")
    sp = add("pod", "two-step POD of the snapshots")
    sp.add_argument("--k", type=int)
    sp.add_argument("--nbasis", type=int)
    sp = add("train-cae", "train the convolutional autoencoder")
    sp.add_argument("--n", type=int)
    sp.add_argument("--seed", type=int)
    sp = add("fit-csi", "fit the mode models and write the model file")
    sp.add_argument("--delta", type=float)
    add("offline", "run every offline stage")
    sp = add("online-eval", "evaluate the model at one (t, mu)")
    sp.add_argument("--t", type=float, required=True)
    sp.add_argument("--mu", required=True, help="comma-separated parameter values")
    sp.add_argument("--csv", help="write fields to this CSV file")
    add("baseline-eval", "test-set errors and timing of the POD-CSI baseline")
    add("report", "test-set errors, timings and field exports")
    sub.add_parser("show-config", help="print the effective configuration").add_argument("--config", "-c")
    return p


def _effective_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "out", None):
        cfg = cfg.replace(output=args.out)
    out = Path(cfg.output)
    stored_path = out / "overrides.json"
    stored = json.loads(stored_path.read_text()) if stored_path.exists() else {}
    for opt, key in _OVERRIDE_KEYS.items():
        value = getattr(args, opt, None)
        if value is not None:
            stored[key] = value
    if stored:
        cfg = cfg.replace(**stored)
        out.mkdir(parents=True, exist_ok=True)
        stored_path.write_text(json.dumps(stored, indent=2, sort_keys=True) + "\n")
    return cfg


def _print(msg):
    print(msg, flush=True)


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return _dispatch(args)
    except MaxromError as exc:
        print(f"maxrom: error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args):
    # imported lazily so `maxrom --help` stays quick
    from . import pipeline
    from .online import load_model, online, online_pod_csi

    if args.command == "show-config":
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        sys.stdout.write(config_text(cfg))
        return 0
    cfg = _effective_config(args)
    stage_of = {"fom-run": "fom", "snapshots": "snapshots", "pod": "pod", "train-cae": "cae",
                "fit-csi": "csi", "offline": "csi"}
    if args.command in stage_of:
        until = stage_of[args.command]
        if args.force:
            # recompute the named stage; earlier ones are reused when current
            _invalidate(pipeline.Workspace(cfg.output), until)
        pipeline.run_stages(cfg, until=until, log=_print)
        dump_config(cfg, Path(cfg.output) / "config.yaml")
        return 0

    model_path = Path(cfg.output) / pipeline.MODEL_FILE
    if not model_path.exists():
        raise InvalidArgumentError(f"no model at {model_path}; run `maxrom offline` first")
    model = load_model(model_path)
    if args.command == "online-eval":
        mu = np.array([float(v) for v in args.mu.split(",")])
        start = time.perf_counter()
        fields = online(model, args.t, mu)
        elapsed = time.perf_counter() - start
        _print(f"online evaluation took {elapsed * 1e3:.3f} ms")
        if args.csv:
            coords = pipeline.node_coordinates(pipeline.Workspace(cfg.output))
            with open(args.csv, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x", "y", *model.components])
                for n in range(fields.shape[1]):
                    w.writerow([pipeline.fmt(coords[n, 0]), pipeline.fmt(coords[n, 1]),
                                *(pipeline.fmt(v) for v in fields[:, n])])
        else:
            for name, values in zip(model.components, fields):
                _print(f"{name}: max |.| = {np.abs(values).max():.6g}")
        return 0
    if args.command == "baseline-eval":
        ev, _ = pipeline.evaluate_workspace(cfg, exports=False)
        _print(f"POD-CSI query time {ev.baseline_time * 1e3:.3f} ms")
        for name in ev.names:
            _print(f"{name}: POD-CSI {100 * ev.mean[name][2]:.3f}%  projection {100 * ev.mean[name][0]:.3f}%")
        return 0
    if args.command == "report":
        _, text = pipeline.evaluate_workspace(cfg)
        sys.stdout.write(text)
        return 0
    raise AssertionError(args.command)


def _invalidate(ws, stage):
    manifest_path = ws.path("stages.json")
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        manifest.pop(stage, None)
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    sys.exit(main())
