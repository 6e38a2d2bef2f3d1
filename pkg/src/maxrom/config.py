"""Experiment configuration loaded from YAML.

Every section and key is known in advance; anything else is rejected so a
typo cannot silently fall back to a default.
"""

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import InvalidArgumentError
from .pod import is_perfect_square


class ConfigError(InvalidArgumentError):
    """Malformed or inconsistent experiment configuration."""


@dataclass(frozen=True)
class InclusionConfig:
    shape: str
    radius: float
    tag: int


@dataclass(frozen=True)
class MeshConfig:
    half_width: float = 2.6
    resolution: int = 16
    inclusions: tuple = (InclusionConfig("disk", 0.6, 1),)
    file: str = ""  # optional text mesh; overrides the generator


@dataclass(frozen=True)
class ParameterConfig:
    """One parameter dimension: a material property of one tag over a range."""

    tag: int
    property: str  # "eps" or "nu"
    lo: float
    hi: float
    count: int


@dataclass(frozen=True)
class FomConfig:
    order: int = 2
    omega: float = 3.6
    n_periods: int = 20
    steps_per_period: int = 0  # 0 picks the smallest stable multiple of sampling.n_t
    initial: str = "incident"  # or "zero"


@dataclass(frozen=True)
class SamplingConfig:
    n_t: int = 64


@dataclass(frozen=True)
class PodConfig:
    k: int = 4
    n_basis: int = 16


@dataclass(frozen=True)
class CaeConfig:
    code_size: int = 4
    channels: tuple = (4, 8, 8, 16)
    hidden: int = 64
    kernel: int = 5
    train_fraction: float = 0.8
    lr0: float = 1e-4
    decay: float = 0.05
    batch: int = 50
    max_epochs: int = 5000
    patience: int = 500
    seed: int = 0


@dataclass(frozen=True)
class CsiConfig:
    delta: float = 1e-4


@dataclass(frozen=True)
class TestConfig:
    params: tuple = ()
    times: tuple = ()  # empty means the training times


@dataclass(frozen=True)
class ExperimentConfig:
    mesh: MeshConfig = MeshConfig()
    materials: dict = field(default_factory=dict)  # tag -> (eps, nu) defaults
    parameters: tuple = (ParameterConfig(1, "eps", 1.0, 5.0, 11),)
    fom: FomConfig = FomConfig()
    sampling: SamplingConfig = SamplingConfig()
    pod: PodConfig = PodConfig()
    cae: CaeConfig = CaeConfig()
    csi: CsiConfig = CsiConfig()
    test: TestConfig = TestConfig()
    output: str = "maxrom_out"

    def __post_init__(self):
        validate(self)

    @property
    def parameter_spec(self):
        return [(p.lo, p.hi, p.count) for p in self.parameters]

    @property
    def period(self):
        return 2.0 * math.pi / self.fom.omega

    def digest(self):
        """SHA-256 of the canonical JSON form (output path excluded)."""
        data = to_dict(self)
        data.pop("output")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **sections):
        """Copy with whole sections or ``section__key`` entries replaced."""
        top = {}
        for key, value in sections.items():
            if "__" in key:
                sec, sub = key.split("__", 1)
                base = top.get(sec, getattr(self, sec))
                top[sec] = dataclasses.replace(base, **{sub: value})
            else:
                top[key] = value
        return dataclasses.replace(self, **top)


def validate(cfg):
    m = cfg.mesh
    if not m.file:
        if m.resolution < 2 or not m.half_width > 0:
            raise ConfigError("mesh needs resolution >= 2 and a positive half_width")
    for p in cfg.parameters:
        if p.property not in ("eps", "nu"):
            raise ConfigError(f"parameter property must be 'eps' or 'nu', got {p.property!r}")
        if p.count < 1 or not p.lo <= p.hi:
            raise ConfigError(f"bad parameter range {p.lo}..{p.hi} with {p.count} points")
    if not cfg.parameters:
        raise ConfigError("at least one parameter dimension is required")
    f = cfg.fom
    if f.order not in (1, 2):
        raise ConfigError(f"fom.order must be 1 or 2, got {f.order}")
    if not f.omega > 0 or f.n_periods < 1:
        raise ConfigError("fom.omega must be positive and fom.n_periods >= 1")
    if f.initial not in ("incident", "zero"):
        raise ConfigError(f"fom.initial must be 'incident' or 'zero', got {f.initial!r}")
    if f.steps_per_period and f.steps_per_period < cfg.sampling.n_t:
        raise ConfigError("fom.steps_per_period must be at least sampling.n_t")
    if cfg.sampling.n_t < 1:
        raise ConfigError("sampling.n_t must be positive")
    if not 1 <= cfg.pod.k <= cfg.sampling.n_t:
        raise ConfigError(f"pod.k must lie in [1, n_t], got {cfg.pod.k}")
    if not is_perfect_square(cfg.pod.n_basis):
        raise ConfigError(f"pod.n_basis = {cfg.pod.n_basis} is not a perfect square")
    c = cfg.cae
    if not 0 < c.train_fraction < 1 or c.code_size < 1 or c.batch < 1:
        raise ConfigError("cae needs 0 < train_fraction < 1, code_size >= 1 and batch >= 1")
    if not 0 < cfg.csi.delta < 1:
        raise ConfigError(f"csi.delta must lie in (0, 1), got {cfg.csi.delta}")
    dim = len(cfg.parameters)
    for mu in cfg.test.params:
        if len(mu) != dim:
            raise ConfigError(f"test parameter {mu} has {len(mu)} entries, expected {dim}")
        for v, p in zip(mu, cfg.parameters):
            if not p.lo <= v <= p.hi:
                raise ConfigError(f"test parameter {v} lies outside the training range [{p.lo}, {p.hi}]")


# ---------------------------------------------------------------------------
# dict conversion


def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, unknown))}")
    kwargs = {}
    for name, value in data.items():
        ftype = known[name].type
        if ftype is tuple and isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        elif ftype is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            value = float(value)
        elif ftype is int and isinstance(value, float) and value.is_integer():
            value = int(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(data):
    """Build an :class:`ExperimentConfig` from nested plain data."""
    data = dict(data or {})
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(map(str, unknown))}")
    kw = {}
    if "mesh" in data:
        mesh = dict(data["mesh"] or {})
        if "inclusions" in mesh:
            mesh["inclusions"] = tuple(
                _build(InclusionConfig, inc, "mesh.inclusions") if isinstance(inc, dict) else inc
                for inc in mesh["inclusions"]
            )
            incs = mesh.pop("inclusions")
            kw["mesh"] = dataclasses.replace(_build(MeshConfig, mesh, "mesh"), inclusions=incs)
        else:
            kw["mesh"] = _build(MeshConfig, mesh, "mesh")
    if "materials" in data:
        mats = {}
        for tag, value in (data["materials"] or {}).items():
            if not isinstance(value, dict) or set(value) - {"eps", "nu"}:
                raise ConfigError(f"materials.{tag}: expected keys eps and/or nu")
            mats[int(tag)] = (float(value.get("eps", 1.0)), float(value.get("nu", 1.0)))
        kw["materials"] = mats
    if "parameters" in data:
        kw["parameters"] = tuple(_build(ParameterConfig, p, "parameters") for p in data["parameters"])
    for name, cls in (
        ("fom", FomConfig),
        ("sampling", SamplingConfig),
        ("pod", PodConfig),
        ("cae", CaeConfig),
        ("csi", CsiConfig),
        ("test", TestConfig),
    ):
        if name in data:
            kw[name] = _build(cls, data[name], name)
    if "output" in data:
        kw["output"] = str(data["output"])
    return ExperimentConfig(**kw)


def to_dict(cfg):
    """Plain nested data suitable for YAML or JSON."""

    def plain(v):
        if dataclasses.is_dataclass(v):
            return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (tuple, list)):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {str(k): plain(x) for k, x in sorted(v.items())}
        if isinstance(v, np.generic):
            return v.item()
        return v

    out = plain(cfg)
    out["materials"] = {str(t): {"eps": e, "nu": n} for t, (e, n) in sorted(cfg.materials.items())}
    return out


def load_config(path):
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(data)


def config_text(cfg):
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def dump_config(cfg, path):
    Path(path).write_text(config_text(cfg))
