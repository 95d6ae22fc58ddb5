"""Experiment configuration: one JSON document with a section per subcommand.

``load_config`` validates against :data:`SCHEMA` and reports every problem
with the line it sits on, e.g. ``config.json:7: train.lr: -1 is less than the
minimum of 0``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import jsonschema
from json_source_map import calculate as source_map

from .errors import ConfigError
from .precoders import PRECODER_NAMES

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_nonneg_int = {"type": "integer", "minimum": 0}
_precoders = {"type": "array", "items": {"enum": list(PRECODER_NAMES)}, "minItems": 1}
_snr_list = {"oneOf": [{"type": "array", "items": _num, "minItems": 1},
                       {"type": "string", "pattern": r"^-?[0-9.]+\.\.-?[0-9.]+:[0-9.]+$"}]}


def _section(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _section({
    "seed": _nonneg_int,
    "output_dir": {"type": "string", "minLength": 1},
    "system": _section({"M": _posint, "K": _posint, "P_T": _pos, "snr_db": _num}),
    "pa": _section({
        "kind": {"enum": ["poly", "rapp", "softlimiter", "linear"]},
        "ibo_db": _num, "p_in": _pos, "p_sat": _pos, "order": {"type": "integer", "minimum": 3},
        "fit": {"type": "boolean"},
        "coeffs": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}},
        "S": _pos, "q": _pos, "A": _num, "B": _num,
    }, required=("kind",)),
    "dataset": _section({
        "path": {"type": "string", "minLength": 1},
        "n_train": _posint, "n_val": _posint, "n_test": _posint,
        "distribution": {"enum": ["rayleigh", "los"]},
    }, required=("path",)),
    "gnn": _section({
        "layers": {"type": "integer", "minimum": 2}, "hidden": _posint, "include_self": {"type": "boolean"},
        "snr_feature": {"type": "boolean"}, "snr_scale": {"enum": ["db", "linear"]}, "snr_max_db": _pos,
    }),
    "train": _section({
        "batch_size": _posint, "lr": _pos, "epochs": _nonneg_int,
        "plateau_factor": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "plateau_patience": _posint, "early_stop": _posint,
        "snr_db": {"type": ["number", "null"]}, "seed": _nonneg_int,
        "time_budget_s": _pos, "checkpoint": {"type": "string", "minLength": 1},
    }),
    "eval": _section({"precoders": _precoders, "snr_db": _snr_list, "checkpoint": {"type": "string"},
                      "n_test": _posint}),
    "dab": _section({"restarts": _posint, "iterations": _posint,
                     "step": {"enum": ["backtracking", "decaying", "fixed"]},
                     "mu0": _pos, "fd": {"type": "boolean"}, "fd_delta": _pos, "n_channels": _posint}),
    "sweep_ibo": _section({"ibo_db": {"type": "array", "items": _num, "minItems": 1},
                           "precoders": _precoders, "retrain": {"type": "boolean"}, "n_test": _posint}),
    "radiation": _section({"angles_deg": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 180},
                                          "minItems": 1},
                           "precoders": _precoders, "theta_step_deg": _pos,
                           "method": {"enum": ["analytic", "mc"]}, "checkpoint": {"type": "string"}}),
    "power": _section({"ibo_db": {"type": "array", "items": _num, "minItems": 1},
                       "precoders": _precoders, "n_test": _posint, "checkpoint": {"type": "string"}}),
    "complexity": _section({"M": _posint, "K": _posint, "d": _posint, "L": {"type": "integer", "minimum": 2},
                            "P": _posint, "I": _posint}),
})


@dataclass
class SystemCfg:
    M: int = 16
    K: int = 2
    P_T: float | None = None  # defaults to M: unit average power per antenna
    snr_db: float = 30.0

    @property
    def p_total(self) -> float:
        return float(self.M if self.P_T is None else self.P_T)


@dataclass
class DatasetCfg:
    path: str = "data/channels"
    n_train: int = 20_000
    n_val: int = 2_000
    n_test: int = 10_000
    distribution: str = "rayleigh"


@dataclass
class GnnCfg:
    layers: int = 8
    hidden: int = 128
    include_self: bool = True
    snr_feature: bool = False
    snr_scale: str = "db"
    snr_max_db: float = 30.0


@dataclass
class TrainCfg:
    batch_size: int = 64
    lr: float = 5e-3
    epochs: int = 50
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    early_stop: int = 8
    snr_db: float | None = 30.0
    seed: int = 0
    time_budget_s: float | None = None
    checkpoint: str = "gnn.ckpt.json"


@dataclass
class EvalCfg:
    precoders: list = field(default_factory=lambda: ["mrt", "zf", "gnn"])
    snr_db: object = "-10..30:5"
    checkpoint: str | None = None
    n_test: int | None = None


@dataclass
class DabCfg:
    restarts: int = 50
    iterations: int = 1000
    step: str = "backtracking"
    mu0: float = 1e-2
    fd: bool = False
    fd_delta: float = 1e-5
    n_channels: int = 10


@dataclass
class SweepIboCfg:
    ibo_db: list = field(default_factory=lambda: [-9.0, -7.5, -6.0, -4.5, -3.0, -1.5, 0.0])
    precoders: list = field(default_factory=lambda: ["zf", "gnn"])
    retrain: bool = False
    n_test: int | None = None


@dataclass
class RadiationCfg:
    angles_deg: list = field(default_factory=lambda: [60.0, 120.0])
    precoders: list = field(default_factory=lambda: ["zf", "gnn"])
    theta_step_deg: float = 1.0
    method: str = "analytic"
    checkpoint: str | None = None


@dataclass
class PowerCfg:
    ibo_db: list = field(default_factory=lambda: [-9.0, -7.5, -6.0, -4.5, -3.0, -1.5, 0.0])
    precoders: list = field(default_factory=lambda: ["zf", "gnn"])
    n_test: int = 200
    checkpoint: str | None = None


@dataclass
class ComplexityCfg:
    M: int = 64
    K: int = 4
    d: int = 128
    L: int = 8
    P: int = 50
    I: int = 1000


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    system: SystemCfg = field(default_factory=SystemCfg)
    pa: dict = field(default_factory=lambda: {"kind": "poly", "ibo_db": -3.0, "order": 11})
    dataset: DatasetCfg | None = None
    gnn: GnnCfg = field(default_factory=GnnCfg)
    train: TrainCfg = field(default_factory=TrainCfg)
    eval: EvalCfg = field(default_factory=EvalCfg)
    dab: DabCfg = field(default_factory=DabCfg)
    sweep_ibo: SweepIboCfg = field(default_factory=SweepIboCfg)
    radiation: RadiationCfg = field(default_factory=RadiationCfg)
    power: PowerCfg = field(default_factory=PowerCfg)
    complexity: ComplexityCfg = field(default_factory=ComplexityCfg)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


_SECTIONS = {f.name: f for f in fields(ExperimentConfig)}
_SECTION_TYPES = {
    "system": SystemCfg, "dataset": DatasetCfg, "gnn": GnnCfg, "train": TrainCfg, "eval": EvalCfg,
    "dab": DabCfg, "sweep_ibo": SweepIboCfg, "radiation": RadiationCfg, "power": PowerCfg,
    "complexity": ComplexityCfg,
}


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def _line_of(smap: dict, path) -> int | None:
    path = list(path)
    while True:
        entry = smap.get(_pointer(path))
        if entry is not None:
            loc = entry.key_start or entry.value_start
            return loc.line + 1
        if not path:
            return None
        path.pop()


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from an already validated mapping."""
    kw = {}
    for name, value in doc.items():
        cls = _SECTION_TYPES.get(name)
        kw[name] = cls(**value) if cls is not None else value
    return ExperimentConfig(**kw)


def validate(doc, text: str | None = None, source: str = "<config>") -> None:
    """Raise ConfigError listing every schema violation, one per line."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if not errors:
        return
    smap = source_map(text) if text is not None else {}
    msgs = []
    for err in errors:
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        line = _line_of(smap, err.absolute_path) if smap else None
        prefix = f"{source}:{line}" if line is not None else source
        msgs.append(f"{prefix}: {where}: {err.message}")
    raise ConfigError("\n".join(msgs))


def loads_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    validate(doc, text, source)
    return config_from_dict(doc)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return loads_config(text, str(path))


def parse_snr_range(spec) -> list:
    """``[a, b, ...]``, ``"a,b,..."`` or ``"lo..hi:step"`` (inclusive) to a list of floats."""
    if isinstance(spec, (list, tuple)):
        return [float(v) for v in spec]
    if ".." not in str(spec):
        try:
            return [float(v) for v in str(spec).split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad SNR list {spec!r}") from exc
    try:
        rng, step = str(spec).split(":")
        lo, hi = rng.split("..")
        lo, hi, step = float(lo), float(hi), float(step)
    except ValueError as exc:
        raise ConfigError(f"bad SNR range {spec!r}; expected 'lo..hi:step'") from exc
    if step <= 0 or hi < lo:
        raise ConfigError(f"bad SNR range {spec!r}; need lo <= hi and step > 0")
    n = int(round((hi - lo) / step))
    return [lo + i * step for i in range(n + 1)]
