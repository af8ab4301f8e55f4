"""Experiment configuration: JSON parsing, defaults and up-front validation.

Every module precondition that depends only on the configuration is checked
here, so a run never fails half way for a reason the config could have caught.
Errors carry the offending field path and, when it can be located, the line
in the source document.
"""
from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .disorder import LAWS
from .rng import DEFAULT_SEED, MASK64

SCHEMA_VERSION = 1
COMMANDS = ("kernel", "pure", "quench", "chaos", "bounds", "suite")
FLAVORS = ("srw_pinning", "srw_wetting", "stable_like")
GRID_KEYS = ("beta", "h", "eps", "N", "ell", "t", "q", "M", "eta")
INT_GRIDS = ("N", "ell", "t", "q")
TOP_KEYS = ("schema_version", "command", "model", "n_max", "law", "grids", "replicas", "seed",
            "threads", "outputs", "options")
MODEL_KEYS = ("flavor", "p", "alpha", "sv")
SV_KEYS = ("kind", "c", "kappa")
OUTPUT_KEYS = ("dir",)
OPTION_KEYS = {
    "kernel": ("method",),
    "pure": (),
    "quench": ("boundary",),
    "chaos": ("samples",),
    "bounds": ("finite_size", "intersection_horizon", "n_cap", "pz_cap"),
    "suite": (),
}
MAX_N_MAX = 1 << 22


class ConfigError(ValueError):
    """Validation failure with a field path and an optional source line."""

    def __init__(self, message: str, path: str = "", line: int | None = None):
        self.path = path
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if path:
            where.append(f"field '{path}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass
class ExperimentConfig:
    command: str
    model: dict
    n_max: int
    law: str
    grids: dict
    replicas: int
    seed: int
    threads: int | None
    outputs: dict
    options: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def resolved(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "command": self.command,
            "model": copy.deepcopy(self.model),
            "n_max": self.n_max,
            "law": self.law,
            "grids": copy.deepcopy(self.grids),
            "replicas": self.replicas,
            "seed": self.seed,
            "threads": self.threads,
            "outputs": copy.deepcopy(self.outputs),
            "options": copy.deepcopy(self.options),
        }


def _line_of(text: str | None, path: str) -> int | None:
    """Line of the first occurrence of the last named key of ``path``."""
    if not text or not path:
        return None
    keys = re.findall(r"[A-Za-z_][A-Za-z_0-9]*", path)
    if not keys:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(keys[-1]), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


class _Checker:
    def __init__(self, text: str | None):
        self.text = text

    def fail(self, path: str, msg: str):
        raise ConfigError(msg, path, _line_of(self.text, path))

    def keys(self, obj, allowed, path):
        if not isinstance(obj, dict):
            self.fail(path, "expected an object")
        for k in obj:
            if k not in allowed:
                self.fail(f"{path}.{k}" if path else k, f"unknown key (allowed: {', '.join(allowed)})")

    def number(self, v, path, lo=None, hi=None, lo_open=False, hi_open=False, integer=False):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(path, f"expected a number, got {json.dumps(v)}")
        if integer and not (isinstance(v, int) or float(v).is_integer()):
            self.fail(path, f"expected an integer, got {v}")
        if not math.isfinite(v):
            self.fail(path, "must be finite")
        if lo is not None and (v < lo or (lo_open and v == lo)):
            self.fail(path, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
        if hi is not None and (v > hi or (hi_open and v == hi)):
            self.fail(path, f"must be {'<' if hi_open else '<='} {hi}, got {v}")
        return int(v) if integer else float(v)


DEFAULT_MODEL = {"flavor": "srw_pinning", "p": 0.5}


def parse_config(obj: dict, text: str | None = None) -> ExperimentConfig:
    """Validate a decoded JSON document and fill defaults."""
    ck = _Checker(text)
    ck.keys(obj, TOP_KEYS, "")
    version = obj.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        ck.fail("schema_version", f"unsupported schema version {version!r} (expected {SCHEMA_VERSION})")
    command = obj.get("command")
    if command not in COMMANDS:
        ck.fail("command", f"expected one of {', '.join(COMMANDS)}, got {json.dumps(command)}")

    model = dict(DEFAULT_MODEL) if "model" not in obj else copy.deepcopy(obj["model"])
    ck.keys(model, MODEL_KEYS, "model")
    flavor = model.setdefault("flavor", "srw_pinning")
    if flavor not in FLAVORS:
        ck.fail("model.flavor", f"expected one of {', '.join(FLAVORS)}, got {json.dumps(flavor)}")
    if flavor.startswith("srw"):
        model["p"] = ck.number(model.get("p", 0.5), "model.p", 0.0, 1.0, True, True)
        for k in ("alpha", "sv"):
            if k in model:
                ck.fail(f"model.{k}", "only stable_like kernels take alpha and sv")
    else:
        if "p" in model:
            ck.fail("model.p", "stable_like kernels do not take p")
        model["alpha"] = ck.number(model.get("alpha", 0.5), "model.alpha", 0.0, 1.0, lo_open=True)
        sv = dict(model.get("sv", {"kind": "constant", "c": 1.0}))
        ck.keys(sv, SV_KEYS, "model.sv")
        sv.setdefault("kind", "constant")
        if sv["kind"] not in ("constant", "log_power"):
            ck.fail("model.sv.kind", "expected constant or log_power")
        sv["c"] = ck.number(sv.get("c", 1.0), "model.sv.c", 0.0, lo_open=True)
        sv["kappa"] = ck.number(sv.get("kappa", 0.0), "model.sv.kappa")
        model["sv"] = sv

    n_max = ck.number(obj.get("n_max", 4096), "n_max", 2, MAX_N_MAX, integer=True)
    law = obj.get("law", "gaussian")
    if law not in LAWS:
        ck.fail("law", f"expected one of {', '.join(LAWS)}, got {json.dumps(law)}")
    replicas = ck.number(obj.get("replicas", 1000), "replicas", 1, integer=True)
    seed = obj.get("seed", DEFAULT_SEED)
    seed = ck.number(seed, "seed", 0, MASK64, integer=True)
    threads = obj.get("threads")
    if threads is not None:
        threads = ck.number(threads, "threads", 1, integer=True)
    outputs = dict(obj.get("outputs", {}))
    ck.keys(outputs, OUTPUT_KEYS, "outputs")
    outputs.setdefault("dir", "pinlab_out")
    if not isinstance(outputs["dir"], str) or not outputs["dir"]:
        ck.fail("outputs.dir", "expected a nonempty path string")

    grids_in = obj.get("grids", {})
    ck.keys(grids_in, GRID_KEYS, "grids")
    grids = {}
    for k, vals in grids_in.items():
        path = f"grids.{k}"
        if not isinstance(vals, list) or not vals:
            ck.fail(path, "grids must be nonempty lists")
        grids[k] = [ck.number(v, f"{path}[{i}]", integer=k in INT_GRIDS) for i, v in enumerate(vals)]

    options = dict(obj.get("options", {}))
    ck.keys(options, OPTION_KEYS[command], "options")
    cfg = ExperimentConfig(command, model, n_max, law, grids, replicas, seed, threads, outputs, options)
    _check_command(ck, cfg)
    return cfg


def _need(ck: _Checker, cfg: ExperimentConfig, *keys):
    for k in keys:
        if k not in cfg.grids:
            ck.fail(f"grids.{k}", f"command '{cfg.command}' needs a '{k}' grid")


def _each(ck, cfg, key, **kw):
    for i, v in enumerate(cfg.grids.get(key, [])):
        ck.number(v, f"grids.{key}[{i}]", **kw)


def _check_command(ck: _Checker, cfg: ExperimentConfig):
    c, o = cfg.command, cfg.options
    if c == "kernel":
        if o.get("method", "auto") not in ("auto", "direct", "fft"):
            ck.fail("options.method", "expected auto, direct or fft")
    elif c == "pure":
        _need(ck, cfg, "h")
    elif c == "quench":
        _need(ck, cfg, "beta", "h", "N")
        _each(ck, cfg, "beta", lo=0.0)
        _each(ck, cfg, "N", lo=1, hi=cfg.n_max)
        if o.get("boundary", "constrained") not in ("constrained", "free"):
            ck.fail("options.boundary", "expected constrained or free")
        if cfg.replicas < 2:
            ck.fail("replicas", "Monte Carlo estimators need at least 2 replicas")
    elif c == "chaos":
        _need(ck, cfg, "N", "t", "q")
        _each(ck, cfg, "N", lo=1)
        _each(ck, cfg, "t", lo=1)
        _each(ck, cfg, "q", lo=0)
        top = max(cfg.grids["N"]) + max(cfg.grids["t"]) * max(cfg.grids["q"])
        if top > cfg.n_max:
            ck.fail("grids.N", f"n + t*q = {top} exceeds n_max = {cfg.n_max}")
        for i, ell in enumerate(cfg.grids.get("ell", [])):
            if ell > cfg.n_max or ell <= max(cfg.grids["t"]):
                ck.fail(f"grids.ell[{i}]", "need max(t) < ell <= n_max")
        samples = o.get("samples", cfg.replicas)
        ck.number(samples, "options.samples", 1, integer=True)
    elif c == "bounds":
        _need(ck, cfg, "beta", "eps")
        _each(ck, cfg, "beta", lo=0.0, lo_open=True)
        _each(ck, cfg, "eps", lo=0.0, hi=1.0, lo_open=True, hi_open=True)
        if "intersection_horizon" in o:
            ck.number(o["intersection_horizon"], "options.intersection_horizon", 2, cfg.n_max, integer=True)
        for k in ("n_cap", "pz_cap"):
            if k in o:
                ck.number(o[k], f"options.{k}", 1, cfg.n_max, integer=True)
        if not isinstance(o.get("finite_size", True), bool):
            ck.fail("options.finite_size", "expected true or false")
    for k in ("M",):
        _each(ck, cfg, k, lo=0.0)
    _each(ck, cfg, "eta", lo=0.0, hi=1.0, lo_open=True, hi_open=True)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from None
    if not isinstance(obj, dict):
        raise ConfigError("top level must be a JSON object", line=1)
    return parse_config(obj, text)
