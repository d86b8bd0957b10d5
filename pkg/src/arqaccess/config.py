"""Experiment configuration: JSON with a defaults layer and dotted-path overrides."""

from __future__ import annotations

import copy
import inspect
import json
import math
from typing import Any

from .channel import PRESETS, ChannelModel
from .dp import SolverParams
from .errors import ArqAccessError

MODEL_KEYS = {name: set(inspect.signature(fn).parameters) for name, fn in PRESETS.items()}
MODEL_KEYS["general"] = {"transitions", "silent_ack", "transmit_ack", "r_p", "labels"}

POLICY_KINDS = ("dp", "greedy", "mpolicy", "genie", "always_listen", "always_transmit")

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "model": {"preset": "erasure", "p_ee": 0.99, "p_ne": 0.01, "r_p": 1.0},
    "model2": None,
    "solver": {
        "w": 0.6,
        "alpha": 0.999,
        "r_s": 1.0,
        "grid_resolution": None,
        "tolerance": 1e-10,
        "max_iterations": 1_000_000,
    },
    "sim": {"horizon": 1_000_000, "replications": 16, "burn_in": None, "init": "stationary", "trace": False},
    "policy": {"kind": "dp", "M": None, "file": None},
    "policies": ["dp", "greedy", "genie"],
    "w_grid": [round(0.1 * i, 10) for i in range(11)],
    "M_list": list(range(0, 101)) + ["inf"],
    "training": {
        "length": 1000,
        "lengths": [30, 100, 300, 1000, 3000, 10000],
        "transmit_length": 1000,
        "seeds": 8,
        "n_starts": 4,
        "tol": 1e-8,
        "max_iter": 500,
        "phase2": "transmit_only",
        "trace_file": None,
        "transmit_trace_file": None,
    },
    "output": {"dir": "out"},
}

class ConfigError(ArqAccessError, ValueError):
    """Invalid configuration; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        here = f"{path}{key}"
        if key not in base:
            raise ConfigError(here, "unknown field")
        if key in ("model", "model2"):
            # a model block replaces the default one wholesale
            out[key] = copy.deepcopy(val)
        elif isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val, here + ".")
        elif isinstance(base[key], dict):
            raise ConfigError(here, "expected an object")
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> dict:
    """Apply ``a.b.c=value``; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(assignment, "override must look like key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    nested: Any = parse_value(raw)
    for p in reversed(parts):
        nested = {p: nested}
    if parts[0] in ("model", "model2") and len(parts) > 1:
        # a single model parameter edits the current model block
        block = copy.deepcopy(cfg.get(parts[0]) or {})
        cur = block
        for p in parts[1:-1]:
            cur = cur.setdefault(p, {})
        cur[parts[-1]] = parse_value(raw)
        nested = {parts[0]: block}
    return _merge(cfg, nested)


def resolve(user: dict | None = None, overrides: list[str] = (), layers: list[dict] = ()) -> dict:
    """Defaults, then extra layers (e.g. figure presets), then the user file, then ``--set`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    for layer in layers:
        cfg = _merge(cfg, layer)
    if user is not None:
        if not isinstance(user, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        cfg = _merge(cfg, user)
    for item in overrides:
        cfg = apply_override(cfg, item)
    validate(cfg)
    return cfg


def load(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _number(cfg: dict, path: str, *, lo=None, hi=None, integer=False, allow_none=False):
    cur: Any = cfg
    for p in path.split("."):
        cur = cur[p]
    if cur is None and allow_none:
        return
    ok = isinstance(cur, (int, float)) and not isinstance(cur, bool)
    if integer:
        ok = ok and float(cur).is_integer()
    if not ok or not math.isfinite(cur):
        raise ConfigError(path, f"expected {'an integer' if integer else 'a number'}, got {cur!r}")
    if lo is not None and cur < lo:
        raise ConfigError(path, f"must be >= {lo}")
    if hi is not None and cur > hi:
        raise ConfigError(path, f"must be <= {hi}")


def _check_model(block, path: str):
    if block is None:
        return
    if not isinstance(block, dict):
        raise ConfigError(path, "expected an object")
    preset = block.get("preset")
    if preset not in MODEL_KEYS:
        raise ConfigError(f"{path}.preset", f"expected one of {sorted(MODEL_KEYS)}, got {preset!r}")
    for key in block:
        if key != "preset" and key not in MODEL_KEYS[preset]:
            raise ConfigError(f"{path}.{key}", f"unknown field for preset {preset!r}")
    try:
        build_model(block)
    except (ArqAccessError, TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def validate(cfg: dict) -> None:
    _number(cfg, "seed", lo=0, integer=True)
    _check_model(cfg["model"], "model")
    if cfg["model"] is None:
        raise ConfigError("model", "a model is required")
    _check_model(cfg["model2"], "model2")
    _number(cfg, "solver.w", lo=0, hi=1)
    _number(cfg, "solver.alpha", lo=0)
    if not cfg["solver"]["alpha"] < 1:
        raise ConfigError("solver.alpha", "must be < 1")
    _number(cfg, "solver.r_s", lo=0)
    _number(cfg, "solver.grid_resolution", lo=2, integer=True, allow_none=True)
    _number(cfg, "solver.tolerance", lo=0)
    _number(cfg, "solver.max_iterations", lo=1, integer=True)
    _number(cfg, "sim.horizon", lo=1, integer=True)
    _number(cfg, "sim.replications", lo=1, integer=True)
    _number(cfg, "sim.burn_in", lo=0, integer=True, allow_none=True)
    if cfg["sim"]["burn_in"] is not None and cfg["sim"]["burn_in"] >= cfg["sim"]["horizon"]:
        raise ConfigError("sim.burn_in", "must be smaller than sim.horizon")
    if cfg["sim"]["init"] not in ("stationary", "random"):
        raise ConfigError("sim.init", "expected 'stationary' or 'random'")
    if not isinstance(cfg["sim"]["trace"], bool):
        raise ConfigError("sim.trace", "expected true or false")
    if cfg["policy"]["kind"] not in POLICY_KINDS:
        raise ConfigError("policy.kind", f"expected one of {list(POLICY_KINDS)}")
    m = cfg["policy"]["M"]
    if m is not None and m != "inf":
        _number(cfg, "policy.M", lo=0, integer=True)
    if not isinstance(cfg["policies"], list) or not cfg["policies"]:
        raise ConfigError("policies", "expected a nonempty list")
    for i, k in enumerate(cfg["policies"]):
        if k not in POLICY_KINDS:
            raise ConfigError(f"policies[{i}]", f"expected one of {list(POLICY_KINDS)}")
    if not isinstance(cfg["w_grid"], list) or not cfg["w_grid"]:
        raise ConfigError("w_grid", "expected a nonempty list")
    for i, w in enumerate(cfg["w_grid"]):
        if isinstance(w, bool) or not isinstance(w, (int, float)) or not 0 <= w <= 1:
            raise ConfigError(f"w_grid[{i}]", "weights must be numbers in [0, 1]")
    if not isinstance(cfg["M_list"], list) or not cfg["M_list"]:
        raise ConfigError("M_list", "expected a nonempty list")
    for i, m in enumerate(cfg["M_list"]):
        if m != "inf" and (isinstance(m, bool) or not isinstance(m, int) or m < 0):
            raise ConfigError(f"M_list[{i}]", "expected a non-negative integer or 'inf'")
    tr = cfg["training"]
    for key in ("length", "transmit_length"):
        _number(cfg, f"training.{key}", lo=2, integer=True)
    for i, n in enumerate(tr["lengths"]):
        if isinstance(n, bool) or not isinstance(n, int) or n < 2:
            raise ConfigError(f"training.lengths[{i}]", "expected an integer >= 2")
    _number(cfg, "training.seeds", lo=1, integer=True)
    _number(cfg, "training.n_starts", lo=1, integer=True)
    _number(cfg, "training.tol", lo=0)
    _number(cfg, "training.max_iter", lo=1, integer=True)
    if tr["phase2"] not in ("transmit_only", "joint"):
        raise ConfigError("training.phase2", "expected 'transmit_only' or 'joint'")
    if not isinstance(cfg["output"]["dir"], str):
        raise ConfigError("output.dir", "expected a path string")


def build_model(block: dict) -> ChannelModel:
    return ChannelModel.from_dict(block)


def solver_params(cfg: dict, w: float | None = None) -> SolverParams:
    s = cfg["solver"]
    return SolverParams(
        w=float(s["w"] if w is None else w),
        alpha=float(s["alpha"]),
        r_s=float(s["r_s"]),
        grid_resolution=s["grid_resolution"],
        tolerance=float(s["tolerance"]),
        max_iterations=int(s["max_iterations"]),
    )


def parse_m(value) -> float:
    return math.inf if value == "inf" else int(value)


def dumps(cfg: dict) -> str:
    """Compact, key-sorted JSON used for provenance."""
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))
