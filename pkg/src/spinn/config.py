"""Run configuration: JSON document -> validated settings, with dotted-key overrides."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .adaptivity import AdaptiveConfig
from .collocation import NetConfig
from .net import TrainConfig
from .problems import BUILTIN_IDS, ProblemSpec, builtin

DEFAULTS = {
    "problem": "heat-source",
    "params": {},
    "basis": {},
    "stepping": {"stages": 4, "dt": 0.05, "t_end": 1.0, "strong_bc": False},
    "adaptive": {},
    "net": {"layers": 5, "hidden": 100, "lr": 5e-4, "max_epochs": 100000, "tol": 1e-12,
            "seed": 0, "warm_start": True},
    "inverse": {"sigma": 0.0, "lambda": 0.0, "theta_init": 1.0, "windows": 1, "lr": None},
    "fit": {"n": 400, "scale": 12.0, "loc": 0.0, "t_min": 0.0, "t_max": 1.0, "order": 9,
            "beta": 0.5, "lam": 0.0, "hidden": 10, "spectral_layers": 4, "direct_layers": 5,
            "modes": ["spectral", "direct"]},
    "table2": {"dim": 3, "cap": 9, "gammas": ["full", -1.0, 0.0, 0.5]},
    "sweep": {},
    "output": {"dir": "out", "format": "csv", "timing": False},
}

SWEEP_KEYS = {"dt", "stages", "lambda", "sigma", "seed"}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(item, "override must look like key=value")
    key, value = item.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = _parse_value(value)


def load_config(path: str | Path | None, overrides=()) -> dict:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be an object")
    cfg = _merge(DEFAULTS, raw)
    for item in overrides:
        apply_override(cfg, item)
    return cfg


# ---------------------------------------------------------------------------
# field checks
# ---------------------------------------------------------------------------

def _num(cfg, section, key, *, lo=None, hi=None, lo_open=False, hi_open=False, integer=False, allow_inf=False):
    name = f"{section}.{key}"
    v = cfg[section][key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(name, f"expected a number, got {v!r}")
    if integer and (not float(v).is_integer()):
        raise ConfigError(name, f"expected an integer, got {v!r}")
    if math.isnan(v) or (math.isinf(v) and not allow_inf):
        raise ConfigError(name, "must be finite")
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ConfigError(name, f"must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and (v > hi or (hi_open and v == hi)):
        raise ConfigError(name, f"must be {'<' if hi_open else '<='} {hi}")
    return int(v) if integer else float(v)


def _bool(cfg, section, key):
    v = cfg[section][key]
    if not isinstance(v, bool):
        raise ConfigError(f"{section}.{key}", f"expected true/false, got {v!r}")
    return v


def _known(cfg, section, allowed):
    extra = set(cfg[section]) - set(allowed)
    if extra:
        raise ConfigError(f"{section}.{sorted(extra)[0]}", "unknown field")


@dataclass
class RunConfig:
    problem: ProblemSpec
    order: int
    hyperbolicity: float | None
    stages: int
    dt: float
    t_end: float
    strong_bc: bool
    adaptive: AdaptiveConfig
    net: NetConfig
    inverse: dict
    fit: dict
    table2: dict
    sweep: dict
    out_dir: Path
    fmt: str
    timing: bool
    raw: dict


_ADAPTIVE_FIELDS = {f.name for f in fields(AdaptiveConfig)}


def _adaptive(cfg) -> AdaptiveConfig:
    sec = cfg["adaptive"]
    _known(cfg, "adaptive", _ADAPTIVE_FIELDS)
    kw = {}
    for k, v in sec.items():
        if k in ("scaling", "moving", "p_refine", "p_decrease"):
            kw[k] = _bool(cfg, "adaptive", k)
        elif k in ("max_scalings", "min_order"):
            kw[k] = _num(cfg, "adaptive", k, lo=1, integer=True)
        else:
            kw[k] = _num(cfg, "adaptive", k)
    checks = [
        ("q", lambda a: 0 < a.q < 1, "must lie in (0, 1)"),
        ("nu", lambda a: a.nu > 1, "must be > 1"),
        ("rho", lambda a: a.rho > 1, "must be > 1"),
        ("rho0", lambda a: a.rho0 > 1, "must be > 1"),
        ("gamma_ratio", lambda a: a.gamma_ratio >= 1, "must be >= 1"),
        ("d_min", lambda a: a.d_min > 0, "must be > 0"),
        ("d_max", lambda a: a.d_max >= a.d_min, "must be >= d_min"),
        ("move_threshold", lambda a: a.move_threshold > 1, "must be > 1"),
    ]
    probe = {f.name: getattr(AdaptiveConfig, f.name, None) for f in fields(AdaptiveConfig)}
    probe.update(kw)
    view = type("view", (), probe)
    for name, ok, msg in checks:
        if not ok(view):
            raise ConfigError(f"adaptive.{name}", msg)
    return AdaptiveConfig(**kw)


def _net(cfg) -> NetConfig:
    _known(cfg, "net", DEFAULTS["net"])
    layers = _num(cfg, "net", "layers", lo=0, integer=True)
    hidden = _num(cfg, "net", "hidden", lo=1, integer=True)
    lr = _num(cfg, "net", "lr", lo=0)
    max_epochs = _num(cfg, "net", "max_epochs", lo=1, integer=True)
    tol = _num(cfg, "net", "tol", lo=0, allow_inf=True)
    seed = _num(cfg, "net", "seed", lo=0, hi=2 ** 64 - 1, integer=True)
    warm = _bool(cfg, "net", "warm_start")
    return NetConfig(hidden, layers, warm, TrainConfig(lr, max_epochs, tol, seed))


def _problem(cfg) -> tuple[ProblemSpec, int, float | None]:
    pid = cfg["problem"]
    if pid not in BUILTIN_IDS:
        raise ConfigError("problem", f"unknown problem id {pid!r}; choose from {', '.join(BUILTIN_IDS)}")
    params = cfg["params"]
    if not isinstance(params, dict):
        raise ConfigError("params", "expected an object")
    for k, v in params.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"params.{k}", "expected a finite number")
    if "zeta" in params and params["zeta"] <= 0:
        raise ConfigError("params.zeta", "must be > 0")
    p = builtin(pid, **params)
    basis = cfg["basis"]
    _known(cfg, "basis", {"beta", "x_l", "order", "hyperbolicity"})
    bases = list(p.bases)
    for key in ("beta", "x_l"):
        if key in basis:
            vals = basis[key] if isinstance(basis[key], list) else [basis[key]]
            if len(vals) != len(bases):
                raise ConfigError(f"basis.{key}", f"expected {len(bases)} value(s)")
            for i, v in enumerate(vals):
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                    raise ConfigError(f"basis.{key}", f"entry {i} is not a finite number")
                if key == "beta" and v <= 0:
                    raise ConfigError("basis.beta", "must be > 0")
                bases[i] = bases[i].replace(**{key: float(v)})
    p.bases = tuple(bases)
    order = p.order
    if "order" in basis:
        order = _num(cfg, "basis", "order", lo=1, integer=True)
    gamma = None
    if "hyperbolicity" in basis:
        g = basis["hyperbolicity"]
        if g == "full":
            gamma = -math.inf
        else:
            gamma = _num(cfg, "basis", "hyperbolicity", hi=1, hi_open=True, allow_inf=True)
    return p, order, gamma


def validate(cfg: dict) -> RunConfig:
    """Check every field before any computation; raises ConfigError naming the field."""
    known_top = set(DEFAULTS)
    extra = set(cfg) - known_top
    if extra:
        raise ConfigError(sorted(extra)[0], "unknown section")
    for sec in known_top - {"problem"}:
        if not isinstance(cfg[sec], dict):
            raise ConfigError(sec, "expected an object")
    p, order, gamma = _problem(cfg)
    _known(cfg, "stepping", DEFAULTS["stepping"])
    stages = _num(cfg, "stepping", "stages", lo=1, hi=10, integer=True)
    dt = _num(cfg, "stepping", "dt", lo=0, lo_open=True)
    t_end = _num(cfg, "stepping", "t_end", lo=0, lo_open=True)
    m = round(t_end / dt)
    if m < 1 or abs(m * dt - t_end) > 1e-12 * max(1.0, t_end):
        raise ConfigError("stepping.t_end", f"{t_end} is not an integer multiple of dt={dt}")
    strong = _bool(cfg, "stepping", "strong_bc")
    adaptive = _adaptive(cfg)
    net = _net(cfg)

    _known(cfg, "inverse", DEFAULTS["inverse"])
    inv = {
        "sigma": _num(cfg, "inverse", "sigma", lo=0),
        "lambda": _num(cfg, "inverse", "lambda", lo=0),
        "theta_init": _num(cfg, "inverse", "theta_init"),
        "windows": _num(cfg, "inverse", "windows", lo=1, integer=True),
        # source recovery may need its own step size; None falls back to net.lr
        "lr": None if cfg["inverse"]["lr"] is None else _num(cfg, "inverse", "lr", lo=0, lo_open=True),
    }
    _known(cfg, "fit", DEFAULTS["fit"])
    fit = {
        "n": _num(cfg, "fit", "n", lo=4, integer=True),
        "scale": _num(cfg, "fit", "scale", lo=0, lo_open=True),
        "loc": _num(cfg, "fit", "loc"),
        "t_min": _num(cfg, "fit", "t_min"),
        "t_max": _num(cfg, "fit", "t_max"),
        "order": _num(cfg, "fit", "order", lo=1, integer=True),
        "beta": _num(cfg, "fit", "beta", lo=0, lo_open=True),
        "lam": _num(cfg, "fit", "lam", lo=0),
        "hidden": _num(cfg, "fit", "hidden", lo=1, integer=True),
        "spectral_layers": _num(cfg, "fit", "spectral_layers", lo=0, integer=True),
        "direct_layers": _num(cfg, "fit", "direct_layers", lo=0, integer=True),
    }
    if fit["t_max"] <= fit["t_min"]:
        raise ConfigError("fit.t_max", "must exceed fit.t_min")
    modes = cfg["fit"]["modes"]
    if not isinstance(modes, list) or not modes or any(m not in ("spectral", "direct") for m in modes):
        raise ConfigError("fit.modes", "expected a non-empty list drawn from 'spectral', 'direct'")
    fit["modes"] = list(modes)

    _known(cfg, "table2", DEFAULTS["table2"])
    t2 = {"dim": _num(cfg, "table2", "dim", lo=1, hi=6, integer=True),
          "cap": _num(cfg, "table2", "cap", lo=1, hi=64, integer=True)}
    gammas = cfg["table2"]["gammas"]
    if not isinstance(gammas, list) or not gammas:
        raise ConfigError("table2.gammas", "expected a non-empty list")
    for g in gammas:
        if g != "full" and (isinstance(g, bool) or not isinstance(g, (int, float)) or not g < 1):
            raise ConfigError("table2.gammas", f"entry {g!r} must be 'full' or a number < 1")
    t2["gammas"] = list(gammas)

    sweep = cfg["sweep"]
    for k, vals in sweep.items():
        if k not in SWEEP_KEYS:
            raise ConfigError(f"sweep.{k}", f"cannot sweep this field; choose from {sorted(SWEEP_KEYS)}")
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"sweep.{k}", "expected a non-empty list")
        for v in vals:
            probe = copy.deepcopy(cfg)
            probe["sweep"] = {}
            if k in ("dt", "stages"):
                probe["stepping"][k] = v
            elif k == "seed":
                probe["net"]["seed"] = v
            else:
                probe["inverse"][k] = v
            try:
                validate(probe)
            except ConfigError as exc:
                raise ConfigError(f"sweep.{k}", f"value {v!r} invalid ({exc})") from exc

    _known(cfg, "output", DEFAULTS["output"])
    fmt = cfg["output"]["format"]
    if fmt not in ("csv", "json"):
        raise ConfigError("output.format", "must be 'csv' or 'json'")
    if not isinstance(cfg["output"]["dir"], str) or not cfg["output"]["dir"]:
        raise ConfigError("output.dir", "expected a non-empty path")
    timing = _bool(cfg, "output", "timing")
    return RunConfig(p, order, gamma, stages, dt, t_end, strong, adaptive, net, inv, fit, t2,
                     dict(sweep), Path(cfg["output"]["dir"]), fmt, timing, cfg)
