"""Plain-text run configuration.

A config file holds ``key = value`` lines, ``#`` comments and optional
``[section]`` headers. Keys before any header, or under ``[model]``, are
:class:`ModelParams` fields; ``[run]`` holds the output directory, base seed
and worker count; every other section holds the options of the subcommand
with that name. Values are booleans (``true``/``false``), numbers,
comma-separated lists or bare strings.

Settings are resolved as command-line flags over file over defaults.
"""
from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources

from .model import ModelDomainError, ModelParams

MODEL_SECTION = "model"
RUN_SECTION = "run"

RUN_DEFAULTS = {"outdir": "out", "base_seed": 0, "jobs": 1}

# Subcommand options and their defaults. The type of each default is the
# type a value must parse to; ``None`` marks an optional list.
COMMAND_DEFAULTS: dict[str, dict] = {
    "simulate": {
        "system": "reduced", "t_end": 100.0, "x0": None, "rel_tol": 1e-9, "abs_tol": 1e-12,
        "n_samples": 1001, "dt": 1e-2, "record_every": 1, "seed_index": 0,
    },
    "nullclines": {
        "total_min": 1e-3, "total_max": 20.0, "n_total": 400, "grid": 400,
    },
    "diagram": {
        "kind": "eq1d", "free": "K_c", "range": [0.2, 8.0], "free2": "tau",
        "range2": [0.01, 500.0], "with_cycles": True, "segments": 8,
        "cycle_seconds": 120.0, "fold_slice": 20.0,
    },
    "regime-grid": {
        "p1": "tau", "p1_values": [0.01, 60.0, 7], "p2": "K_c", "p2_values": [0.5, 6.0, 12],
        "t_transient": 3000.0, "t_observe": 1000.0,
    },
    "sr": {
        "sigma_min": 1e-4, "sigma_max": 0.1, "n_sigma": 13, "sigmas": None, "T": 3000.0,
        "n_seeds": 10, "dt": 1e-2, "record_every": 10, "transient_frac": 0.2,
    },
    "periods": {
        "free": "K_c", "values": [2.75], "sigma": 0.01, "n_traj": 50, "T": 3000.0,
        "dt": 1e-2, "thresholds": "auto",
    },
    "calibrate": {
        "full_scan": False,
    },
}

CHOICES = {
    ("simulate", "system"): ("reduced", "full"),
    ("diagram", "kind"): ("eq1d", "hopf2d", "cyclefold2d"),
}

_PARAM_TYPES = {"use_piecewise_fsca": bool}


class ConfigError(ValueError):
    """Invalid configuration; the message carries ``file:line`` when known."""


def _where(source, lineno) -> str:
    if source is None:
        return ""
    return f"{source}:{lineno}: " if lineno else f"{source}: "


def parse_value(text: str):
    """Literal value: bool, int, float, comma list, or the stripped string."""
    s = text.strip()
    if "," in s:
        return [parse_value(part) for part in s.split(",") if part.strip()]
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "'\"":
        return s[1:-1]
    return s


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(format_value(x) for x in v) + ("," if len(v) == 1 else "")
    return str(v)


@dataclass
class Entry:
    value: object
    source: str | None = None
    lineno: int | None = None


def parse_text(text: str, source: str | None = None) -> dict[str, dict[str, Entry]]:
    """Sections of ``key -> Entry``; keys before any header go to ``model``."""
    out: dict[str, dict[str, Entry]] = {}
    section = MODEL_SECTION
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"{_where(source, lineno)}malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{_where(source, lineno)}expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{_where(source, lineno)}empty key")
        sec = out.setdefault(section, {})
        if key in sec:
            raise ConfigError(f"{_where(source, lineno)}duplicate key {key!r} "
                              f"(first set on line {sec[key].lineno})")
        sec[key] = Entry(parse_value(val), source, lineno)
    return out


def read_file(path) -> dict[str, dict[str, Entry]]:
    """Parse a config file, or the ``config`` object of an emitted metadata JSON."""
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    if path.endswith(".json"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
        cfg = doc.get("config", doc) if isinstance(doc, dict) else None
        if not isinstance(cfg, dict):
            raise ConfigError(f"{path}: no 'config' object")
        return {sec: {k: Entry(v, path, None) for k, v in vals.items()}
                for sec, vals in cfg.items()}
    return parse_text(text, path)


def default_config_text() -> str:
    return resources.files(__package__).joinpath("data/default.conf").read_text("utf-8")


def default_params() -> ModelParams:
    """Model parameters of the shipped default config file."""
    sections = parse_text(default_config_text(), "default.conf")
    return _build_params(sections.get(MODEL_SECTION, {}), ModelParams())


def _coerce(key, entry: Entry, default, section):
    v = entry.value
    where = _where(entry.source, entry.lineno)
    if isinstance(default, bool):
        if not isinstance(v, bool):
            raise ConfigError(f"{where}[{section}] {key} must be true or false, got {v!r}")
        return v
    if isinstance(default, int):
        if isinstance(v, bool) or not isinstance(v, int):
            if isinstance(v, float) and v.is_integer():
                return int(v)
            raise ConfigError(f"{where}[{section}] {key} must be an integer, got {v!r}")
        return v
    if isinstance(default, float):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{where}[{section}] {key} must be a number, got {v!r}")
        if not math.isfinite(v):
            raise ConfigError(f"{where}[{section}] {key} must be finite")
        return float(v)
    if isinstance(default, list) or default is None:
        if v is None:
            return None
        if not isinstance(v, list):
            v = [v]
        if any(isinstance(x, (bool, str)) or x is None for x in v):
            raise ConfigError(f"{where}[{section}] {key} must be a list of numbers, got {v!r}")
        return [float(x) for x in v]
    if isinstance(default, str):
        if isinstance(v, list):
            # thresholds and similar accept either a keyword or a number pair
            return [float(x) for x in v]
        v = format_value(v) if not isinstance(v, str) else v
        choices = CHOICES.get((section, key))
        if choices and v not in choices:
            raise ConfigError(f"{where}[{section}] {key} must be one of {', '.join(choices)}, "
                              f"got {v!r}")
        return v
    return v


def _build_params(entries: dict[str, Entry], base: ModelParams) -> ModelParams:
    values = base.to_dict()
    for key, entry in entries.items():
        if key not in values:
            raise ConfigError(f"{_where(entry.source, entry.lineno)}unknown model parameter "
                              f"{key!r}")
        values[key] = _coerce(key, entry, _PARAM_TYPES.get(key, 0.0), MODEL_SECTION)
    try:
        return ModelParams(**values)
    except ModelDomainError as exc:
        bad = [e for k, e in entries.items() if k in str(exc)]
        where = _where(bad[0].source, bad[0].lineno) if bad else ""
        raise ConfigError(f"{where}{exc}") from exc


@dataclass
class RunConfig:
    command: str
    params: ModelParams
    options: dict = field(default_factory=dict)
    outdir: str = "out"
    base_seed: int = 0
    jobs: int = 1

    def to_dict(self) -> dict:
        """Resolved config in the layout read back by :func:`read_file`."""
        return {MODEL_SECTION: self.params.to_dict(),
                RUN_SECTION: {"outdir": self.outdir, "base_seed": self.base_seed,
                              "jobs": self.jobs},
                self.command: copy.deepcopy(self.options)}

    def to_text(self) -> str:
        lines = []
        for sec, vals in self.to_dict().items():
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {format_value(v)}" for k, v in vals.items())
            lines.append("")
        return "\n".join(lines)


def resolve(command: str, file_sections: dict | None = None, overrides: dict | None = None
            ) -> RunConfig:
    """Merge defaults, file sections and flag overrides for ``command``.

    ``overrides`` uses the same ``section -> key -> value`` layout as the
    file; plain values are wrapped as flag entries.
    """
    if command not in COMMAND_DEFAULTS:
        raise ConfigError(f"unknown command {command!r}")
    merged: dict[str, dict[str, Entry]] = {}
    for sections in (file_sections or {}, overrides or {}):
        for sec, vals in sections.items():
            dst = merged.setdefault(sec, {})
            for k, v in vals.items():
                dst[k] = v if isinstance(v, Entry) else Entry(v, "command line")
    for sec, vals in merged.items():
        if sec in (MODEL_SECTION, RUN_SECTION) or sec in COMMAND_DEFAULTS:
            continue
        first = next(iter(vals.values()))
        raise ConfigError(f"{_where(first.source, first.lineno)}unknown section [{sec}]")
    params = _build_params(merged.get(MODEL_SECTION, {}), default_params())
    run = dict(RUN_DEFAULTS)
    for k, e in merged.get(RUN_SECTION, {}).items():
        if k not in RUN_DEFAULTS:
            raise ConfigError(f"{_where(e.source, e.lineno)}unknown key {k!r} in [run]")
        run[k] = _coerce(k, e, RUN_DEFAULTS[k], RUN_SECTION)
    if run["jobs"] < 0:
        raise ConfigError("[run] jobs must be >= 0")
    opts = copy.deepcopy(COMMAND_DEFAULTS[command])
    for k, e in merged.get(command, {}).items():
        if k not in opts:
            raise ConfigError(f"{_where(e.source, e.lineno)}unknown key {k!r} in [{command}]")
        opts[k] = _coerce(k, e, COMMAND_DEFAULTS[command][k], command)
    # sections of other subcommands are allowed (one file can serve several commands)
    return RunConfig(command, params, opts, str(run["outdir"]), int(run["base_seed"]),
                     int(run["jobs"]))
