"""Flat ``key = value`` run configs, validation and run manifests.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment. Each subcommand has its own schema below. Unknown keys, type
mismatches and violated constraints raise :class:`ConfigError`, which names
every offending key. All defaults are materialized into the parsed config so
that the manifest records exactly what ran.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

from . import __version__
from .io import atomic_write

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "VISCDA_OUTPUT_ROOT"
MU_DT_LIMIT = 0.5
REQUIRED = object()


class ConfigError(ValueError):
    """Invalid config; ``keys`` lists the offending keys."""

    def __init__(self, message: str, keys: tuple[str, ...] = ()):
        super().__init__(message)
        self.keys = tuple(keys)


def default_dt(n: int) -> float:
    return 0.005 if n <= 128 else 0.002


def _float(s: str) -> float:
    return float(s)


def _int(s: str) -> int:
    return int(s)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "none") else float(s)


def _opt_path(s: str) -> str | None:
    return None if s.strip().lower() in ("", "none") else s.strip()


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _str(s: str) -> str:
    return s.strip()


Schema = dict[str, tuple[Callable[[str], Any], Any]]

_COMMON: Schema = {
    "schema_version": (_int, SCHEMA_VERSION),
    "out_dir": (_opt_path, None),
}

_FORCING: Schema = {
    "n": (_int, 128),
    "seed": (_int, 0),
    "k_low": (_float, 9.0),
    "k_high": (_float, 11.0),
    "forcing_norm": (_float, 1.0),
    "forcing_file": (_opt_path, None),
}

SCHEMAS: dict[str, Schema] = {
    "reference": {
        **_COMMON, **_FORCING,
        "n": (_int, REQUIRED),
        "nu": (_float, REQUIRED),
        "t_end": (_float, REQUIRED),
        "dt": (_opt_float, None),
        "snapshot_interval": (_float, 1.0),
        "observation_cutoff": (_float, 1 / 16),
        "observation_interval": (_opt_float, None),
        "observation_start": (_float, 0.0),
        "stepper": (_str, "euler"),
    },
    "assimilate": {
        **_COMMON,
        "nu2": (_float, REQUIRED),
        "mu": (_float, 20.0),
        "h": (_float, 1 / 16),
        "dt": (_float, 0.005),
        "t_start": (_float, 20.0),
        "t_end": (_float, 30.0),
        "output_interval": (_float, 0.1),
        "max_obs_gap": (_float, 1.0),
        "stepper": (_str, "euler"),
    },
    "recover": {
        **_COMMON,
        "nu2_init": (_float, REQUIRED),
        "mu": (_float, 20.0),
        "dt": (_float, 0.005),
        "t_start": (_float, 20.0),
        "t_end": (_opt_float, None),
        "stepper": (_str, "euler"),
        "guard": (_float, 1e-3),
        "max_obs_gap": (_float, 1.0),
        "epsilon": (_float, 1e-12),
        "delta": (_float, 0.05),
        "check_interval": (_float, 0.1),
        "wait": (_float, 1.0),
        "window": (_float, 1.0),
        "nu1": (_opt_float, None),
    },
    "sensitivity": {
        **_COMMON, **_FORCING,
        "reference_dir": (_opt_path, None),
        "nu1": (_float, REQUIRED),
        "nu2_values": (_floats, ()),
        "nu2_rel_errors": (_floats, ()),
        "dt": (_float, 0.005),
        "t_start": (_float, 20.0),
        "t_end": (_float, 22.0),
        "mu": (_opt_float, 20.0),
        "h": (_float, 1 / 16),
        "nonlinear": (_bool, True),
        "source_time": (_str, "explicit"),
    },
    "spectrum": {
        **_COMMON,
        "reference_dir": (_str, REQUIRED),
        "t_from": (_float, 0.0),
        "t_to": (_opt_float, None),
    },
    "figure2": {
        **_COMMON,
        "reference_dir": (_str, REQUIRED),
        "nu1": (_opt_float, None),
        "nu2_values": (_floats, ()),
        "nu2_rel_errors": (_floats, (10.0, 1.0, 0.1, 0.01, 0.001, 0.0)),
        "mu": (_float, 20.0),
        "h": (_float, 1 / 16),
        "dt": (_float, 0.005),
        "t_start": (_float, 20.0),
        "t_end": (_float, 30.0),
        "output_interval": (_float, 0.1),
        "stepper": (_str, "euler"),
        "workers": (_int, 1),
    },
}
SCHEMAS["table1"] = {**SCHEMAS["figure2"], "t_eval": (_float, 24.0), "sweep_dir": (_opt_path, None)}


@dataclass(frozen=True)
class RunConfig:
    """Validated config for one subcommand with every default filled in."""

    command: str
    values: dict[str, Any]
    warnings: tuple[str, ...] = ()
    source: str | None = None

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, default=None) -> Any:
        return self.values.get(key, default)

    @property
    def schema_version(self) -> int:
        return self.values["schema_version"]

    @property
    def out_dir(self) -> Path:
        return Path(self.values["out_dir"])

    def canonical(self) -> str:
        """Stable JSON of the config without its output location."""
        values = {k: v for k, v in self.values.items() if k != "out_dir"}
        return json.dumps({"command": self.command, **values}, sort_keys=True, default=list)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def to_text(self) -> str:
        lines = [f"# {self.command}"]
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {'none' if v is None else v}")
        return "\n".join(lines) + "\n"


def read_pairs(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    bad = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if key in pairs:
            bad.append(key)
        pairs[key] = value.strip()
    if bad:
        raise ConfigError(f"duplicate keys: {', '.join(bad)}", tuple(bad))
    return pairs


def _multiple(values: dict, key: str, dt_key: str = "dt") -> str | None:
    x, dt = values[key], values[dt_key]
    k = round(x / dt)
    if k < 0 or abs(k * dt - x) > 1e-9 * max(abs(x), dt):
        return f"{key} = {x!r} is not an integer multiple of {dt_key} = {dt!r}"
    return None


def _check(command: str, v: dict[str, Any]) -> tuple[list[tuple[str, tuple[str, ...]]], list[str]]:
    """Constraint violations (message, keys) and warnings for resolved values."""
    errs: list[tuple[str, tuple[str, ...]]] = []
    warns: list[str] = []

    def positive(*keys):
        for k in keys:
            if k in v and v[k] is not None and not v[k] > 0:
                errs.append((f"{k} must be positive", (k,)))

    def multiple(key, dt_key="dt"):
        msg = _multiple(v, key, dt_key)
        if msg:
            errs.append((msg, (key, dt_key)))

    if v.get("schema_version") != SCHEMA_VERSION:
        errs.append((f"schema_version {v.get('schema_version')} unsupported (expected {SCHEMA_VERSION})",
                     ("schema_version",)))
    if "stepper" in v and v["stepper"] not in ("euler", "cnab2"):
        errs.append((f"stepper must be 'euler' or 'cnab2', got {v['stepper']!r}", ("stepper",)))
    if "n" in v and (v["n"] < 4 or v["n"] & (v["n"] - 1)):
        errs.append((f"n must be a power of two >= 4, got {v['n']}", ("n",)))
    if "k_low" in v and not 0 <= v["k_low"] < v["k_high"]:
        errs.append(("need 0 <= k_low < k_high", ("k_low", "k_high")))
    positive("nu", "nu2", "nu2_init", "nu1", "dt", "h", "observation_cutoff", "forcing_norm",
             "snapshot_interval", "observation_interval", "output_interval", "max_obs_gap", "guard",
             "epsilon", "check_interval", "wait", "window", "workers")
    if errs:
        return errs, warns

    if command == "reference":
        multiple("t_end")
        multiple("snapshot_interval")
        multiple("observation_interval")
        multiple("observation_start")
        if 1 / v["observation_cutoff"] > v["n"] // 2:
            errs.append(("1/observation_cutoff exceeds the resolved band n/2", ("observation_cutoff", "n")))
    if command in ("assimilate", "figure2", "table1"):
        if v["t_end"] < v["t_start"]:
            errs.append(("t_end precedes t_start", ("t_start", "t_end")))
        elif _multiple({"t_end - t_start": v["t_end"] - v["t_start"], "dt": v["dt"]}, "t_end - t_start"):
            errs.append(("t_end - t_start is not an integer multiple of dt", ("t_start", "t_end", "dt")))
        multiple("output_interval")
    if command == "table1" and not v["t_start"] <= v["t_eval"] <= v["t_end"]:
        errs.append(("t_eval must lie in [t_start, t_end]", ("t_eval",)))
    if command == "recover":
        if not 0 < v["delta"] < 1:
            errs.append(("delta must lie in (0, 1)", ("delta",)))
        for k in ("check_interval", "wait", "window"):
            multiple(k)
    if command == "sensitivity":
        if v["t_end"] <= v["t_start"]:
            errs.append(("t_end must exceed t_start", ("t_start", "t_end")))
        if v["nu2_values"] and v["nu2_rel_errors"]:
            errs.append(("give nu2_values or nu2_rel_errors, not both", ("nu2_values", "nu2_rel_errors")))
        elif not v["nu2_values"] and not v["nu2_rel_errors"]:
            v["nu2_rel_errors"] = (0.1, 0.05, 0.025, 0.0125)
        if v["source_time"] not in ("explicit", "implicit"):
            errs.append((f"source_time must be 'explicit' or 'implicit', got {v['source_time']!r}", ("source_time",)))
    if command in ("figure2", "table1") and v["nu2_values"] and v["nu2_rel_errors"] != SCHEMAS[command]["nu2_rel_errors"][1]:
        errs.append(("give nu2_values or nu2_rel_errors, not both", ("nu2_values", "nu2_rel_errors")))

    mu = v.get("mu")
    if mu is not None and "dt" in v and v["dt"] is not None and mu * v["dt"] > MU_DT_LIMIT:
        warns.append(f"mu*dt = {mu * v['dt']:g} exceeds {MU_DT_LIMIT}; explicit nudging may be unstable")
    h = v.get("h")
    nu = v.get("nu2") or v.get("nu2_init")
    if mu is not None and h is not None and nu is not None and mu * h * h > nu:
        warns.append(f"mu h^2 / nu2 = {mu * h * h / nu:.4g} > 1: sufficient synchronization condition not met")
    return errs, warns


def resolve(command: str, pairs: dict[str, str], source: str | None = None,
            overrides: dict[str, Any] | None = None) -> RunConfig:
    """Validate raw string pairs against the schema of ``command``."""
    if command not in SCHEMAS:
        raise ConfigError(f"no config schema for {command!r}")
    schema = SCHEMAS[command]
    unknown = sorted(set(pairs) - set(schema))
    if unknown:
        raise ConfigError(f"unknown keys for {command}: {', '.join(unknown)}", tuple(unknown))
    values: dict[str, Any] = {}
    bad = []
    for key, (conv, default) in schema.items():
        if key in pairs:
            try:
                values[key] = conv(pairs[key])
            except ValueError as exc:
                bad.append((key, str(exc)))
        elif default is REQUIRED:
            bad.append((key, "required key missing"))
        else:
            values[key] = default
    if bad:
        raise ConfigError("; ".join(f"{k}: {m}" for k, m in bad), tuple(k for k, _ in bad))
    for key, val in (overrides or {}).items():
        if key in schema and val is not None:
            values[key] = val

    if command == "reference":
        if values["dt"] is None:
            values["dt"] = default_dt(values["n"])
        if values["observation_interval"] is None:
            values["observation_interval"] = values["dt"]
    if values["out_dir"] is None:
        values["out_dir"] = command
    root = os.environ.get(OUTPUT_ROOT_ENV)
    out = Path(values["out_dir"])
    if root and not out.is_absolute():
        out = Path(root) / out
    values["out_dir"] = str(out.resolve())
    base = Path(source).parent if source else Path.cwd()
    for key in ("forcing_file", "reference_dir", "sweep_dir"):
        if values.get(key):
            values[key] = str((base / values[key]).resolve())

    errs, warns = _check(command, values)
    if errs:
        keys = tuple(dict.fromkeys(k for _, ks in errs for k in ks))
        raise ConfigError("; ".join(m for m, _ in errs), keys)
    return RunConfig(command, values, tuple(warns), source)


def parse_config(path, command: str, overrides: dict[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return resolve(command, read_pairs(text), str(path.resolve()), overrides)


@dataclass
class RunManifest:
    """Provenance of one run, written atomically as ``manifest.json`` when it ends."""

    config: RunConfig
    argv: list[str] = field(default_factory=list)
    inputs: dict[str, str] = field(default_factory=dict)
    forcing_sha256: str | None = None
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished: str | None = None
    exit_status: int | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "command": self.config.command,
            "schema_version": self.config.schema_version,
            "config": self.config.values,
            "config_sha256": self.config.digest(),
            "warnings": list(self.config.warnings),
            "inputs": self.inputs,
            "forcing_sha256": self.forcing_sha256,
            "code_version": __version__,
            "python": platform.python_version(),
            "argv": self.argv,
            "started": self.started,
            "finished": self.finished,
            "exit_status": self.exit_status,
            "notes": self.notes,
        }

    def finish(self, exit_status: int, directory: Path | None = None) -> Path:
        self.finished = datetime.now(timezone.utc).isoformat()
        self.exit_status = exit_status
        path = Path(directory or self.config.out_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write(path, (json.dumps(self.to_dict(), indent=2, sort_keys=True, default=list) + "\n").encode())
        return path


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def config_from_manifest(manifest: dict, out_dir: str | None = None) -> RunConfig:
    """Rebuild the resolved config of a past run, optionally redirecting its output."""
    values = dict(manifest["config"])
    for k, v in values.items():
        if isinstance(v, list):
            values[k] = tuple(v)
    if out_dir is not None:
        values["out_dir"] = str(Path(out_dir).resolve())
    errs, warns = _check(manifest["command"], values)
    if errs:
        raise ConfigError("; ".join(m for m, _ in errs))
    return RunConfig(manifest["command"], values, tuple(warns))
