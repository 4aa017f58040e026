"""Run configuration shared by every command."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .. import faults

COMMANDS = ("verify", "bench", "model", "diag")
FORMATS = ("json", "csv")

# per-command defaults for the sizes block
DEFAULT_SIZES = {
    "verify": {"N": [64], "C": 32, "d": 16, "H": 2},
    "bench": {"N": [1024, 2048, 4096, 8192], "C": 64, "d": 16, "H": 1},
    "diag": {"N": [64], "C": 32, "d": 16, "H": 2},
    "model": {"N": [], "C": 0, "d": 0, "H": 1},
}
DEFAULT_PRESET = {"verify": None, "bench": None, "diag": "linear-attention", "model": "T"}


class ConfigError(ValueError):
    """Bad configuration; the CLI maps it to the usage-error exit code."""


@dataclass(frozen=True)
class Sizes:
    N: tuple[int, ...]
    C: int
    d: int
    H: int

    def to_dict(self) -> dict:
        return {"N": list(self.N), "C": self.C, "d": self.d, "H": self.H}


@dataclass(frozen=True)
class RunConfig:
    command: str
    seed: int = 0
    sizes: Sizes | None = None
    preset: str | None = None
    repeats: int = 5
    warmup: int = 1
    out: str | None = None
    format: str = "json"
    inject_fault: str | None = None
    resolution: int = 224
    trials: int = 100
    diag_seeds: int = 50
    diag_layers: int = 4
    diag_scale: float = 8.0
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.warmup < 0:
            raise ConfigError("warmup must be >= 0")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {', '.join(FORMATS)}")
        if self.trials < 1 or self.diag_seeds < 1 or self.diag_layers < 1:
            raise ConfigError("trials, diag_seeds and diag_layers must be >= 1")
        if self.inject_fault is not None and self.inject_fault not in faults.KNOWN_FAULTS:
            raise ConfigError(f"unknown fault {self.inject_fault!r}; known: {', '.join(faults.KNOWN_FAULTS)}")
        if self.sizes is None:
            object.__setattr__(self, "sizes", _sizes(DEFAULT_SIZES[self.command]))
        if self.preset is None:
            object.__setattr__(self, "preset", DEFAULT_PRESET[self.command])
        s = self.sizes
        if self.command != "model" and (not s.N or min(s.N) < 1 or min(s.C, s.d, s.H) < 1):
            raise ConfigError("sizes must be positive")
        if self.command == "bench" and list(s.N) != sorted(s.N):
            raise ConfigError("bench sizes must be ascending")

    def to_dict(self) -> dict:
        return {
            "command": self.command, "seed": self.seed, "sizes": self.sizes.to_dict(),
            "preset": self.preset, "repeats": self.repeats, "warmup": self.warmup,
            "format": self.format, "inject_fault": self.inject_fault, "resolution": self.resolution,
            "trials": self.trials, "diag_seeds": self.diag_seeds, "diag_layers": self.diag_layers,
            "diag_scale": self.diag_scale,
        }


def _sizes(d: dict) -> Sizes:
    try:
        n = d["N"]
        n = [int(n)] if isinstance(n, (int, float)) else [int(v) for v in n]
        return Sizes(tuple(n), int(d["C"]), int(d["d"]), int(d["H"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad sizes block {d!r}: {exc}") from None


def parse_sizes(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--sizes expects comma-separated integers, got {text!r}") from None
    if not values:
        raise ConfigError("--sizes is empty")
    return values


def load_config_file(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def build_config(command: str, file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then config-file values, then explicit CLI overrides."""
    known = {f.name for f in dataclasses.fields(RunConfig)} - {"extra"}
    values: dict = {}
    for source in (file_values or {}, overrides or {}):
        for key, val in source.items():
            if key not in known:
                raise ConfigError(f"unknown config field {key!r}")
            if val is None:
                continue
            if key == "sizes":
                merged = dict(values.get("sizes") or DEFAULT_SIZES[command])
                merged.update(val)
                val = merged
            values[key] = val
    if "command" in values and values["command"] != command:
        raise ConfigError(f"config file is for {values['command']!r}, not {command!r}")
    values["command"] = command
    if "sizes" in values:
        values["sizes"] = _sizes(values["sizes"])
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
