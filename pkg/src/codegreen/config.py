"""Tool configuration: a flat ``key = value`` file in the user config directory."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import CodeGreenError
from .instrument.engine import LANGUAGES, SCOPES, GranularityConfig, LoopMode

CONFIG_DIR_ENV = "CODEGREEN_CONFIG_DIR"
CONFIG_FILE = "config"

_UNITS = {"ns": 1, "us": 1_000, "ms": 1_000_000, "s": 1_000_000_000}
_DURATION_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(ns|us|ms|s)\s*$")
PROVIDER_CHOICES = ("auto", "rapl", "synthetic", "gpu_stub")


class ConfigError(CodeGreenError, ValueError):
    pass


def parse_duration(text: str) -> int:
    """``"10ms"`` -> 10_000_000.  A unit suffix is required."""
    m = _DURATION_RE.match(str(text))
    if m is None:
        raise ConfigError(f"bad duration {text!r}: expected a number with a unit (ns, us, ms, s)")
    value = float(m[1]) * _UNITS[m[2]]
    if value != int(value):
        raise ConfigError(f"duration {text!r} is not a whole number of nanoseconds")
    return int(value)


def format_duration(ns: int) -> str:
    for unit in ("s", "ms", "us"):
        if ns and ns % _UNITS[unit] == 0:
            return f"{ns // _UNITS[unit]}{unit}"
    return f"{ns}ns"


def _split(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def config_dir() -> Path:
    env = os.environ.get(CONFIG_DIR_ENV)
    if env:
        return Path(env)
    base = os.environ.get("XDG_CONFIG_HOME") or os.path.join(os.path.expanduser("~"), ".config")
    return Path(base) / "codegreen"


@dataclass(frozen=True)
class ToolConfig:
    interval_ns: int = 10_000_000
    scopes: tuple[str, ...] = ("function", "method")
    include: tuple[str, ...] = ()
    exclude: tuple[str, ...] = ()
    loop_mode: LoopMode = LoopMode.WHOLE_LOOP
    output: str = "text"
    powercap_root: str = ""
    providers: tuple[str, ...] = ("auto",)
    synthetic_watts: float = 10.0
    # reserved: accepted and stored, not acted on
    accuracy_threshold: str = ""

    # config-file key -> field name
    KEYS = {
        "interval": "interval_ns",
        "scopes": "scopes",
        "include": "include",
        "exclude": "exclude",
        "loop_mode": "loop_mode",
        "output": "output",
        "powercap_root": "powercap_root",
        "providers": "providers",
        "synthetic_watts": "synthetic_watts",
        "accuracy_threshold": "accuracy_threshold",
    }

    def __post_init__(self):
        object.__setattr__(self, "loop_mode", LoopMode(self.loop_mode))
        if self.interval_ns <= 0:
            raise ConfigError("interval must be positive")
        if not self.scopes:
            raise ConfigError("at least one scope must be enabled")
        bad = set(self.scopes) - set(SCOPES)
        if bad:
            raise ConfigError(f"unknown scope(s): {', '.join(sorted(bad))}")
        if self.output not in ("text", "json"):
            raise ConfigError(f"output must be text or json, not {self.output!r}")
        bad = set(self.providers) - set(PROVIDER_CHOICES)
        if bad or not self.providers:
            raise ConfigError(f"providers must be drawn from {', '.join(PROVIDER_CHOICES)}")
        if self.synthetic_watts < 0:
            raise ConfigError("synthetic_watts must be non-negative")

    @property
    def granularity(self) -> GranularityConfig:
        return GranularityConfig({lang: frozenset(self.scopes) for lang in LANGUAGES},
                                 self.include, self.exclude, self.loop_mode)

    def get(self, key: str) -> str:
        if key not in self.KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        value = getattr(self, self.KEYS[key])
        if key == "interval":
            return format_duration(value)
        if isinstance(value, tuple):
            return ",".join(value)
        if isinstance(value, LoopMode):
            return value.value
        return str(value)

    def with_value(self, key: str, text: str) -> "ToolConfig":
        if key not in self.KEYS:
            raise ConfigError(f"unknown config key {key!r}; known: {', '.join(self.KEYS)}")
        name = self.KEYS[key]
        if key == "interval":
            value = parse_duration(text)
        elif key in ("scopes", "include", "exclude", "providers"):
            value = _split(text)
        elif key == "synthetic_watts":
            try:
                value = float(text)
            except ValueError:
                raise ConfigError(f"synthetic_watts must be a number, not {text!r}") from None
        elif key == "loop_mode":
            try:
                value = LoopMode(text)
            except ValueError:
                raise ConfigError("loop_mode must be whole_loop or per_iteration") from None
        else:
            value = text.strip()
        return replace(self, **{name: value})

    def items(self) -> list[tuple[str, str]]:
        return [(k, self.get(k)) for k in self.KEYS]

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())

    @classmethod
    def from_text(cls, text: str) -> "ToolConfig":
        cfg = cls()
        for n, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"line {n}: expected key = value")
            cfg = cfg.with_value(key.strip(), value.strip())
        return cfg

    def snapshot(self) -> dict:
        return dict(self.items())


def config_path(directory: Path | None = None) -> Path:
    return (directory or config_dir()) / CONFIG_FILE


def load_config(directory: Path | None = None) -> ToolConfig:
    path = config_path(directory)
    if not path.is_file():
        return ToolConfig()
    return ToolConfig.from_text(path.read_text())


def save_config(cfg: ToolConfig, directory: Path | None = None) -> Path:
    path = config_path(directory)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(cfg.to_text())
    return path
