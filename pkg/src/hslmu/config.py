"""Run configuration: INI-style files with strict key validation.

Sections mirror the package modules.  Unknown sections or keys are hard
errors so hyperparameter typos cannot silently fall back to defaults.  A
config plus the dataset bytes fully determines a run.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, fields

__all__ = ["ConfigError", "RunConfig", "parse_config", "render_config", "load_config"]

ENV_DATA_DIR = "HSLMU_DATA_DIR"
ENV_OUT_DIR = "HSLMU_OUT_DIR"


class ConfigError(ValueError):
    """Invalid, unknown, or inconsistent configuration contents."""


@dataclass
class RunConfig:
    # [data]
    task: str = "smnist"
    data_dir: str = "data"
    perm_seed: int | None = None
    classes: tuple[int, ...] | None = None
    image_size: int | None = None
    train_count: int | None = None
    val_count: int | None = None
    test_count: int | None = None
    # [network]
    n_hidden: int = 128
    memory_order: int = 128
    theta_bar: float | None = None  # None -> sequence length
    tau_memory: float = 200.0
    tau_hidden: float = 10.0
    tau_out: float = 10.0
    # [quantizer]
    omega_high_hidden: float = 16.0
    omega_low_hidden: float = 1.0
    omega_high_memory: float = 32.0
    omega_low_memory: float = 2.0
    # [training]
    interp_epochs: int = 10
    fine_tune_patience: int = 5
    max_epochs: int = 60
    batch_size: int = 500
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2_lambda: float = 0.01
    grad_clip: float = 10.0
    bptt_chunk: int = 128
    seed: int = 0
    # [run]
    out_dir: str = "runs/default"

    def validate(self) -> "RunConfig":
        if self.task not in ("smnist", "psmnist"):
            raise ConfigError(f"task must be smnist or psmnist, got {self.task!r}")
        for name in ("omega_high_hidden", "omega_high_memory"):
            hi = getattr(self, name)
            lo = getattr(self, name.replace("high", "low"))
            if not (hi >= lo > 0):
                raise ConfigError(f"{name} must be >= its low value and both positive ({hi} vs {lo})")
        for name in ("tau_memory", "tau_hidden", "tau_out"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.theta_bar is not None and not self.theta_bar > 0:
            raise ConfigError("theta_bar must be positive (or omitted for sequence length)")
        if self.n_hidden < 1 or self.memory_order < 1:
            raise ConfigError("n_hidden and memory_order must be >= 1")
        if self.interp_epochs < 2:
            raise ConfigError("interp_epochs must be >= 2")
        if self.batch_size < 1 or self.max_epochs < 1 or self.bptt_chunk < 1:
            raise ConfigError("batch_size, max_epochs, bptt_chunk must be positive")
        return self


_SECTIONS: dict[str, tuple[str, ...]] = {
    "data": ("task", "data_dir", "perm_seed", "classes", "image_size",
             "train_count", "val_count", "test_count"),
    "network": ("n_hidden", "memory_order", "theta_bar", "tau_memory", "tau_hidden", "tau_out"),
    "quantizer": ("omega_high_hidden", "omega_low_hidden", "omega_high_memory", "omega_low_memory"),
    "training": ("interp_epochs", "fine_tune_patience", "max_epochs", "batch_size",
                 "learning_rate", "beta1", "beta2", "epsilon", "l2_lambda", "grad_clip",
                 "bptt_chunk", "seed"),
    "run": ("out_dir",),
}

_OPTIONAL_INTS = ("perm_seed", "image_size", "train_count", "val_count", "test_count")


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key == "classes":
        if raw.lower() in ("all", "none", "auto", ""):
            return None
        try:
            return tuple(int(tok) for tok in raw.split(","))
        except ValueError:
            raise ConfigError(f"classes must be a comma list of digits, got {raw!r}") from None
    if key in _OPTIONAL_INTS or key == "theta_bar":
        if raw.lower() in ("auto", "none", ""):
            return None
    ftype = {f.name: f.type for f in fields(RunConfig)}[key]
    try:
        if key == "theta_bar":
            return float(raw)
        if "int" in ftype:
            return int(raw)
        if "float" in ftype:
            return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r} for key {key!r}") from None
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse and validate; unknown sections or keys raise naming the offender."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    values = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[key] = _parse_value(key, raw)
    cfg = RunConfig(**values)

    if os.environ.get(ENV_DATA_DIR):
        cfg.data_dir = os.environ[ENV_DATA_DIR]
    if os.environ.get(ENV_OUT_DIR):
        cfg.out_dir = os.environ[ENV_OUT_DIR]
    return cfg.validate()


def render_config(cfg: RunConfig) -> str:
    """Write a config such that parse(render(cfg)) == cfg (env vars aside)."""

    def fmt(value):
        if value is None:
            return "auto"
        if isinstance(value, tuple):
            return ",".join(str(v) for v in value)
        return repr(value) if isinstance(value, float) else str(value)

    out = io.StringIO()
    for section, keys in _SECTIONS.items():
        out.write(f"[{section}]\n")
        for key in keys:
            out.write(f"{key} = {fmt(getattr(cfg, key))}\n")
        out.write("\n")
    return out.getvalue()


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
