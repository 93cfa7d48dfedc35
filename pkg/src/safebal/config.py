"""Run configuration: INI-style file with sections, strict key validation.

Defaults reproduce the standard training recipe (uncertainty: 30 epochs,
lr 1e-3, wd 1e-4, batch 256, dims 64/128, dropout 0.3; relabeling: tau 3.0;
safety: 3x64 BiLSTM, dropout 0.3, 50 epochs, lr 1e-2, wd 1e-4, batch 256,
clip 1.0), so an empty config runs the reference setup. Unknown sections or
keys are rejected.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .nncore import AdamWConfig
from .safety import SafetyConfig
from .synthgen import GenConfig
from .uncertainty import UncertaintyConfig

ENV_OUT_ROOT = "SAFEBAL_OUT"


@dataclass
class RunSettings:
    seed: int = 7
    strategy: str = "ulnr"
    fusion: str = "plain"
    rus_ratio: float = 1.0
    out_root: str = ""

    def resolved_out_root(self) -> Path:
        if self.out_root:
            return Path(self.out_root)
        return Path(os.environ.get(ENV_OUT_ROOT, "runs"))


@dataclass
class UncertaintyTrain:
    proj_dim: int = 64
    expand_dim: int = 128
    head_dim: int = 32
    dropout: float = 0.3
    epochs: int = 30
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 256
    grad_clip_norm: float | None = None

    def to_model_config(self) -> UncertaintyConfig:
        return UncertaintyConfig(
            proj_dim=self.proj_dim, expand_dim=self.expand_dim,
            head_dim=self.head_dim, dropout=self.dropout,
            optim=AdamWConfig(
                learning_rate=self.learning_rate, weight_decay=self.weight_decay,
                batch_size=self.batch_size, epochs=self.epochs,
                grad_clip_norm=self.grad_clip_norm,
            ),
        )


@dataclass
class UlnrSettings:
    tau: float = 3.0
    epsilon: float = 1e-8
    tau_grid: tuple = (2.0, 2.5, 3.0)
    sweep_taus: tuple = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5)
    sweep_seeds: int = 5


@dataclass
class SafetyTrain:
    n_layers: int = 3
    hidden_dim: int = 64
    head_dim: int = 32
    dropout: float = 0.3
    epochs: int = 50
    learning_rate: float = 1e-2
    weight_decay: float = 1e-4
    batch_size: int = 256
    grad_clip_norm: float | None = 1.0

    def to_model_config(self, fusion: str = "plain") -> SafetyConfig:
        return SafetyConfig(
            n_layers=self.n_layers, hidden_dim=self.hidden_dim,
            head_dim=self.head_dim, dropout=self.dropout, fusion=fusion,
            optim=AdamWConfig(
                learning_rate=self.learning_rate, weight_decay=self.weight_decay,
                batch_size=self.batch_size, epochs=self.epochs,
                grad_clip_norm=self.grad_clip_norm,
            ),
        )


@dataclass
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    gen: GenConfig = field(default_factory=GenConfig)
    uncertainty: UncertaintyTrain = field(default_factory=UncertaintyTrain)
    ulnr: UlnrSettings = field(default_factory=UlnrSettings)
    safety: SafetyTrain = field(default_factory=SafetyTrain)

    def lines(self) -> list[str]:
        out = []
        for section_name in ("run", "gen", "uncertainty", "ulnr", "safety"):
            section = getattr(self, section_name)
            for f in fields(section):
                out.append(f"{section_name}.{f.name} = {getattr(section, f.name)!r}")
        return out

    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.lines()).encode()).hexdigest()[:16]


def _convert(raw: str, current):
    """Parse a raw INI string to the type of the current (default) value."""
    raw = raw.strip()
    if raw.lower() == "none":
        return None
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        if not raw:
            return ()
        return tuple(float(tok) for tok in raw.replace(",", " ").split())
    if current is None:
        return float(raw)
    return raw


def load_config(path=None) -> RunConfig:
    """Defaults, overridden by an INI file if given. Unknown keys rejected."""
    config = RunConfig()
    if path is None:
        return config
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as err:
        raise ConfigError(f"cannot parse config {path}: {err}") from err
    sections = {"run": config.run, "gen": config.gen,
                "uncertainty": config.uncertainty, "ulnr": config.ulnr,
                "safety": config.safety}
    for section_name in parser.sections():
        if section_name not in sections:
            raise ConfigError(f"{path}: unknown section [{section_name}]")
        target = sections[section_name]
        known = {f.name for f in fields(target)}
        for key, raw in parser.items(section_name):
            if key not in known:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section_name}]")
            current = getattr(target, key)
            try:
                setattr(target, key, _convert(raw, current))
            except ValueError as err:
                raise ConfigError(f"{path}: bad value for {section_name}.{key}: {err}") from err
    # re-validate dataclass invariants that __post_init__ would have enforced
    GenConfig(**{f.name: getattr(config.gen, f.name) for f in fields(config.gen)})
    if config.run.strategy not in ("none", "ulnr", "cw", "rus"):
        raise ConfigError(f"run.strategy must be one of none/ulnr/cw/rus, got {config.run.strategy!r}")
    if config.run.fusion not in ("plain", "early", "late"):
        raise ConfigError(f"run.fusion must be one of plain/early/late")
    if config.run.rus_ratio < 1:
        raise ConfigError("run.rus_ratio must be >= 1")
    config.uncertainty.to_model_config()
    config.safety.to_model_config(config.run.fusion)
    return config
