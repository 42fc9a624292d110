"""Experiment configuration: INI files, presets and environment overrides."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .cells import CellKind
from .rollout import ResetPolicy
from .train import DatasetSpec, TrainConfig, Waveform

SEED_ENV = "CHAINCAST_SEED"

_CYCLE = [(CellKind.BASIC, 10), (CellKind.LSTM, 15), (CellKind.GRU, 8)]


def cycled_architecture(k: int) -> list[tuple[CellKind, int]]:
    """basic-10, lstm-15, gru-8 repeated until the chain has ``k`` layers."""
    return [_CYCLE[r % 3] for r in range(k)]


@dataclass(frozen=True)
class RolloutConfig:
    m: int = 75
    p: int = 75
    algorithm: str = "ml"
    policy: ResetPolicy = ResetPolicy.ZERO

    def __post_init__(self):
        object.__setattr__(self, "policy", ResetPolicy(self.policy))
        if self.algorithm not in ("mw", "ew", "ml"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    architecture: tuple[tuple[CellKind, int], ...] = tuple(cycled_architecture(3))
    init_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    output_dir: Path = Path("runs")

    def __post_init__(self):
        if not self.architecture:
            raise ValueError("architecture must contain at least one layer")
        object.__setattr__(self, "architecture",
                           tuple((CellKind(kd), int(n)) for kd, n in self.architecture))
        object.__setattr__(self, "output_dir", Path(self.output_dir))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, dataset=replace(self.dataset, seed=seed),
                       train=replace(self.train, seed=seed), init_seed=seed)

    def scaled(self, count: int | None = None, epochs: int | None = None) -> "ExperimentConfig":
        cfg = self
        if count is not None:
            cfg = replace(cfg, dataset=replace(cfg.dataset, count=count))
        if epochs is not None:
            cfg = replace(cfg, train=replace(cfg.train, epochs=epochs))
        return cfg


def _noisy_sine(k: int, name: str) -> ExperimentConfig:
    return ExperimentConfig(
        dataset=DatasetSpec(Waveform.SINE, noise_amplitude=0.15, dt=0.01, m_min=5, m_max=150, count=12000),
        architecture=tuple(cycled_architecture(k)),
        train=TrainConfig(epochs=50, validation_fraction=0.2),
        rollout=RolloutConfig(m=75, p=75),
        output_dir=Path("runs") / name,
    )


PRESETS: dict[str, ExperimentConfig] = {
    "paper-k3": _noisy_sine(3, "paper-k3"),
    "paper-k5": _noisy_sine(5, "paper-k5"),
    "paper-k7": _noisy_sine(7, "paper-k7"),
    "noiseless-k3": replace(
        _noisy_sine(3, "noiseless-k3"),
        dataset=DatasetSpec(Waveform.SINE, noise_amplitude=0.0, dt=0.01, m_min=5, m_max=150, count=12000),
        rollout=RolloutConfig(m=100, p=30, algorithm="ew"),
    ),
}


def _section_values(obj) -> dict[str, str]:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        out[f.name] = v.value if hasattr(v, "value") else ("none" if v is None else str(v))
    return out


def to_ini(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser()
    cp["dataset"] = _section_values(cfg.dataset)
    cp["architecture"] = {
        "layers": ", ".join(f"{k.value}:{n}" for k, n in cfg.architecture),
        "init_seed": str(cfg.init_seed),
    }
    cp["train"] = _section_values(cfg.train)
    cp["rollout"] = _section_values(cfg.rollout)
    cp["output"] = {"dir": str(cfg.output_dir)}
    lines = []
    for sec in cp.sections():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {v}" for k, v in cp[sec].items())
        lines.append("")
    return "\n".join(lines)


def _coerce(cls, section: configparser.SectionProxy | None, base):
    if section is None:
        return base
    kwargs = {}
    for f in fields(cls):
        if f.name not in section:
            continue
        raw = section[f.name].strip()
        cur = getattr(base, f.name)
        if raw.lower() == "none":
            kwargs[f.name] = None
        elif isinstance(cur, bool):
            kwargs[f.name] = section.getboolean(f.name)
        elif isinstance(cur, int) and not hasattr(cur, "value"):
            kwargs[f.name] = int(raw)
        elif isinstance(cur, float) or cur is None:
            kwargs[f.name] = float(raw)
        else:
            kwargs[f.name] = raw
    unknown = set(section) - {f.name for f in fields(cls)} - set(section.parser.defaults())
    if unknown:
        raise ValueError(f"unknown keys in [{section.name}]: {', '.join(sorted(unknown))}")
    return replace(base, **kwargs)


def parse_layers(text: str) -> tuple[tuple[CellKind, int], ...]:
    out = []
    for tok in text.split(","):
        kind, _, n = tok.strip().partition(":")
        if not n:
            raise ValueError(f"layer spec {tok.strip()!r} must look like kind:size")
        out.append((CellKind.parse(kind), int(n)))
    return tuple(out)


def from_ini(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    base = base or ExperimentConfig()
    known = {"dataset", "architecture", "train", "rollout", "output"}
    extra = set(cp.sections()) - known
    if extra:
        raise ValueError(f"unknown config sections: {', '.join(sorted(extra))}")
    cfg = replace(
        base,
        dataset=_coerce(DatasetSpec, cp["dataset"] if "dataset" in cp else None, base.dataset),
        train=_coerce(TrainConfig, cp["train"] if "train" in cp else None, base.train),
        rollout=_coerce(RolloutConfig, cp["rollout"] if "rollout" in cp else None, base.rollout),
    )
    if "architecture" in cp:
        sec = cp["architecture"]
        if "layers" in sec:
            cfg = replace(cfg, architecture=parse_layers(sec["layers"]))
        if "init_seed" in sec:
            cfg = replace(cfg, init_seed=sec.getint("init_seed"))
    if "output" in cp and "dir" in cp["output"]:
        cfg = replace(cfg, output_dir=Path(cp["output"]["dir"]))
    return cfg


def load_config(preset: str | None = None, path: str | Path | None = None,
                env: dict | None = None) -> ExperimentConfig:
    """Resolve a config from a preset and/or INI file, then apply ``CHAINCAST_SEED``."""
    if preset is not None and preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    cfg = PRESETS[preset] if preset else PRESETS["paper-k3"]
    if path is not None:
        cfg = from_ini(Path(path).read_text(), cfg)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        cfg = cfg.with_seed(int(env[SEED_ENV]))
    return cfg
