"""Run configuration: a nested document that fully determines an experiment.

Configs are plain JSON; parsing is strict (unknown keys rejected) and
round-trips exactly.  All randomness in a run flows from the single seed via
spawned generator streams, so identical configs produce identical artifacts.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


def _from_dict(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        sub = _NESTED.get((cls, f.name))
        kwargs[f.name] = _from_dict(sub, value, f"{path}.{f.name}") if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


@dataclass
class EnvConfig:
    kind: str = "chain"  # "chain" | "gridworld"
    n_states: int = 6
    discount: float = 0.7
    divergence_state: int | str = 3
    max_size: int = 5
    episode_len: int = 50

    def __post_init__(self):
        if self.kind not in ("chain", "gridworld"):
            raise ConfigError(f"unknown env kind {self.kind!r}")
        if self.kind == "gridworld" and not (5 <= self.max_size <= 10):
            raise ConfigError("gridworld max_size must lie in 5..10")


@dataclass
class DataConfig:
    n_episodes: int = 1  # chain
    policy_z: float = 1.0  # chain collection policy
    n_steps: int = 20000  # gridworld collection steps
    collect_lr: float = 1e-3


@dataclass
class ModelConfig:
    mode: str = "practical"  # "theory" | "practical"
    hidden_widths: list = field(default_factory=lambda: [64])
    n_heads: int = 32
    sigma_w: float = 1.0
    sigma_b: float = 0.1
    embed_width: int = 64
    trunk_widths: list = field(default_factory=lambda: [64, 64, 64])

    def __post_init__(self):
        if self.mode not in ("theory", "practical"):
            raise ConfigError(f"unknown model mode {self.mode!r}")


@dataclass
class TrainSection:
    method: str = "uvu"  # uvu | ensemble | bdqnp | rnd | rnd_p | dqn
    learning_rate: float = 3e-4
    batch_size: int = 512
    n_steps: int = 10000
    discount: float = 0.9
    target_update_interval: int = 256
    target_polyak: float = 1.0
    ensemble_size: int = 5
    prior_scale: float = 1.0
    use_float32: bool = True

    def __post_init__(self):
        if self.method not in ("uvu", "ensemble", "bdqnp", "rnd", "rnd_p", "dqn"):
            raise ConfigError(f"unknown train method {self.method!r}")


@dataclass
class RunConfig:
    experiment_id: str = "run"
    seed: int = 0
    out_dir: str = "runs"
    env: EnvConfig = field(default_factory=EnvConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)

    def run_dir(self, seed: int | None = None) -> str:
        s = self.seed if seed is None else seed
        return os.path.join(self.out_dir, self.experiment_id, str(s))


_NESTED = {
    (RunConfig, "env"): EnvConfig,
    (RunConfig, "data"): DataConfig,
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "train"): TrainSection,
}


def parse_config(data: dict) -> RunConfig:
    return _from_dict(RunConfig, data, "config")


def config_to_dict(config: RunConfig) -> dict:
    return asdict(config)


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return parse_config(data)


def save_config(config: RunConfig, path: str):
    with open(path, "w") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
