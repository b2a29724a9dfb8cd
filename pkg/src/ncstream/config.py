"""Run configuration: flat ``key = value`` text files plus overrides.

Lists are comma separated; ``#`` starts a comment. Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from . import stream_sim
from .agent import TrainConfig

PAPER_LOSS_SET = tuple(round(i / 1000, 3) for i in range(21))


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    ladder_kbps: tuple[float, ...] = stream_sim.DEFAULT_LADDER_KBPS
    chunk_duration: float = 4.0
    hd_threshold_index: int = 3
    chunk_count: int = 48
    buffer_cap: float = 60.0
    slice_size: int = 1024
    header_size: int = 16
    history: int = 8
    k_values: tuple[int, ...] = stream_sim.DEFAULT_K_VALUES
    rho_values: tuple[float, ...] = stream_sim.DEFAULT_RHO_VALUES
    loss_set: tuple[float, ...] = PAPER_LOSS_SET
    rtt: float = 0.08
    manifest: str = ""
    manifest_seed: int = 0
    traces: str = "traces"
    val_traces: str = ""
    algo: str = "bb"
    qoe: str = "all"
    reward_qoe: int = 1
    out: str = "out"
    seed: int = 0
    horizon: int = 5
    # training
    epochs: int = 1000
    workers: int = 1
    lr: float = 1e-4
    critic_lr: float = 0.0
    gamma: float = 0.99
    beta_start: float = 1.0
    beta_end: float = 0.1
    clip_norm: float = 5.0
    hidden: tuple[int, ...] = (128, 128)
    asynchronous: bool = False
    validate_every: int = 50
    # trace generation
    count: int = 40
    duration: int = 320
    mean_dwell: float = 10.0

    def sim_config(self) -> stream_sim.SimConfig:
        ladder = stream_sim.ladder_from(self.ladder_kbps, self.chunk_duration, self.hd_threshold_index)
        return stream_sim.SimConfig(
            ladder=ladder,
            buffer_cap=self.buffer_cap,
            slice_size=self.slice_size,
            header_size=self.header_size,
            history=self.history,
            k_values=tuple(self.k_values),
            rho_values=tuple(self.rho_values),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            critic_lr=self.critic_lr or None,
            gamma=self.gamma,
            beta_start=self.beta_start,
            beta_end=self.beta_end,
            epochs=self.epochs,
            workers=self.workers,
            seed=self.seed,
            clip_norm=self.clip_norm,
            hidden=tuple(self.hidden),
            asynchronous=self.asynchronous,
            validate_every=self.validate_every,
        )

    def manifest_for(self, sim: stream_sim.SimConfig) -> stream_sim.VideoManifest:
        if self.manifest:
            return stream_sim.load_manifest(self.manifest)
        return stream_sim.synthesize_manifest(sim.ladder, self.chunk_count, self.manifest_seed)

    def validate(self):
        if not self.ladder_kbps or not self.k_values or not self.rho_values or not self.loss_set:
            raise ConfigError("ladder, k_values, rho_values and loss_set must be non-empty")
        if 1.0 not in self.rho_values:
            raise ConfigError("rho_values must contain 1.0 (needed for uncoded transfer)")
        if any(not (0 <= p <= 1) for p in self.loss_set):
            raise ConfigError("loss ratios must lie in [0, 1]")
        if self.manifest and not Path(self.manifest).exists():
            raise ConfigError(f"manifest {self.manifest} does not exist")


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _convert(key: str, raw: str):
    f = _FIELDS.get(key)
    if f is None:
        raise ConfigError(f"unknown config key {key!r}")
    default = f.default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            item = type(default[0]) if default else float
            return tuple(item(x) for x in raw.split(",") if x.strip())
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_pairs(lines, source="<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        out[key] = _convert(key, value)
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path:
        with open(path) as f:
            values.update(parse_pairs(f, str(path)))
    for k, v in (overrides or {}).items():
        k = k.replace("-", "_")
        values[k] = _convert(k, v) if isinstance(v, str) else v
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for name in _FIELDS:
        v = getattr(cfg, name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"
