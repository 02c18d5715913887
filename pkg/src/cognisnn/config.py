"""Flat ``key = value`` run configuration shared by the CLI and experiment scripts."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .data import SyntheticTaskSpec
from .errors import ConfigError
from .graph import RandomGraphSpec
from .network import ModelConfig
from .training import ContinualConfig, TrainConfig

_DEFAULT_P = {"er": 0.6, "ws": 0.75}


@dataclass
class RunConfig:
    # graph
    gen: str = "er"
    n: int = 7
    p: float | None = None  # ER edge prob or WS rewire prob; generator default when unset
    ws_k: int = 4
    graph_seed: int = 0
    graph: str = ""  # existing graph file instead of generating one
    # model
    channels: int = 8
    stem_pools: int = 1
    pool_depths: str = "1"
    tau: float = 0.5
    u_th: float = 1.0
    alpha: float = 4.0
    eta: int = 1
    kappa: int = 2
    gate: str = "or"
    # data
    family: str = "bar"
    classes: int = 4
    timesteps: int = 4
    size: int = 16
    samples_per_class: int = 100
    fg: float = 0.9
    bg: float = 0.02
    data_seed: int = 0
    train_data: str = ""
    test_data: str = ""
    # training
    epochs: int = 20
    batch_size: int = 8
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    schedule: str = "cosine"
    t_max: int = 0  # 0 anneals over the run's own epoch count
    step_every: int = 64
    step_factor: float = 0.1
    seed: int = 0
    # continual
    scenario: str = "similar"
    k: int = 1
    lam: float = 1.0
    temperature: float = 2.0
    reg_coeff: float = 1e-4
    new_weight: float = 1.0
    max_old_drop: float | None = None
    bn_stats: str = "frozen"
    new_family: str = "checker"
    new_classes: int = 4
    new_data_seed: int = 1
    # evaluation sweeps
    kinds: str = "salt_pepper,poisson,frame_loss"
    rhos: str = "0,2,4,6,8"
    perturb_seed: int = 0
    poisson_base: float = 0.01
    eval_timesteps: str = ""  # empty sweeps 1..timesteps
    head: str = "head"  # classifier used by the evaluation commands
    # io
    out: str = "out"
    jobs: int = 1

    # conversion --------------------------------------------------------

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def resolved(self) -> "RunConfig":
        """Copy with generator-dependent defaults filled in."""
        cfg = dataclasses.replace(self)
        if cfg.p is None:
            if cfg.gen not in _DEFAULT_P:
                raise ConfigError(f"unknown generator {cfg.gen!r}")
            cfg.p = _DEFAULT_P[cfg.gen]
        if cfg.t_max == 0:
            cfg.t_max = cfg.epochs
        return cfg

    def graph_spec(self) -> RandomGraphSpec:
        c = self.resolved()
        return RandomGraphSpec(c.gen, c.n, ws_neighbors=c.ws_k, ws_rewire_prob=c.p, er_edge_prob=c.p, seed=c.graph_seed)

    def model_config(self, in_channels: int = 2, num_classes: int | None = None) -> ModelConfig:
        return ModelConfig(
            in_channels=in_channels, input_size=self.size, channels=self.channels,
            num_classes=self.classes if num_classes is None else num_classes,
            stem_pools=self.stem_pools, pool_depths=parse_int_list(self.pool_depths),
            tau=self.tau, u_th=self.u_th, alpha=self.alpha, eta=self.eta, kappa=self.kappa,
            gate=self.gate, seed=self.seed,
        )

    def task_spec(self, new_task: bool = False) -> SyntheticTaskSpec:
        return SyntheticTaskSpec(
            class_count=self.new_classes if new_task else self.classes,
            timesteps=self.timesteps, height=self.size, width=self.size,
            family=self.new_family if new_task else self.family,
            spike_prob_fg=self.fg, spike_prob_bg=self.bg,
            samples_per_class=self.samples_per_class,
            seed=self.new_data_seed if new_task else self.data_seed,
        )

    def train_config(self) -> TrainConfig:
        c = self.resolved()
        return TrainConfig(epochs=c.epochs, batch_size=c.batch_size, lr=c.lr, momentum=c.momentum,
                           weight_decay=c.weight_decay, schedule=c.schedule, t_max=c.t_max,
                           step_every=c.step_every, step_factor=c.step_factor, seed=c.seed)

    def continual_config(self) -> ContinualConfig:
        return ContinualConfig(lam=self.lam, temperature=self.temperature, reg_coeff=self.reg_coeff,
                               scenario=self.scenario, k=self.k, new_weight=self.new_weight, bn_stats=self.bn_stats,
                               max_old_drop=self.max_old_drop)

    # text form ---------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'' if v is None else v}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.resolved().to_text())

    def with_overrides(self, overrides: dict[str, object]) -> "RunConfig":
        cfg = dataclasses.replace(self)
        for key, value in overrides.items():
            _set(cfg, key, value)
        return cfg

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            _set(cfg, key, value)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _set(cfg: RunConfig, key: str, value) -> None:
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(cfg, key, _coerce(key, _TYPES[key], value))


def _coerce(key: str, type_name: str, value):
    if not isinstance(value, str):
        return value
    optional = "None" in type_name
    if optional and value == "":
        return None
    try:
        if type_name.startswith("int"):
            return int(value)
        if type_name.startswith("float"):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} as {type_name}") from exc
    return value


def parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


def parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def parse_str_list(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())
