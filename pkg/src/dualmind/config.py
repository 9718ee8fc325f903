"""Run configuration.

Every hyperparameter lives in :class:`RunConfig`.  The config file is flat
``key = value`` text whose keys are the row labels of the hyperparameter
table (rows that repeat across sections are prefixed with the section name,
e.g. ``RSSM-S1 Learning rate``).  Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .envs import ENV_NAMES
from .errors import ConfigError


def _f(default, key, doc=""):
    return field(default=default, metadata={"key": key, "doc": doc})


@dataclass
class RunConfig:
    # general
    env: str = _f("pendulum-swingup", "Environment")
    planner: str = _f("ac", "Planner", "ac (actor-critic) or mpc (gradient MPC)")
    seed: int = _f(0, "Seed")
    replay_size: int = _f(1_000_000, "Replay memory size")
    batch_size: int = _f(50, "Batch size")
    seq_len: int = _f(64, "Sequence length")
    seed_episodes: int = _f(5, "Seed episode")
    train_episodes: int = _f(1000, "Training episodes")
    collect_interval: int = _f(100, "Collect Interval")
    max_episode_length: int = _f(500, "Max episode length")
    exploration_noise: float = _f(0.3, "Exploration noise")
    horizon: int = _f(30, "Imagination horizon")
    grad_clip: float = _f(100.0, "Gradient clipping")
    # RSSM-S1
    activation: str = _f("relu", "Activation function")
    embedding_size: int = _f(1024, "Embedding size")
    hidden_size: int = _f(200, "Hidden size")
    belief_size: int = _f(200, "Belief size")
    state_size: int = _f(30, "State size")
    overshooting_distance: int = _f(50, "Overshooting distance")
    overshooting_kl_beta: float = _f(0.0, "Overshooting KL-beta")
    global_kl_beta: float = _f(0.0, "Global KL-beta")
    overshooting_reward_scale: float = _f(0.0, "overshooting reward scale")
    free_nats: float = _f(3.0, "Free nats")
    bit_depth: int = _f(5, "Bit-depth")
    kl_weight: float = _f(1.0, "Weights")
    s1_optimizer: str = _f("adam", "RSSM-S1 Optimizer")
    s1_adam_eps: float = _f(1e-4, "RSSM-S1 Adam epsilon")
    s1_lr: float = _f(1e-3, "RSSM-S1 Learning rate")
    # LINN-S2
    reasoning_depth: int = _f(30, "Reasoning depth")
    logic_size: int = _f(64, "Logic vector size")
    l2_weight: float = _f(1e-5, "L2 weight")
    reg_weight: float = _f(1.0, "Regularization weight")
    logic_mlp_layers: int = _f(3, "Logic MLP number")
    s2_optimizer: str = _f("sgd", "LINN-S2 Optimizer")
    s2_lr: float = _f(1e-2, "LINN-S2 Learning rate")
    # actor-critic
    return_lambda: float = _f(0.95, "Return lambda")
    discount: float = _f(0.99, "Planning horizon discount")
    ac_optimizer: str = _f("adam", "Actor-Critic Optimizer")
    ac_adam_eps: float = _f(1e-4, "Actor-Critic Adam epsilon")
    ac_lr: float = _f(1e-4, "Actor-Critic Learning rate")
    # gradient MPC
    mpc_iters: int = _f(40, "Iterations")
    mpc_candidates: int = _f(1000, "Candidate Size")
    mpc_lr: str = _f("0.1-0.01-0.005-0.0001", "Grad-MPC Learning Rate")
    mpc_init_std: float = _f(0.5, "Grad-MPC initial std")
    # not in the table
    logic_weight: float = _f(0.1, "Logic weight", "weight of the logic term in the guided S1 loss")
    kappa: float = _f(10.0, "Kappa", "sharpness of the logic similarity")
    min_std: float = _f(0.1, "Min std", "floor on latent standard deviations")
    reg_samples: int = _f(256, "Regularizer samples", "logic vectors per step fed to the law regularizers")
    s2_batch: int = _f(0, "Logic batch", "sequences per step used for S2 reasoning (0 = whole batch)")
    eval_episodes: int = _f(100, "Evaluation episodes")
    eval_interval: int = _f(0, "Evaluation interval", "training episodes between evaluations (0 = final only)")
    consistency_starts: int = _f(100, "Consistency start states")

    def __post_init__(self):
        self.validate()

    # -- validation --------------------------------------------------------
    def validate(self) -> "RunConfig":
        if self.env not in ENV_NAMES:
            raise ConfigError(f"unknown environment {self.env!r}; valid choices: {', '.join(ENV_NAMES)}")
        if self.planner not in ("ac", "mpc"):
            raise ConfigError(f"planner must be 'ac' or 'mpc', got {self.planner!r}")
        if self.activation.lower() != "relu":
            raise ConfigError("only the relu activation is supported")
        if self.s1_optimizer.lower() != "adam" or self.ac_optimizer.lower() != "adam":
            raise ConfigError("S1 and actor-critic optimizers must be adam")
        if self.s2_optimizer.lower() != "sgd":
            raise ConfigError("the S2 optimizer must be sgd")
        if self.overshooting_kl_beta or self.global_kl_beta or self.overshooting_reward_scale:
            raise ConfigError("overshooting is not implemented; its weights must stay 0")
        positive = ("replay_size", "batch_size", "seq_len", "max_episode_length", "horizon",
                    "embedding_size", "hidden_size", "belief_size", "state_size",
                    "logic_size", "logic_mlp_layers", "mpc_candidates", "eval_episodes",
                    "consistency_starts", "reg_samples")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        nonneg = ("seed_episodes", "train_episodes", "collect_interval", "reasoning_depth",
                  "mpc_iters", "free_nats", "logic_weight", "l2_weight", "reg_weight",
                  "s2_batch", "eval_interval")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.seq_len < 2:
            raise ConfigError("sequence length must be at least 2")
        for name in ("return_lambda", "discount"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        for name in ("s1_lr", "s2_lr", "ac_lr", "kappa", "min_std", "grad_clip",
                     "s1_adam_eps", "ac_adam_eps", "mpc_init_std"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be a positive finite number")
        self.mpc_lr_schedule()
        return self

    def mpc_lr_schedule(self) -> tuple[float, ...]:
        try:
            rates = tuple(float(x) for x in str(self.mpc_lr).split("-"))
        except ValueError:
            raise ConfigError(f"bad Grad-MPC learning-rate string {self.mpc_lr!r}") from None
        if any(b > a for a, b in zip(rates, rates[1:])) or any(r <= 0 for r in rates):
            raise ConfigError("Grad-MPC learning rates must be positive and nonincreasing")
        return rates

    # -- (de)serialisation -------------------------------------------------
    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def to_text(self) -> str:
        lines = ["# dualmind run configuration"]
        for f in dataclasses.fields(self):
            lines.append(f"{f.metadata['key']} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        values = parse_assignments(
            (ln for ln in text.splitlines()), source="config file")
        return (base or cls()).with_overrides(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def with_overrides(self, values: dict) -> "RunConfig":
        """Apply ``{key: raw string}`` overrides; keys may be table labels or field names."""
        by_key = {}
        for f in dataclasses.fields(self):
            by_key[f.metadata["key"].lower()] = f
            by_key[f.name.lower()] = f
        changes = {}
        for key, raw in values.items():
            f = by_key.get(key.strip().lower())
            if f is None:
                raise ConfigError(f"unknown config key {key!r}")
            changes[f.name] = _coerce(f, raw)
        return dataclasses.replace(self, **changes)


def parse_assignments(lines, source: str = "input") -> dict:
    values = {}
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source} line {n}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        values[key.strip()] = raw.strip()
    return values


def _coerce(f, raw):
    if not isinstance(raw, str):
        return raw
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind == "int":
            return int(float(raw)) if ("e" in raw.lower() or "." in raw) else int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} for {f.metadata['key']!r}") from None
    return raw


# Reduced sizes that fit a single CPU core; see README for the rationale.
DESK_PRESET = {
    "train_episodes": 200,
    "batch_size": 16,
    "seq_len": 32,
    "collect_interval": 20,
    "embedding_size": 128,
    "hidden_size": 64,
    "belief_size": 64,
    "state_size": 16,
    "horizon": 15,
    "reasoning_depth": 8,
    "s2_batch": 4,
    "reg_samples": 64,
    "mpc_candidates": 100,
    "mpc_iters": 8,
}

PRESETS = {"reference": {}, "desk": DESK_PRESET}


def preset(name: str, **overrides) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; valid choices: {', '.join(PRESETS)}")
    values = dict(PRESETS[name])
    values.update(overrides)
    return RunConfig(**values)
