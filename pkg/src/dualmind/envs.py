"""Analytic continuous-control environments with action repeat.

Three systems are provided: ``pendulum-swingup``, ``cartpole-balance`` and
``cartpole-swingup``.  Angles are measured from upright (theta = 0 is the
goal), observations are state vectors with angles encoded as (cos, sin), and
every physics substep yields a reward in [0, 1].  A decision step applies the
clipped action for ``action_repeat`` substeps of semi-implicit Euler and
reports the summed reward.

All environments are batched internally: :class:`BatchEnv` steps ``n``
independent copies at once, and :func:`make_env` returns the single-copy view
used by the training loop.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, InputError


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    action_repeat: int
    max_episode_steps: int = 500
    dt: float = 0.01

    def __post_init__(self):
        if self.action_repeat < 1 or self.max_episode_steps < 1:
            raise ConfigError("action_repeat and max_episode_steps must be >= 1")
        if self.obs_dim < 1 or self.action_dim < 1:
            raise ConfigError("obs_dim and action_dim must be >= 1")


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminal: bool


@dataclass(frozen=True)
class PendulumParams:
    gravity: float = 9.81
    length: float = 1.0
    mass: float = 1.0
    damping: float = 0.1
    max_torque: float = 2.0
    # reset: theta ~ pi + U(-init_noise, init_noise), omega likewise
    init_noise: float = 0.05


@dataclass(frozen=True)
class CartpoleParams:
    gravity: float = 9.81
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.5
    max_force: float = 10.0
    init_theta: float = 0.0
    init_noise: float = 0.05


_SPECS = {
    "pendulum-swingup": (EnvSpec("pendulum-swingup", 3, 1, 6), PendulumParams()),
    "cartpole-balance": (EnvSpec("cartpole-balance", 5, 1, 8), CartpoleParams(init_theta=0.0)),
    "cartpole-swingup": (EnvSpec("cartpole-swingup", 5, 1, 8), CartpoleParams(init_theta=math.pi)),
}

ENV_NAMES = tuple(_SPECS)


def env_spec(name: str) -> EnvSpec:
    try:
        return _SPECS[name][0]
    except KeyError:
        raise ConfigError(
            f"unknown environment {name!r}; valid choices: {', '.join(ENV_NAMES)}"
        ) from None


def list_envs_json() -> str:
    """JSON array describing every built-in environment."""
    rows = []
    for name in ENV_NAMES:
        spec, params = _SPECS[name]
        row = asdict(spec)
        row["physics"] = asdict(params)
        rows.append(row)
    return json.dumps(rows, indent=2)


class BatchEnv:
    """``n`` independent copies of one system, stepped together.

    Each copy owns a random stream seeded from its own integer seed, so the
    trajectory of copy ``i`` depends only on ``seeds[i]`` and its actions.
    """

    def __init__(self, name: str, seeds, spec: EnvSpec | None = None, physics=None):
        base_spec = env_spec(name)
        self.spec = spec or base_spec
        self.physics = physics or _SPECS[name][1]
        self.kind = "pendulum" if name.startswith("pendulum") else "cartpole"
        seeds = [int(s) for s in np.atleast_1d(seeds)]
        self.n = len(seeds)
        self._rngs = [np.random.default_rng(s) for s in seeds]
        width = 2 if self.kind == "pendulum" else 4
        self.state = np.zeros((self.n, width))
        self.steps = 0

    # -- state handling ----------------------------------------------------
    def reset(self, seeds=None) -> np.ndarray:
        if seeds is not None:
            self._rngs = [np.random.default_rng(int(s)) for s in np.atleast_1d(seeds)]
        p = self.physics
        for i, rng in enumerate(self._rngs):
            noise = rng.uniform(-1.0, 1.0, size=self.state.shape[1]) * p.init_noise
            if self.kind == "pendulum":
                self.state[i] = (math.pi + noise[0], noise[1])
            else:
                self.state[i] = (noise[0], noise[1], p.init_theta + noise[2], noise[3])
        self.steps = 0
        return self.observe()

    def set_state(self, state) -> None:
        self.state = np.array(state, dtype=np.float64).reshape(self.n, -1)

    def observe(self) -> np.ndarray:
        s = self.state
        if self.kind == "pendulum":
            obs = np.stack([np.cos(s[:, 0]), np.sin(s[:, 0]), s[:, 1]], axis=1)
        else:
            obs = np.stack([s[:, 0], np.cos(s[:, 2]), np.sin(s[:, 2]), s[:, 1], s[:, 3]], axis=1)
        return obs.astype(np.float32)

    # -- dynamics ----------------------------------------------------------
    def step(self, actions):
        """Advance every copy one decision step; returns (obs, rewards, terminal)."""
        a = np.asarray(actions, dtype=np.float64).reshape(self.n, self.spec.action_dim)
        if not np.all(np.isfinite(a)):
            raise InputError("action contains non-finite values")
        u = np.ascontiguousarray(np.clip(a[:, 0], -1.0, 1.0))
        p = self.physics
        s = self.state
        if self.kind == "pendulum":
            th, om, rew = _kernels.pendulum_substeps(
                np.ascontiguousarray(s[:, 0]), np.ascontiguousarray(s[:, 1]), u,
                self.spec.action_repeat, self.spec.dt, p.gravity, p.length,
                p.mass, p.damping, p.max_torque)
            self.state = np.stack([th, om], axis=1)
        else:
            x, xd, th, td, rew = _kernels.cartpole_substeps(
                *(np.ascontiguousarray(s[:, k]) for k in range(4)), u,
                self.spec.action_repeat, self.spec.dt, p.gravity, p.cart_mass,
                p.pole_mass, p.half_length, p.max_force)
            self.state = np.stack([x, xd, th, td], axis=1)
        self.steps += 1
        terminal = self.steps >= self.spec.max_episode_steps
        return self.observe(), rew, terminal

    def energy(self) -> np.ndarray:
        """Pendulum mechanical energy, zero at the hanging rest position."""
        if self.kind != "pendulum":
            raise NotImplementedError("energy is defined for the pendulum only")
        p = self.physics
        th, om = self.state[:, 0], self.state[:, 1]
        kinetic = 0.5 * p.mass * p.length ** 2 * om ** 2
        potential = p.mass * p.gravity * p.length * (1.0 + np.cos(th))
        return kinetic + potential


class Env:
    """Single environment; a thin view over a one-copy :class:`BatchEnv`."""

    def __init__(self, name: str, seed: int, **kwargs):
        self.name = name
        self._batch = BatchEnv(name, [seed], **kwargs)
        self.spec = self._batch.spec
        self.physics = self._batch.physics

    @property
    def steps(self) -> int:
        return self._batch.steps

    @property
    def state(self) -> np.ndarray:
        return self._batch.state[0].copy()

    def set_state(self, state) -> None:
        self._batch.set_state(state)

    def reset(self, seed: int | None = None) -> np.ndarray:
        return self._batch.reset(None if seed is None else [seed])[0]

    def step(self, action) -> StepResult:
        obs, rew, terminal = self._batch.step(np.reshape(action, (1, -1)))
        return StepResult(obs[0], float(rew[0]), terminal)

    def energy(self) -> float:
        return float(self._batch.energy()[0])


def make_env(name: str, seed: int = 0, **kwargs) -> Env:
    env_spec(name)  # validates the name
    return Env(name, seed, **kwargs)
