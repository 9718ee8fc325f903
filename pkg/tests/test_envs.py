import json
import math

import numpy as np
import pytest

from dualmind import _kernels
from dualmind.envs import ENV_NAMES, BatchEnv, PendulumParams, list_envs_json, make_env
from dualmind.errors import ConfigError, InputError


def test_action_repeat_and_dims():
    assert make_env("pendulum-swingup", 0).spec.action_repeat == 6
    assert make_env("cartpole-swingup", 0).spec.action_repeat == 8
    assert make_env("pendulum-swingup", 0).spec.action_dim == 1
    assert make_env("pendulum-swingup", 0).spec.max_episode_steps == 500


def test_unknown_env_names_choices():
    with pytest.raises(ConfigError, match="pendulum-swingup"):
        make_env("acrobot", 0)


def test_reset_zero_noise_hangs_down():
    env = make_env("pendulum-swingup", 0, physics=PendulumParams(init_noise=0.0))
    obs = env.reset()
    assert env.state[0] == pytest.approx(math.pi)
    assert env.state[1] == 0.0
    np.testing.assert_allclose(obs, [-1.0, 0.0, 0.0], atol=1e-7)


@pytest.mark.parametrize("name", ENV_NAMES)
def test_reset_is_deterministic(name):
    a = make_env(name, 0).reset(seed=17)
    b = make_env(name, 99).reset(seed=17)
    assert np.array_equal(a, b)


def test_upright_rest_reward():
    env = make_env("pendulum-swingup", 0)
    env.reset()
    env.set_state([0.0, 0.0])
    assert env.step([0.0]).reward == 6.0


def test_hanging_reward_is_zero():
    env = make_env("pendulum-swingup", 0)
    env.reset()
    env.set_state([math.pi, 0.0])
    # sin(pi) is ~1e-16, so theta stays put for the whole decision step
    res = env.step([0.0])
    assert res.reward == pytest.approx(0.0, abs=1e-12)


def _fine_pendulum(theta, omega, u, duration, n, p=PendulumParams()):
    # independent reference: explicit small-step integration of the same ODE
    h = duration / n
    inertia = p.mass * p.length ** 2
    for _ in range(n):
        acc = (p.gravity / p.length) * math.sin(theta) + u * p.max_torque / inertia
        theta, omega = theta + h * omega, omega + h * acc
    return theta, omega


@pytest.mark.parametrize("theta0,u", [(math.pi, 0.7), (math.pi, -1.0), (2.0, 0.3)])
def test_one_substep_matches_fine_integrator(theta0, u):
    p = PendulumParams()
    th, om, _ = _kernels.NUMPY["pendulum_substeps"](
        np.array([theta0]), np.array([0.0]), np.array([u]), 1, 0.01,
        p.gravity, p.length, p.mass, p.damping, p.max_torque)
    th_ref, om_ref = _fine_pendulum(theta0, 0.0, u, 0.01, 100)
    assert abs(om[0] - om_ref) < 1e-3
    assert abs(th[0] - th_ref) < 1e-3


def test_energy_drift_below_one_percent():
    env = BatchEnv("pendulum-swingup", [0])
    env.set_state([[2.0, 0.0]])
    e0 = env.energy()[0]
    energies = []
    p = env.physics
    th, om = env.state[:, 0].copy(), env.state[:, 1].copy()
    for _ in range(1000):
        th, om, _ = _kernels.pendulum_substeps(th, om, np.zeros(1), 1, 0.01, p.gravity,
                                               p.length, p.mass, 0.0, p.max_torque)
        energies.append(0.5 * om[0] ** 2 + p.gravity * (1 + math.cos(th[0])))
    energies = np.array(energies)
    # symplectic Euler oscillates around the true energy; compare window means
    drift = abs(energies[-100:].mean() - energies[:100].mean())
    assert drift < 0.01 * e0


@pytest.mark.parametrize("name", ENV_NAMES)
def test_episode_length_and_reward_bounds(name):
    env = make_env(name, 3)
    env.reset()
    rng = np.random.default_rng(0)
    n = 0
    while True:
        res = env.step(rng.uniform(-1, 1, size=1))
        n += 1
        assert 0.0 <= res.reward <= env.spec.action_repeat
        assert np.all(np.isfinite(res.observation))
        if res.terminal:
            break
    assert n == env.spec.max_episode_steps
    env.reset()
    assert env.steps == 0


def test_same_seed_same_trajectory():
    acts = np.random.default_rng(1).uniform(-1, 1, size=(50, 1))
    runs = []
    for _ in range(2):
        env = make_env("cartpole-swingup", 5)
        obs = [env.reset()]
        obs += [env.step(a).observation for a in acts]
        runs.append(np.stack(obs))
    assert np.array_equal(runs[0], runs[1])


def test_actions_are_clipped():
    a, b = make_env("pendulum-swingup", 2), make_env("pendulum-swingup", 2)
    a.reset(), b.reset()
    assert np.array_equal(a.step([5.0]).observation, b.step([1.0]).observation)


def test_non_finite_action_rejected():
    env = make_env("pendulum-swingup", 0)
    env.reset()
    with pytest.raises(InputError):
        env.step([float("nan")])


def test_batch_env_matches_single_envs():
    seeds = [4, 5, 6]
    batch = BatchEnv("cartpole-balance", seeds)
    batch.reset()
    singles = [make_env("cartpole-balance", s) for s in seeds]
    for e in singles:
        e.reset()
    acts = np.random.default_rng(0).uniform(-1, 1, size=(20, 3, 1))
    for a in acts:
        obs, _, _ = batch.step(a)
        for i, e in enumerate(singles):
            assert np.array_equal(obs[i], e.step(a[i]).observation)


def test_envs_json_lists_all():
    rows = json.loads(list_envs_json())
    assert [r["name"] for r in rows] == list(ENV_NAMES)
    assert rows[0]["action_repeat"] == 6
