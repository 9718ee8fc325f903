"""Training loop, evaluation protocols, metrics and checkpoints.

One training episode is ``collect_interval`` update rounds followed by one
environment episode collected with exploration.  A round is:

1. S1 step on a replay batch;
2. S2 step on the detached posterior transitions of that batch;
3. actor and critic steps on rollouts imagined from every posterior state
   (actor-critic planner only);
4. guided S1 step: S1 loss minus the logic-consistency bonus scored by a
   frozen copy of S2.

Randomness comes from three streams derived from the run seed: a numpy
PCG64 generator for replay sampling and seed-episode actions, a torch
generator for latent samples / operand swaps / exploration noise, and
per-episode environment seeds.  With a single torch thread the whole run is
a deterministic function of (config, seed), and a checkpoint captures every
stream so that resuming continues bit-for-bit.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import checkpoint as ckpt
from .config import RunConfig
from .envs import BatchEnv, env_spec, make_env
from .errors import ConfigError, NumericError
from .feedback import guided_s1_loss, s1_to_s2_batch
from .logic import RULE_NAMES, LogicNetwork
from .planners import (Actor, Critic, PlanConfig, act, actor_objective, apply_gradients,
                       critic_objective, plan_grad_mpc)
from .reasoning import ConsistencyReport, logic_heatmap, logical_consistency, s2_loss
from .replay import Episode, ReplayBuffer
from .rssm import RSSM, ModelState

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    ["step", "env_steps", "env_trials", "loss_pred", "loss_dyn", "loss_rep",
     "loss_logic_elbo", "loss_s2"]
    + list(RULE_NAMES)
    + ["eval_return_mean", "eval_return_std", "consistency_mean", "consistency_std"]
)
METRICS_HEADER = ",".join(METRIC_COLUMNS)

_LOSS_KEYS = ["loss_pred", "loss_dyn", "loss_rep", "loss_logic_elbo", "loss_s2"] + list(RULE_NAMES)


def derive_seed(*words: int) -> int:
    return int(np.random.SeedSequence([int(w) for w in words]).generate_state(1, np.uint64)[0] >> 1)


class Agent(nn.Module):
    """All learned parts: world model (S1), logic engine (S2), actor, critic."""

    def __init__(self, cfg: RunConfig, obs_dim: int, action_dim: int):
        super().__init__()
        torch.manual_seed(derive_seed(cfg.seed, 0))
        self.rssm = RSSM.from_config(cfg, obs_dim, action_dim)
        gen = torch.Generator().manual_seed(derive_seed(cfg.seed, 5))
        self.logic = LogicNetwork.from_config(cfg, self.rssm.feature_size, action_dim, gen)
        self.actor = Actor(self.rssm.feature_size, action_dim, cfg.hidden_size)
        self.critic = Critic(self.rssm.feature_size, cfg.hidden_size)


class Policy:
    """Stateful filter + action selection for batched environment interaction."""

    def __init__(self, agent: Agent, cfg: RunConfig, n: int, explore: bool,
                 generator: torch.Generator | None, sample_posterior: bool):
        self.agent = agent
        self.cfg = cfg
        self.explore = explore
        self.gen = generator
        self.sample_posterior = sample_posterior
        self.state = agent.rssm.initial_state(n)
        self.prev_action = torch.zeros(n, agent.rssm.action_dim)
        self.plan_cfg = PlanConfig.from_config(cfg) if cfg.planner == "mpc" else None

    @torch.no_grad()
    def __call__(self, obs: np.ndarray) -> np.ndarray:
        rssm = self.agent.rssm
        o = torch.as_tensor(obs, dtype=torch.float32)
        h = rssm.deterministic_step(self.state, self.prev_action)
        post = rssm.posterior(h, rssm.encode_obs(o))
        z = post.sample(self.gen) if self.sample_posterior else post.mean
        self.state = ModelState(h, z)
        if self.plan_cfg is None:
            a = act(self.agent.actor, self.state.features, self.explore,
                    self.cfg.exploration_noise, self.gen)
        else:
            rows = []
            for i in range(o.shape[0]):
                with torch.enable_grad():
                    plan = plan_grad_mpc(rssm, self.state[i], rssm.action_dim, self.plan_cfg, self.gen)
                rows.append(plan.actions[0])
            a = torch.stack(rows)
            if self.explore:
                a = a + self.cfg.exploration_noise * torch.randn(a.shape, generator=self.gen)
                a = a.clamp(-1.0, 1.0)
        self.prev_action = a
        return a.numpy().astype(np.float64)


def run_episode(env, policy_fn, max_steps: int):
    """Roll one single-copy env; returns an Episode and its undiscounted return."""
    obs = [env.reset()]
    acts, rews = [], []
    for _ in range(max_steps):
        a = policy_fn(obs[-1][None])[0]
        res = env.step(a)
        obs.append(res.observation)
        acts.append(np.clip(a, -1.0, 1.0))
        rews.append(res.reward)
        if res.terminal:
            break
    return Episode.from_transitions(obs, acts, rews), float(np.sum(rews))


@dataclass
class EvalResult:
    mean: float
    std: float
    returns: np.ndarray


class Trainer:
    """Owns every piece of mutable training state."""

    def __init__(self, cfg: RunConfig):
        cfg.validate()
        self.cfg = cfg
        self.spec = env_spec(cfg.env)
        self.max_steps = min(cfg.max_episode_length, self.spec.max_episode_steps)
        self.agent = Agent(cfg, self.spec.obs_dim, self.spec.action_dim)
        a = self.agent
        self.opt_s1 = torch.optim.Adam(a.rssm.parameters(), lr=cfg.s1_lr, eps=cfg.s1_adam_eps)
        self.opt_s2 = torch.optim.SGD(a.logic.parameters(), lr=cfg.s2_lr)
        self.opt_actor = torch.optim.Adam(a.actor.parameters(), lr=cfg.ac_lr, eps=cfg.ac_adam_eps)
        self.opt_critic = torch.optim.Adam(a.critic.parameters(), lr=cfg.ac_lr, eps=cfg.ac_adam_eps)
        self.replay = ReplayBuffer(self.spec.obs_dim, self.spec.action_dim, cfg.replay_size)
        self.np_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 1])))
        self.gen = torch.Generator().manual_seed(derive_seed(cfg.seed, 2))
        self.updates = 0
        self.env_steps = 0
        self.env_trials = 0
        self.episodes_done = 0
        self.seeded = False
        self.metrics: list[dict] = []
        self.on_row = None  # optional callback(row)

    # -- data collection ---------------------------------------------------
    def _env_seed(self, trial: int) -> int:
        return derive_seed(self.cfg.seed, 3, trial)

    def _add(self, episode: Episode) -> None:
        self.replay.add_episode(episode)
        self.env_trials += 1
        self.env_steps += (episode.length - 1) * self.spec.action_repeat

    def seed_replay(self) -> None:
        if self.seeded:
            return
        for _ in range(self.cfg.seed_episodes):
            env = make_env(self.cfg.env, self._env_seed(self.env_trials))
            rng = self.np_rng
            ep, _ = run_episode(env, lambda o: rng.uniform(-1, 1, (1, self.spec.action_dim)),
                                self.max_steps)
            self._add(ep)
        self.seeded = True

    def collect_episode(self) -> float:
        env = make_env(self.cfg.env, self._env_seed(self.env_trials))
        policy = Policy(self.agent, self.cfg, 1, explore=True, generator=self.gen,
                        sample_posterior=True)
        ep, ret = run_episode(env, policy, self.max_steps)
        self._add(ep)
        return ret

    # -- updates -----------------------------------------------------------
    def update_round(self) -> dict:
        cfg, a, gen = self.cfg, self.agent, self.gen
        b = self.replay.sample_sequences(cfg.batch_size, cfg.seq_len, self.np_rng)
        obs = torch.from_numpy(b.observations)
        actions = torch.from_numpy(b.actions)
        rewards = torch.from_numpy(b.rewards)
        first = torch.from_numpy(b.is_first)
        clip = cfg.grad_clip

        # 1. world model
        out = a.rssm.s1_loss(obs, actions, rewards, first, gen, cfg.free_nats, cfg.kl_weight)
        apply_gradients(out.total, a.rssm.parameters(), self.opt_s1, clip)

        # 2. logic engine on detached posterior transitions
        sup = s1_to_s2_batch(out.observed.states, actions)
        n2 = cfg.s2_batch or cfg.batch_size
        s2_total, s2c = _s2(a.logic, sup.states[:n2], sup.actions[:n2], cfg, gen)
        apply_gradients(s2_total, a.logic.parameters(), self.opt_s2, clip)

        # 3. actor-critic in imagination
        if cfg.planner == "ac":
            start = out.observed.states.detach().reshape(-1)
            traj = a.rssm.imagine(start, lambda f: a.actor.sample(f, gen), cfg.horizon, gen)
            apply_gradients(actor_objective(traj, a.critic, cfg.discount, cfg.return_lambda),
                            a.actor.parameters(), self.opt_actor, clip)
            apply_gradients(critic_objective(traj, a.critic, cfg.discount, cfg.return_lambda),
                            a.critic.parameters(), self.opt_critic, clip)

        # 4. logic-guided world-model step
        frozen = a.logic.frozen_copy()
        g_loss, _, term = guided_s1_loss(a.rssm, frozen, obs, actions, rewards, first, gen,
                                         cfg.logic_weight, cfg.free_nats, cfg.kl_weight)
        apply_gradients(g_loss, a.rssm.parameters(), self.opt_s1, clip)
        self.updates += 1

        row = {"loss_pred": out.components["pred"].item(),
               "loss_dyn": out.components["dyn"].item(),
               "loss_rep": out.components["rep"].item(),
               "loss_logic_elbo": term.item(),
               "loss_s2": s2_total.item()}
        row.update(zip(RULE_NAMES, s2c["residuals"].tolist()))
        return row

    def train_episode(self) -> dict:
        rounds = []
        for _ in range(self.cfg.collect_interval):
            try:
                rounds.append(self.update_round())
            except NumericError as exc:
                raise NumericError(f"update {self.updates} (episode {self.episodes_done}): {exc}") from None
        self.collect_episode()
        self.episodes_done += 1
        row = self._row(rounds)
        interval = self.cfg.eval_interval
        if interval and self.episodes_done % interval == 0:
            self._attach_eval(row)
        self._emit(row)
        return row

    def run(self, episodes: int | None = None) -> "Trainer":
        """Seed the replay (once), then train ``episodes`` more episodes."""
        self.seed_replay()
        n = self.cfg.train_episodes - self.episodes_done if episodes is None else episodes
        for _ in range(max(n, 0)):
            self.train_episode()
        return self

    # -- metrics -----------------------------------------------------------
    def _row(self, rounds: list[dict]) -> dict:
        row = {"step": self.updates, "env_steps": self.env_steps, "env_trials": self.env_trials}
        for k in _LOSS_KEYS:
            row[k] = float(np.mean([r[k] for r in rounds])) if rounds else None
        for k in ("eval_return_mean", "eval_return_std", "consistency_mean", "consistency_std"):
            row[k] = None
        return row

    def _attach_eval(self, row: dict) -> None:
        ev = evaluate(self, self.cfg.eval_episodes)
        rep = consistency_table(self, [self.cfg.horizon], self.cfg.reasoning_depth)[0]
        row.update(eval_return_mean=ev.mean, eval_return_std=ev.std,
                   consistency_mean=rep.mean, consistency_std=rep.std)

    def _emit(self, row: dict) -> None:
        for k in _LOSS_KEYS:
            v = row.get(k)
            if v is not None and not math.isfinite(v):
                raise NumericError(f"non-finite {k} at update {self.updates}: {v}")
        self.metrics.append(row)
        if self.on_row is not None:
            self.on_row(row)

    def evaluation_row(self, episodes: int | None = None, horizon: int | None = None) -> dict:
        """Append a stand-alone evaluation row to the metrics stream."""
        row = self._row([])
        ev = evaluate(self, episodes or self.cfg.eval_episodes)
        rep = consistency_table(self, [horizon or self.cfg.horizon], self.cfg.reasoning_depth)[0]
        row.update(eval_return_mean=ev.mean, eval_return_std=ev.std,
                   consistency_mean=rep.mean, consistency_std=rep.std)
        self._emit(row)
        return row

    # -- persistence -------------------------------------------------------
    def save(self, path) -> Path:
        blocks = ckpt.BlockWriter()
        for name, t in self.agent.state_dict().items():
            blocks.add_tensor(f"agent/{name}", t)
        opts = {}
        for key, opt in self._optimizers().items():
            opts[key] = ckpt.add_optimizer(blocks, f"opt/{key}", opt)
        blocks.add_tensor("rng/torch", self.gen.get_state())
        blocks.add_bytes("replay", self.replay.to_bytes())
        manifest = {
            "config": self.cfg.to_dict(),
            "counters": {"updates": self.updates, "env_steps": self.env_steps,
                         "env_trials": self.env_trials, "episodes_done": self.episodes_done,
                         "seeded": self.seeded},
            "optimizers": opts,
            "rng": {"numpy": _jsonable(self.np_rng.bit_generator.state)},
            "metrics": self.metrics,
        }
        return ckpt.write_atomic(path, ckpt.encode(manifest, blocks))

    @classmethod
    def load(cls, path, cfg_overrides: dict | None = None) -> "Trainer":
        manifest, blocks = ckpt.read(path)
        cfg_dict = dict(manifest["config"])
        if cfg_overrides:
            cfg_dict.update(cfg_overrides)
        cfg = RunConfig.from_dict(cfg_dict)
        if cfg.env != manifest["config"]["env"]:
            raise ConfigError("checkpoint environment cannot be overridden")
        tr = cls(cfg)
        state = {k[len("agent/"):]: v for k, v in blocks.items() if k.startswith("agent/")}
        tr.agent.load_state_dict(state)
        for key, opt in tr._optimizers().items():
            ckpt.load_optimizer(opt, manifest["optimizers"][key], f"opt/{key}", blocks)
        tr.gen.set_state(blocks["rng/torch"])
        tr.np_rng.bit_generator.state = manifest["rng"]["numpy"]
        tr.replay = ReplayBuffer.from_bytes(blocks["replay"], cfg.replay_size)
        c = manifest["counters"]
        tr.updates, tr.env_steps, tr.env_trials = c["updates"], c["env_steps"], c["env_trials"]
        tr.episodes_done, tr.seeded = c["episodes_done"], c["seeded"]
        tr.metrics = list(manifest["metrics"])
        return tr

    def _optimizers(self) -> dict:
        return {"s1": self.opt_s1, "s2": self.opt_s2,
                "actor": self.opt_actor, "critic": self.opt_critic}


def _s2(logic, states, actions, cfg, gen):
    return s2_loss(logic, states, actions, cfg.reasoning_depth, gen,
                   cfg.reg_weight, cfg.l2_weight, cfg.reg_samples)


def _jsonable(state: dict) -> dict:
    return json.loads(json.dumps(state, default=int))


def train(cfg: RunConfig, out_dir=None, on_row=None) -> Trainer:
    """Run the full training loop; writes checkpoint and metrics when ``out_dir`` is given."""
    tr = Trainer(cfg)
    tr.on_row = on_row
    tr.run()
    if out_dir is not None:
        out = Path(out_dir)
        tr.save(out / "checkpoint.dmw")
        export_metrics(tr.metrics, out / "metrics.csv", "csv")
    return tr


# --------------------------------------------------------------------------
# evaluation protocols
# --------------------------------------------------------------------------

def _eval_seeds(seed: int, episodes: int) -> list[int]:
    return [derive_seed(seed, 4, i) for i in range(episodes)]


def _batched_returns(env_name: str, seeds, max_steps: int, make_policy, chunk: int) -> np.ndarray:
    out = []
    for lo in range(0, len(seeds), chunk):
        part = seeds[lo:lo + chunk]
        env = BatchEnv(env_name, part)
        obs = env.reset()
        policy = make_policy(len(part), lo)
        total = np.zeros(len(part))
        for _ in range(max_steps):
            obs, rew, terminal = env.step(policy(obs))
            total += rew
            if terminal:
                break
        out.append(total)
    return np.concatenate(out)


def evaluate(trainer: Trainer, episodes: int = 100, chunk: int | None = None) -> EvalResult:
    """Deterministic-action returns over ``episodes`` seeded test episodes.

    Episodes are simulated in chunks of ``chunk`` (default: all at once).
    Seeds are fixed per episode, so chunking only changes float32 rounding
    inside the batched networks, not which episodes are played.
    """
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    cfg = trainer.cfg
    seeds = _eval_seeds(cfg.seed, episodes)
    make = lambda n, lo: Policy(trainer.agent, cfg, n, explore=False, generator=None,
                                sample_posterior=False)
    rets = _batched_returns(cfg.env, seeds, trainer.max_steps, make, chunk or episodes)
    return EvalResult(float(rets.mean()), float(rets.std()), rets)


def evaluate_random(cfg: RunConfig, episodes: int = 100, chunk: int | None = None) -> EvalResult:
    """Uniform-random-action baseline on the same evaluation seeds."""
    seeds = _eval_seeds(cfg.seed, episodes)
    max_steps = min(cfg.max_episode_length, env_spec(cfg.env).max_episode_steps)
    adim = env_spec(cfg.env).action_dim

    def make(n, lo):
        rngs = [np.random.default_rng(derive_seed(s, 9)) for s in seeds[lo:lo + n]]
        return lambda obs: np.stack([r.uniform(-1, 1, adim) for r in rngs])

    rets = _batched_returns(cfg.env, seeds, max_steps, make, chunk or episodes)
    return EvalResult(float(rets.mean()), float(rets.std()), rets)


@torch.no_grad()
def posterior_starts(trainer: Trainer, n: int) -> ModelState:
    """``n`` posterior states taken at the end of replay windows (fixed stream)."""
    cfg = trainer.cfg
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 6])))
    gen = torch.Generator().manual_seed(derive_seed(cfg.seed, 7))
    b = trainer.replay.sample_sequences(n, cfg.seq_len, rng)
    out = trainer.agent.rssm.observe_sequence(
        torch.from_numpy(b.observations), torch.from_numpy(b.actions),
        torch.from_numpy(b.is_first), gen)
    return out.states[:, -1]


@torch.no_grad()
def imagine_trajectories(trainer: Trainer, start: ModelState, horizon: int):
    """Imagined (states (E, H+1, D), actions (E, H, A)) under the current planner."""
    cfg, a = trainer.cfg, trainer.agent
    gen = torch.Generator().manual_seed(derive_seed(cfg.seed, 8, horizon))
    if cfg.planner == "ac":
        traj = a.rssm.imagine(start, a.actor.mode, horizon, gen)
        acts = traj.actions
    else:
        pc = PlanConfig.from_config(cfg)
        pc = PlanConfig(pc.iterations, pc.candidates, horizon, pc.learning_rates,
                        pc.init_mean, pc.init_std)
        plans = []
        for i in range(start.h.shape[0]):
            with torch.enable_grad():
                plans.append(plan_grad_mpc(a.rssm, start[i], a.rssm.action_dim, pc, gen).actions)
        plan = torch.stack(plans, dim=1)  # (H, E, A)
        it = iter(plan)
        traj = a.rssm.imagine(start, lambda f: next(it), horizon, gen)
        acts = traj.actions
    states = traj.states.features.transpose(0, 1)
    return states, acts.transpose(0, 1)


def consistency_table(trainer: Trainer, horizons, depth: int,
                      logic: LogicNetwork | None = None,
                      starts: int | None = None) -> list[ConsistencyReport]:
    """Logical consistency of imagined rollouts for each horizon.

    ``logic`` overrides the scoring network (e.g. an untrained one) while
    keeping the imagined trajectories identical.
    """
    net = logic or trainer.agent.logic
    start = posterior_starts(trainer, starts or trainer.cfg.consistency_starts)
    rows = []
    for H in horizons:
        states, acts = imagine_trajectories(trainer, start, int(H))
        rows.append(logical_consistency(net, states, acts, depth))
    return rows


def heatmap(trainer: Trainer, alpha: int) -> np.ndarray:
    """alpha x alpha logic-correlation matrix for one imagined rollout of length alpha."""
    start = posterior_starts(trainer, 1)
    states, acts = imagine_trajectories(trainer, start, alpha)
    return logic_heatmap(trainer.agent.logic, states[0], acts[0])


# --------------------------------------------------------------------------
# metrics export
# --------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_to_csv(rows) -> str:
    out = io.StringIO()
    out.write(METRICS_HEADER + "\n")
    w = csv.writer(out, lineterminator="\n")
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in METRIC_COLUMNS])
    return out.getvalue()


def metrics_from_csv(text: str) -> list[dict]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if ",".join(header) != METRICS_HEADER:
        raise ConfigError("metrics CSV header does not match the schema")
    rows = []
    for rec in reader:
        row = {}
        for c, raw in zip(header, rec):
            if raw == "":
                row[c] = None
            elif c in ("step", "env_steps", "env_trials"):
                row[c] = int(raw)
            else:
                row[c] = float(raw)
        rows.append(row)
    return rows


def export_metrics(rows, path, fmt: str = "csv") -> Path:
    path = Path(path)
    if fmt == "csv":
        text = metrics_to_csv(rows)
    elif fmt == "json":
        text = json.dumps([{c: r.get(c) for c in METRIC_COLUMNS} for r in rows], indent=1) + "\n"
    else:
        raise ConfigError(f"unknown metrics format {fmt!r}; use csv or json")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc.strerror}") from exc
    return path


def load_metrics(path) -> list[dict]:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return json.loads(text)
    return metrics_from_csv(text)
