"""Recurrent state-space model: the fast, intuitive half of the world model.

The model pairs a deterministic GRU state ``h`` with a diagonal-Gaussian
stochastic state ``z``::

    h_t   = f(h_{t-1}, z_{t-1}, a_{t-1})        deterministic_step
    z_t   ~ q(z_t | h_t, embed(o_t))            posterior
    z^_t  ~ p(z^_t | h_t)                       prior
    r^_t  ~ N(reward(h_t, z_t), 1)
    o^_t  ~ N(decode(h_t, z_t), I)

Training minimises reconstruction NLL plus the two KL terms with opposite
stop-gradient placement (``KL[sg(q) || p]`` and ``KL[q || sg(p)]``), each
clamped from below at ``free_nats``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InputError, NumericError

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def check_finite(x: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NumericError(f"non-finite values in {what}")
    return x


@dataclass
class ModelState:
    h: torch.Tensor
    z: torch.Tensor

    @property
    def features(self) -> torch.Tensor:
        return torch.cat([self.h, self.z], dim=-1)

    def detach(self) -> "ModelState":
        return ModelState(self.h.detach(), self.z.detach())

    def reshape(self, *shape) -> "ModelState":
        return ModelState(self.h.reshape(*shape, self.h.shape[-1]),
                          self.z.reshape(*shape, self.z.shape[-1]))

    def __getitem__(self, idx) -> "ModelState":
        return ModelState(self.h[idx], self.z[idx])


@dataclass
class DiagGaussian:
    mean: torch.Tensor
    std: torch.Tensor

    def sample(self, generator: torch.Generator | None = None) -> torch.Tensor:
        eps = torch.randn(self.mean.shape, generator=generator,
                          dtype=self.mean.dtype, device=self.mean.device)
        return self.mean + self.std * eps

    def detach(self) -> "DiagGaussian":
        return DiagGaussian(self.mean.detach(), self.std.detach())


def kl_divergence(p: DiagGaussian, q: DiagGaussian) -> torch.Tensor:
    """KL(p || q) for diagonal Gaussians, summed over the last axis."""
    var_ratio = (p.std / q.std) ** 2
    mahal = ((p.mean - q.mean) / q.std) ** 2
    return (torch.log(q.std / p.std) + 0.5 * (var_ratio + mahal) - 0.5).sum(-1)


def gaussian_nll(target: torch.Tensor, mean: torch.Tensor) -> torch.Tensor:
    """Unit-variance Gaussian negative log-likelihood summed over the last axis."""
    return (0.5 * (target - mean) ** 2 + HALF_LOG_2PI).sum(-1)


@dataclass
class ImaginedTrajectory:
    states: ModelState      # leading axis H+1
    actions: torch.Tensor   # (H, ..., action_dim)
    rewards: torch.Tensor   # (H, ...), reward for arriving at states[t+1]

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]


@dataclass
class ObserveOutput:
    states: ModelState      # (B, L, ·)
    priors: DiagGaussian    # (B, L, state)
    posteriors: DiagGaussian


@dataclass
class S1Loss:
    total: torch.Tensor
    components: dict
    observed: ObserveOutput


class RSSM(nn.Module):
    def __init__(self, obs_dim: int, action_dim: int, belief_size: int = 200,
                 state_size: int = 30, hidden_size: int = 200,
                 embedding_size: int = 1024, min_std: float = 0.1):
        super().__init__()
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.belief_size = belief_size
        self.state_size = state_size
        self.min_std = min_std
        self.encoder = nn.Sequential(
            nn.Linear(obs_dim, hidden_size), nn.ReLU(),
            nn.Linear(hidden_size, embedding_size), nn.ReLU())
        self.rnn_input = nn.Sequential(nn.Linear(state_size + action_dim, hidden_size), nn.ReLU())
        self.cell = nn.GRUCell(hidden_size, belief_size)
        self.prior_net = nn.Sequential(
            nn.Linear(belief_size, hidden_size), nn.ReLU(),
            nn.Linear(hidden_size, 2 * state_size))
        self.posterior_net = nn.Sequential(
            nn.Linear(belief_size + embedding_size, hidden_size), nn.ReLU(),
            nn.Linear(hidden_size, 2 * state_size))
        feat = belief_size + state_size
        self.decoder = nn.Sequential(
            nn.Linear(feat, hidden_size), nn.ReLU(),
            nn.Linear(hidden_size, hidden_size), nn.ReLU(),
            nn.Linear(hidden_size, obs_dim))
        self.reward_head = nn.Sequential(
            nn.Linear(feat, hidden_size), nn.ReLU(),
            nn.Linear(hidden_size, hidden_size), nn.ReLU(),
            nn.Linear(hidden_size, 1))

    @classmethod
    def from_config(cls, cfg, obs_dim: int, action_dim: int) -> "RSSM":
        return cls(obs_dim, action_dim, cfg.belief_size, cfg.state_size,
                   cfg.hidden_size, cfg.embedding_size, cfg.min_std)

    @property
    def feature_size(self) -> int:
        return self.belief_size + self.state_size

    def _like(self):
        return next(self.parameters())

    def initial_state(self, *batch_shape: int) -> ModelState:
        p = self._like()
        return ModelState(p.new_zeros(*batch_shape, self.belief_size),
                          p.new_zeros(*batch_shape, self.state_size))

    # -- single-step pieces ------------------------------------------------
    def _step(self, h, z, action):
        x = self.rnn_input(torch.cat([z, action], dim=-1))
        lead = h.shape[:-1]
        h_new = self.cell(x.reshape(-1, x.shape[-1]), h.reshape(-1, h.shape[-1]))
        return h_new.reshape(*lead, self.belief_size)

    def deterministic_step(self, prev: ModelState, action: torch.Tensor) -> torch.Tensor:
        for t, what in ((prev.h, "h"), (prev.z, "z"), (action, "action")):
            check_finite(t, what)
        return self._step(prev.h, prev.z, action)

    def encode_obs(self, obs: torch.Tensor) -> torch.Tensor:
        check_finite(obs, "observation")
        return self.encoder(obs)

    def _gaussian(self, raw: torch.Tensor) -> DiagGaussian:
        mean, std_raw = raw.chunk(2, dim=-1)
        return DiagGaussian(mean, F.softplus(std_raw) + self.min_std)

    def prior(self, h: torch.Tensor) -> DiagGaussian:
        return self._gaussian(self.prior_net(h))

    def posterior(self, h: torch.Tensor, embedding: torch.Tensor) -> DiagGaussian:
        return self._gaussian(self.posterior_net(torch.cat([h, embedding], dim=-1)))

    def decode(self, h: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        return self.decoder(torch.cat([h, z], dim=-1))

    def predict_reward(self, h: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        return self.reward_head(torch.cat([h, z], dim=-1)).squeeze(-1)

    # -- sequences ---------------------------------------------------------
    def observe_sequence(self, obs, actions, is_first=None,
                         generator: torch.Generator | None = None,
                         start: ModelState | None = None) -> ObserveOutput:
        """Filter a (B, L) batch left to right with the posterior.

        ``actions[:, t]`` is the action that preceded ``obs[:, t]``.  The walk
        starts from ``start`` (default: the zero state) and restarts from the
        zero state wherever ``is_first`` is set.
        """
        check_finite(obs, "observations")
        check_finite(actions, "actions")
        B, L = obs.shape[:2]
        embed = self.encoder(obs)
        state = start if start is not None else self.initial_state(B)
        h, z = state.h, state.z
        if is_first is not None:
            reset = torch.as_tensor(is_first, dtype=torch.bool).to(obs.device)
        hs, zs, pri_m, pri_s, post_m, post_s = [], [], [], [], [], []
        for t in range(L):
            a = actions[:, t]
            if is_first is not None and t > 0:
                keep = (~reset[:, t]).to(h.dtype).unsqueeze(-1)
                h, z, a = h * keep, z * keep, a * keep
            h = self._step(h, z, a)
            pri = self.prior(h)
            post = self.posterior(h, embed[:, t])
            z = post.sample(generator)
            hs.append(h)
            zs.append(z)
            pri_m.append(pri.mean)
            pri_s.append(pri.std)
            post_m.append(post.mean)
            post_s.append(post.std)
        stack = lambda xs: torch.stack(xs, dim=1)
        return ObserveOutput(ModelState(stack(hs), stack(zs)),
                             DiagGaussian(stack(pri_m), stack(pri_s)),
                             DiagGaussian(stack(post_m), stack(post_s)))

    def s1_loss(self, obs, actions, rewards, is_first=None,
                generator: torch.Generator | None = None,
                free_nats: float = 3.0, kl_weight: float = 1.0) -> S1Loss:
        out = self.observe_sequence(obs, actions, is_first, generator)
        h, z = out.states.h, out.states.z
        pred_obs = gaussian_nll(obs, self.decode(h, z)).mean()
        pred_rew = gaussian_nll(rewards.unsqueeze(-1), self.predict_reward(h, z).unsqueeze(-1)).mean()
        pred = pred_obs + pred_rew
        kl_dyn = kl_divergence(out.posteriors.detach(), out.priors).mean()
        kl_rep = kl_divergence(out.posteriors, out.priors.detach()).mean()
        dyn = torch.clamp(kl_dyn, min=free_nats)
        rep = torch.clamp(kl_rep, min=free_nats)
        total = pred + kl_weight * dyn + kl_weight * rep
        components = {"pred": pred, "pred_obs": pred_obs, "pred_reward": pred_rew,
                      "dyn": dyn, "rep": rep, "kl_dyn_raw": kl_dyn, "kl_rep_raw": kl_rep}
        return S1Loss(total, components, out)

    # -- imagination -------------------------------------------------------
    def img_step(self, state: ModelState, action, generator=None, sample=True) -> ModelState:
        h = self._step(state.h, state.z, action)
        pri = self.prior(h)
        z = pri.sample(generator) if sample else pri.mean
        return ModelState(h, z)

    def imagine(self, start: ModelState, policy, horizon: int,
                generator: torch.Generator | None = None,
                sample: bool = True) -> ImaginedTrajectory:
        """Roll the prior forward ``horizon`` steps under ``policy(features)``.

        No observation enters after ``start``.
        """
        if horizon < 1:
            raise InputError("horizon must be >= 1")
        state = start
        hs, zs, acts, rews = [state.h], [state.z], [], []
        for _ in range(horizon):
            a = policy(state.features)
            state = self.img_step(state, a, generator, sample)
            hs.append(state.h)
            zs.append(state.z)
            acts.append(a)
            rews.append(self.predict_reward(state.h, state.z))
        return ImaginedTrajectory(ModelState(torch.stack(hs), torch.stack(zs)),
                                  torch.stack(acts), torch.stack(rews))

    def planning_return(self, start: ModelState, actions: torch.Tensor) -> torch.Tensor:
        """Sum of predicted rewards along prior-mean rollouts.

        ``actions`` has shape (J, H, action_dim); ``start`` is a single state
        broadcast to every candidate.  Returns (J,).
        """
        J, H = actions.shape[:2]
        state = ModelState(start.h.reshape(1, -1).expand(J, -1),
                           start.z.reshape(1, -1).expand(J, -1))
        total = actions.new_zeros(J)
        for t in range(H):
            state = self.img_step(state, actions[:, t], sample=False)
            total = total + self.predict_reward(state.h, state.z)
        return total
