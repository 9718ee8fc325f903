"""Decision making on top of the world model.

Two planners share the imagined-rollout machinery:

* actor-critic: a tanh-squashed Gaussian actor trained by backpropagating
  lambda-returns through imagined latent rollouts, and a value critic
  regressed onto those returns;
* gradient MPC: sample candidate action sequences, refine them by gradient
  ascent on the predicted return, and execute the first action of the best.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InputError
from .rssm import check_finite


def lambda_returns(rewards: torch.Tensor, values: torch.Tensor, gamma: float, lam: float) -> torch.Tensor:
    """TD(lambda) targets along the leading (time) axis.

    ``rewards[t]`` is received on the transition out of step ``t`` and
    ``values`` has one more entry than ``rewards`` (the bootstrap value at the
    horizon).  Uses the backward recursion

        V_t = r_t + gamma * ((1 - lam) * v_{t+1} + lam * V_{t+1}),  V_H = v_H
    """
    H = rewards.shape[0]
    if values.shape[0] != H + 1 or values.shape[1:] != rewards.shape[1:]:
        raise InputError(
            f"values must have shape (H+1, ...) for rewards (H, ...); got "
            f"{tuple(values.shape)} and {tuple(rewards.shape)}")
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise InputError("gamma and lambda must lie in [0, 1]")
    out = [None] * H
    nxt = values[H]
    for t in reversed(range(H)):
        nxt = rewards[t] + gamma * ((1.0 - lam) * values[t + 1] + lam * nxt)
        out[t] = nxt
    return torch.stack(out)


class Actor(nn.Module):
    def __init__(self, feature_size: int, action_dim: int, hidden_size: int = 200,
                 init_std: float = 5.0, min_std: float = 1e-4, mean_scale: float = 5.0):
        super().__init__()
        self.action_dim = action_dim
        self.net = nn.Sequential(
            nn.Linear(feature_size, hidden_size), nn.ReLU(),
            nn.Linear(hidden_size, hidden_size), nn.ReLU(),
            nn.Linear(hidden_size, 2 * action_dim))
        self._raw_init_std = math.log(math.exp(init_std) - 1.0)
        self.min_std = min_std
        self.mean_scale = mean_scale

    def forward(self, features):
        mean, std = self.net(features).chunk(2, dim=-1)
        mean = self.mean_scale * torch.tanh(mean / self.mean_scale)
        std = F.softplus(std + self._raw_init_std) + self.min_std
        return mean, std

    def sample(self, features, generator=None):
        """Reparameterised squashed sample."""
        mean, std = self(features)
        eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        return torch.tanh(mean + std * eps)

    def mode(self, features):
        return torch.tanh(self(features)[0])


class Critic(nn.Module):
    def __init__(self, feature_size: int, hidden_size: int = 200):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(feature_size, hidden_size), nn.ReLU(),
            nn.Linear(hidden_size, hidden_size), nn.ReLU(),
            nn.Linear(hidden_size, 1))

    def forward(self, features):
        return self.net(features).squeeze(-1)


def act(actor: Actor, features, explore: bool, noise_std: float = 0.3, generator=None):
    """Environment action: the squashed mean, plus clipped Gaussian noise when exploring."""
    check_finite(features, "policy input")
    with torch.no_grad():
        a = actor.mode(features)
        if explore:
            a = a + noise_std * torch.randn(a.shape, generator=generator, dtype=a.dtype)
            a = a.clamp(-1.0, 1.0)
    return a


def actor_objective(traj, critic: Critic, gamma: float, lam: float) -> torch.Tensor:
    """Negative mean lambda-return of an imagined trajectory (to minimise)."""
    values = critic(traj.states.features)
    returns = lambda_returns(traj.rewards, values, gamma, lam)
    return -returns.mean()


def critic_objective(traj, critic: Critic, gamma: float, lam: float) -> torch.Tensor:
    """Half squared error to stop-gradient lambda-return targets."""
    feats = traj.states.features.detach()
    values = critic(feats)
    with torch.no_grad():
        target = lambda_returns(traj.rewards.detach(), values.detach(), gamma, lam)
    return 0.5 * ((values[:-1] - target) ** 2).mean()


def apply_gradients(loss: torch.Tensor, params, optimizer: torch.optim.Optimizer,
                    clip: float | None = None, retain_graph: bool = False) -> float:
    """Step ``optimizer`` on ``d loss / d params`` only; other tensors keep no grads.

    Returns the pre-clip gradient norm.
    """
    params = list(params)
    check_finite(loss, "loss")
    grads = torch.autograd.grad(loss, params, retain_graph=retain_graph, allow_unused=True)
    for p, g in zip(params, grads):
        p.grad = torch.zeros_like(p) if g is None else g
    if clip is not None:
        norm = torch.nn.utils.clip_grad_norm_(params, clip)
    else:
        norm = torch.sqrt(sum((p.grad ** 2).sum() for p in params))
    optimizer.step()
    for p in params:
        p.grad = None
    return float(norm)


# --------------------------------------------------------------------------
# gradient-based MPC
# --------------------------------------------------------------------------

@dataclass
class PlanConfig:
    iterations: int = 40
    candidates: int = 1000
    horizon: int = 30
    learning_rates: tuple = (0.1, 0.01, 0.005, 0.0001)
    init_mean: float = 0.0
    init_std: float = 0.5

    def __post_init__(self):
        if self.iterations < 0 or self.candidates < 1 or self.horizon < 1:
            raise InputError("need iterations >= 0, candidates >= 1, horizon >= 1")
        rates = tuple(float(r) for r in self.learning_rates)
        if not rates or any(b > a for a, b in zip(rates, rates[1:])):
            raise InputError("learning-rate schedule must be non-empty and nonincreasing")
        self.learning_rates = rates

    @classmethod
    def from_config(cls, cfg) -> "PlanConfig":
        return cls(cfg.mpc_iters, cfg.mpc_candidates, cfg.horizon,
                   cfg.mpc_lr_schedule(), 0.0, cfg.mpc_init_std)

    def lr_at(self, i: int) -> float:
        phases = len(self.learning_rates)
        return self.learning_rates[min(i * phases // max(self.iterations, 1), phases - 1)]


@dataclass
class PlanResult:
    actions: torch.Tensor   # (H, action_dim), best candidate
    best_return: float
    history: list           # best candidate return before each iteration and after the last


def plan_grad_mpc(model, start, action_dim: int, cfg: PlanConfig,
                  generator: torch.Generator | None = None) -> PlanResult:
    """Refine sampled action sequences by gradient ascent on predicted return.

    ``model.planning_return(start, actions)`` must map (J, H, A) candidates
    to (J,) differentiable returns.  Every iterate is clipped to [-1, 1].
    """
    shape = (cfg.candidates, cfg.horizon, action_dim)
    dtype = next(model.parameters()).dtype if isinstance(model, nn.Module) else torch.float32
    a = cfg.init_mean + cfg.init_std * torch.randn(shape, generator=generator, dtype=dtype)
    a = a.clamp(-1.0, 1.0)
    history = []
    for i in range(cfg.iterations):
        a = a.detach().requires_grad_(True)
        ret = model.planning_return(start, a)
        check_finite(ret, "planned returns")
        (grad,) = torch.autograd.grad(ret.sum(), a)
        history.append(float(ret.detach().max()))
        a = (a + cfg.lr_at(i) * grad).clamp(-1.0, 1.0)
    with torch.no_grad():
        ret = model.planning_return(start, a.detach())
    best = int(torch.argmax(ret))
    history.append(float(ret[best]))
    return PlanResult(a[best].detach(), float(ret[best]), history)

