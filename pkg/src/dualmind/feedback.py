"""Coupling between the two systems.

S1 -> S2: posterior transitions ``(s_t, a_t, s_{t+1})`` become constant
training data for the logic network.

S2 -> S1: a frozen copy of the logic network scores every posterior
transition with ``ln Sim(AND(v_{t-1}, m_{t-1}) -> v_t, T)`` and that log
consistency is added to the S1 evidence bound, so the world model is nudged
toward transitions the logic engine considers lawful.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import InputError
from .logic import LogicNetwork
from .rssm import RSSM, ModelState, S1Loss


@dataclass
class LogicSupervisionBatch:
    states: torch.Tensor   # (B, L, D)  s_0 .. s_{L-1}
    actions: torch.Tensor  # (B, L-1, A) a_t taken at s_t

    @property
    def prev(self) -> torch.Tensor:
        return self.states[:, :-1]

    @property
    def next(self) -> torch.Tensor:
        return self.states[:, 1:]

    @property
    def n_triples(self) -> int:
        return self.actions.shape[0] * self.actions.shape[1]


def s1_to_s2_batch(states: ModelState, row_actions: torch.Tensor) -> LogicSupervisionBatch:
    """Detached transition triples from a posterior state sequence.

    ``row_actions[:, t]`` is the action that led *into* row ``t`` (replay row
    alignment), so the action taken at ``s_t`` is ``row_actions[:, t + 1]``.
    """
    feats = states.features.detach()
    if feats.shape[1] < 2:
        raise InputError("need at least two states per sequence")
    return LogicSupervisionBatch(feats, row_actions[:, 1:].detach())


def logic_elbo_term(net: LogicNetwork, s_t, s_prev, a_prev) -> torch.Tensor:
    """ln Sim(IMPLY(AND(v_{t-1}, m_{t-1}), v_t), T), elementwise over leading axes.

    Pass a frozen network (see :meth:`LogicNetwork.frozen_copy`) so that only
    the latents receive gradient.
    """
    v_prev = net.embed_state(s_prev)
    m_prev = net.embed_action(s_prev, a_prev)
    phi = net.gate_imply(net.gate_and(v_prev, m_prev), net.embed_state(s_t))
    return torch.log(net.truthiness(phi))


def guided_s1_loss(rssm: RSSM, frozen: LogicNetwork, obs, actions, rewards, is_first=None,
                   generator=None, logic_weight: float = 0.1, free_nats: float = 3.0,
                   kl_weight: float = 1.0) -> tuple[torch.Tensor, S1Loss, torch.Tensor]:
    """S1 loss minus ``logic_weight`` times the mean per-transition log consistency.

    Returns ``(loss, s1 output, mean logic term)``.
    """
    out = rssm.s1_loss(obs, actions, rewards, is_first, generator, free_nats, kl_weight)
    feats = out.observed.states.features
    term = logic_elbo_term(frozen, feats[:, 1:], feats[:, :-1], actions[:, 1:]).mean()
    return out.total - logic_weight * term, out, term
