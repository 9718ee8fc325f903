"""Hierarchical reasoning over latent trajectories.

For a trajectory of model states ``s_0..s_n`` and actions ``a_0..a_{n-1}``:

    v_t = embed_state(s_t),  m_t = embed_action(s_t, a_t)
    c_t = AND(v_t, m_t)                                   local composition
    phi^alpha_t = AND(c_{t-alpha}, ..., c_t) -> v_{t+1}   depth-alpha rule
    chain = AND(phi_0, ..., phi_{n-1}) -> T               global chain

Windows that would reach before ``c_0`` are truncated, so the effective depth
at step ``t`` is ``min(alpha, t)``.

The batched loss evaluates every window ``c_s..c_t`` with ``t - s <= depth``
once, growing folds one composition at a time, which costs
O(n * depth) gate rows instead of O(n * depth^2).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
import torch

from .errors import InputError
from .logic import LogicNetwork


def compose_local(net: LogicNetwork, v, m, generator=None):
    return net.gate_and(v, m, generator)


def window_bounds(t: int, alpha: int) -> tuple[int, int]:
    """Index range [start, t] of compositions feeding phi^alpha_t."""
    if t < 0 or alpha < 0:
        raise InputError("t and alpha must be non-negative")
    return max(0, t - alpha), t


def fold_and(net: LogicNetwork, items, generator=None):
    items = list(items)
    if not items:
        raise InputError("cannot fold an empty window")
    out = items[0]
    for x in items[1:]:
        out = net.gate_and(out, x, generator)
    return out


def implication_step(net: LogicNetwork, window, v_next, generator=None):
    """phi = AND-fold(window) -> v_next.

    With a generator the window order is permuted and AND/OR operands are
    swapped at random; without one the fold is strictly left to right.
    """
    items = list(window)
    if not items:
        raise InputError("implication window must be non-empty")
    if generator is not None and len(items) > 1:
        order = torch.randperm(len(items), generator=generator).tolist()
        items = [items[i] for i in order]
    return net.gate_imply(fold_and(net, items, generator), v_next, generator)


def global_chain(net: LogicNetwork, phis, generator=None):
    """AND-fold of all implications, implied toward the truth anchor."""
    items = list(phis)
    if not items:
        raise InputError("global chain needs at least one implication")
    folded = fold_and(net, items, generator)
    return net.gate_imply(folded, net.truth.expand_as(folded), generator)


# --------------------------------------------------------------------------
# batched evaluation
# --------------------------------------------------------------------------

@dataclass
class Embedded:
    v: torch.Tensor  # (B, n+1, d)
    m: torch.Tensor  # (B, n, d)
    c: torch.Tensor  # (B, n, d)


def embed_trajectory(net: LogicNetwork, states, actions, generator=None) -> Embedded:
    if states.ndim != 3 or actions.ndim != 3:
        raise InputError("expected states (B, n+1, D) and actions (B, n, A)")
    if states.shape[1] < 2 or actions.shape[1] != states.shape[1] - 1:
        raise InputError(
            f"need n+1 >= 2 states and n actions, got {states.shape[1]} and {actions.shape[1]}")
    v = net.embed_state(states)
    m = net.embed_action(states[:, :-1], actions)
    c = compose_local(net, v[:, :-1], m, generator)
    return Embedded(v, m, c)


def window_implications(net: LogicNetwork, emb: Embedded, depth: int, generator=None):
    """``imp[k][:, s]`` = AND(c_s..c_{s+k}) -> v_{s+k+1} for k = 0..min(depth, n-1)."""
    n = emb.c.shape[1]
    kmax = min(depth, n - 1)
    fold = emb.c
    imps = [net.gate_imply(fold, emb.v[:, 1:], generator)]
    for k in range(1, kmax + 1):
        fold = net.gate_and(fold[:, :-1], emb.c[:, k:], generator)
        imps.append(net.gate_imply(fold, emb.v[:, k + 1:], generator))
    return imps


def _depth_index(n: int, alphas):
    """(k, start) arrays for phi^alpha_t over alphas x t = 0..n-1."""
    t = np.arange(n)[None, :]
    k = np.minimum(np.asarray(alphas)[:, None], t)
    return k, t - k


def _table(per_k, n: int) -> torch.Tensor:
    """Stack ragged (B, n-k, ...) tensors into a zero-padded (B, K+1, n, ...) table."""
    rows = []
    for k, x in enumerate(per_k):
        pad = x.new_zeros((x.shape[0], k) + x.shape[2:])
        rows.append(torch.cat([x, pad], dim=1))
    return torch.stack(rows, dim=1)


def select_depths(per_k, n: int, alphas) -> torch.Tensor:
    """Gather phi^alpha_t entries: (B, len(alphas), n, ...)."""
    k_idx, s_idx = _depth_index(n, alphas)
    return _table(per_k, n)[:, torch.as_tensor(k_idx), torch.as_tensor(s_idx)]


def s2_loss(net: LogicNetwork, states, actions, depth: int, generator=None,
            reg_weight: float = 1.0, l2_weight: float = 1e-5, reg_samples: int = 256):
    """System-2 objective on constant trajectories.

    ``sum_alpha mean_t [Sim(phi, F) - Sim(phi, T)] + reg_weight * L_reg
    + l2_weight * L_l2``.  Returns ``(total, components)``.
    """
    emb = embed_trajectory(net, states, actions, generator)
    n = emb.c.shape[1]
    imps = window_implications(net, emb, depth, generator)
    f = net.false_vec()
    gap = [net.sim(x, f) - net.sim(x, net.truth) for x in imps]
    per_depth = select_depths(gap, n, range(depth + 1)).mean(dim=(0, 2))
    logic = per_depth.sum()
    pool = torch.cat([emb.v.reshape(-1, net.d), emb.m.reshape(-1, net.d)])
    if pool.shape[0] > reg_samples:
        if generator is not None:
            pick = torch.randperm(pool.shape[0], generator=generator)[:reg_samples]
        else:
            pick = torch.arange(reg_samples)
        pool = pool[pick]
    reg, residuals = net.regularizer_loss(pool, generator)
    l2 = (emb.v ** 2).sum() + (emb.m ** 2).sum() + net.l2_penalty()
    total = logic + reg_weight * reg + l2_weight * l2
    comps = {"logic": logic, "per_depth": per_depth, "reg": reg,
             "residuals": residuals, "l2": l2}
    return total, comps


def chain_truth(net: LogicNetwork, states, actions, depth: int):
    """Sim(L^depth, T) per trajectory: the global-chain diagnostic."""
    emb = embed_trajectory(net, states, actions)
    imps = window_implications(net, emb, depth)
    n = emb.c.shape[1]
    phis = select_depths(imps, n, [depth])[:, 0]
    return net.truthiness(global_chain(net, phis.unbind(1)))


# --------------------------------------------------------------------------
# evaluation metrics
# --------------------------------------------------------------------------

@dataclass
class ConsistencyReport:
    horizon: int
    depth: int
    mean: float
    std: float
    episodes: int
    per_episode: np.ndarray | None = None

    CSV_HEADER = ("env", "horizon", "depth", "mean", "std", "episodes")

    def csv_row(self, env: str) -> list:
        return [env, self.horizon, self.depth, f"{self.mean:.6f}", f"{self.std:.6f}", self.episodes]


def consistency_csv(rows, env: str) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(ConsistencyReport.CSV_HEADER)
    for r in rows:
        w.writerow(r.csv_row(env))
    return out.getvalue()


@torch.no_grad()
def step_consistency(net: LogicNetwork, states, actions, alpha: int) -> torch.Tensor:
    """Sim(phi^alpha_t, T) for every trajectory and step: (E, n)."""
    emb = embed_trajectory(net, states, actions)
    n = emb.c.shape[1]
    imps = window_implications(net, emb, alpha)
    truth = [net.truthiness(x) for x in imps]
    return select_depths(truth, n, [alpha])[:, 0]


def logical_consistency(net: LogicNetwork, states, actions, alpha: int) -> ConsistencyReport:
    """Mean and spread of chain truth over trajectories.

    Each trajectory is summarised by its mean over steps; the report's mean
    and (population) std are taken over those per-trajectory means.
    """
    if states.ndim == 2:
        states, actions = states[None], actions[None]
    scores = step_consistency(net, states, actions, alpha)
    per_ep = scores.mean(dim=1).double().cpu().numpy()
    return ConsistencyReport(horizon=states.shape[1] - 1, depth=alpha,
                             mean=float(per_ep.mean()), std=float(per_ep.std()),
                             episodes=len(per_ep), per_episode=per_ep)


@torch.no_grad()
def logic_heatmap(net: LogicNetwork, states, actions) -> np.ndarray:
    """M[i, j] = Sim(IMPLY(AND(v_i, m_j), v_n), T) for one trajectory of n+1 states."""
    if states.ndim != 2 or actions.ndim != 2 or states.shape[0] != actions.shape[0] + 1:
        raise InputError("expected states (n+1, D) and actions (n, A)")
    n = actions.shape[0]
    if n < 1:
        raise InputError("heatmap needs at least one step")
    v = net.embed_state(states[:n])
    m = net.embed_action(states[:n], actions)
    target = net.embed_state(states[n])
    vi = v[:, None, :].expand(n, n, -1)
    mj = m[None, :, :].expand(n, n, -1)
    phi = net.gate_imply(net.gate_and(vi, mj), target.expand(n, n, -1))
    return net.truthiness(phi).double().cpu().numpy()
