"""Neural logic engine: the deliberate, rule-following half of the world model.

Model states and actions are embedded into a d-dimensional logic space where
four learned gates act on vectors:

    AND(v, m) = MLP([v, m]) + rowmean(conv3x3(v ⊗ m)) + b_k
    OR(v, m)  = same form, separate weights
    NOT(v)    = v + MLP(v)
    IMPLY(v, m) = OR(NOT(v), m)

Truth is a fixed random unit vector ``T`` and falsity is ``F = NOT(T)``.  The
similarity ``sim(v, m) = sigmoid(kappa * cos(v, m))`` scores how true a vector
is.  Fourteen algebraic-law residuals keep the gates behaving like logic.
"""

from __future__ import annotations

import copy

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InputError
from .rssm import check_finite

N_RULES = 14
RULE_NAMES = tuple(f"r{i}" for i in range(1, N_RULES + 1))


def mlp(in_dim: int, width: int, out_dim: int, n_layers: int, last_bias: bool = True) -> nn.Sequential:
    """``n_layers`` affine maps with ReLU between them."""
    layers: list[nn.Module] = []
    dim = in_dim
    for i in range(n_layers):
        last = i == n_layers - 1
        layers.append(nn.Linear(dim, out_dim if last else width, bias=last_bias or not last))
        if not last:
            layers.append(nn.ReLU())
        dim = width
    return nn.Sequential(*layers)


def kron_conv_rowmean(v: torch.Tensor, m: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """Row mean of ``conv3x3(outer(v, m))`` with zero padding, in O(d).

    Convolving the rank-one grid ``v m^T`` with a 3x3 kernel and averaging
    each row only needs three shifted copies of ``v`` and three column sums of
    ``m`` (the full sum minus whichever edge entry falls off the padding).
    """
    d = v.shape[-1]
    total = m.sum(-1)
    col = torch.stack([total - m[..., -1], total, total - m[..., 0]], dim=-1)  # (..., 3)
    w = col @ kernel.transpose(0, 1)  # w[..., a] = sum_b K[a, b] col[..., b]
    vp = F.pad(v, (1, 1))
    out = w[..., 0:1] * vp[..., :-2] + w[..., 1:2] * vp[..., 1:-1] + w[..., 2:3] * vp[..., 2:]
    return out / d


def kron_conv_rowmean_reference(v: torch.Tensor, m: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """Literal version: materialise v ⊗ m as a d x d image and run conv2d."""
    lead = v.shape[:-1]
    d = v.shape[-1]
    grid = torch.einsum("...i,...j->...ij", v, m).reshape(-1, 1, d, d)
    out = F.conv2d(grid, kernel.reshape(1, 1, 3, 3), padding=1)
    return out.mean(-1).reshape(*lead, d)


class LogicGate(nn.Module):
    """Binary gate: MLP on the concatenation plus a Kronecker-conv branch."""

    def __init__(self, d: int, n_layers: int = 3):
        super().__init__()
        self.mlp = mlp(2 * d, d, d, n_layers, last_bias=False)
        self.kernel = nn.Parameter(torch.randn(3, 3) / 3.0)
        self.bias_k = nn.Parameter(torch.zeros(d))

    def forward(self, v, m, reference: bool = False):
        conv = kron_conv_rowmean_reference if reference else kron_conv_rowmean
        return self.mlp(torch.cat([v, m], dim=-1)) + conv(v, m, self.kernel) + self.bias_k


def _swap(v, m, generator):
    """Swap operands row-wise with probability 1/2."""
    if generator is None:
        return v, m
    v, m = torch.broadcast_tensors(v, m)
    flip = torch.rand(v.shape[:-1] + (1,), generator=generator, dtype=v.dtype) < 0.5
    return torch.where(flip, m, v), torch.where(flip, v, m)


class LogicNetwork(nn.Module):
    def __init__(self, latent_dim: int, action_dim: int, d: int = 64,
                 n_layers: int = 3, kappa: float = 10.0,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.latent_dim = latent_dim
        self.action_dim = action_dim
        self.d = d
        self.kappa = float(kappa)
        self.state_embed = mlp(latent_dim, d, d, n_layers, last_bias=False)
        self.action_embed = mlp(latent_dim + action_dim, d, d, n_layers, last_bias=False)
        self.and_gate = LogicGate(d, n_layers)
        self.or_gate = LogicGate(d, n_layers)
        self.not_mlp = mlp(d, d, d, n_layers, last_bias=False)
        t = torch.randn(d, generator=generator)
        self.register_buffer("truth", t / t.norm())

    @classmethod
    def from_config(cls, cfg, latent_dim: int, action_dim: int, generator=None) -> "LogicNetwork":
        return cls(latent_dim, action_dim, cfg.logic_size, cfg.logic_mlp_layers,
                   cfg.kappa, generator)

    # -- embedders ---------------------------------------------------------
    def embed_state(self, s: torch.Tensor) -> torch.Tensor:
        return self.state_embed(s)

    def embed_action(self, s: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        return self.action_embed(torch.cat([s, a], dim=-1))

    # -- gates -------------------------------------------------------------
    def gate_and(self, v, m, generator=None):
        v, m = _swap(v, m, generator)
        return self.and_gate(v, m)

    def gate_or(self, v, m, generator=None):
        v, m = _swap(v, m, generator)
        return self.or_gate(v, m)

    def gate_not(self, v):
        return v + self.not_mlp(v)

    def gate_imply(self, v, m, generator=None):
        return self.gate_or(self.gate_not(v), m, generator)

    # -- anchors and similarity -------------------------------------------
    @property
    def true_vec(self) -> torch.Tensor:
        return self.truth

    def false_vec(self) -> torch.Tensor:
        return self.gate_not(self.truth)

    def sim(self, v, m) -> torch.Tensor:
        return sim(v, m, self.kappa)

    def truthiness(self, v) -> torch.Tensor:
        return self.sim(v, self.truth)

    def frozen_copy(self) -> "LogicNetwork":
        """Detached snapshot whose parameters take no gradient."""
        twin = copy.deepcopy(self)
        twin.requires_grad_(False)
        return twin

    # -- law regularizers --------------------------------------------------
    def regularizers(self, w: torch.Tensor, generator=None) -> torch.Tensor:
        """Residuals r1..r14 over the vector set ``w`` of shape (N, d).

        Each residual is a mean over the set (r1 also includes ``T``).
        """
        if w.ndim != 2 or w.shape[0] == 0:
            raise InputError("regularizer set must be a non-empty (N, d) matrix")
        n = w.shape[0]
        t = self.truth.expand(n, -1)
        f = self.false_vec().expand(n, -1)
        not_w = self.gate_not(w)
        nn_w = self.gate_not(not_w)
        not_t = self.gate_not(self.truth[None])
        # batch all AND/OR evaluations
        ands = self.gate_and(torch.cat([w, w, w, w]), torch.cat([t, f, w, not_w]), generator)
        a_t, a_f, a_w, a_nw = ands.split(n)
        ors = self.gate_or(torch.cat([w, w, w, w, not_w, not_w, not_w, not_w]),
                           torch.cat([f, t, w, not_w, t, f, w, not_w]), generator)
        o_f, o_t, o_w, o_nw, no_t, no_f, no_w, no_nw = ors.split(n)
        s = self.sim
        r = [
            torch.cat([s(not_w, w), s(not_t, self.truth[None])]).mean(),
            (1 - s(nn_w, w)).mean(),
            (1 - s(a_t, w)).mean(),
            (1 - s(a_f, f)).mean(),
            (1 - s(a_w, w)).mean(),
            (1 - s(a_nw, f)).mean(),
            (1 - s(o_f, w)).mean(),
            (1 - s(o_t, t)).mean(),
            (1 - s(o_w, w)).mean(),
            (1 - s(o_nw, t)).mean(),
            (1 - s(no_t, t)).mean(),
            (1 - s(no_f, not_w)).mean(),
            (1 - s(no_w, t)).mean(),
            (1 - s(no_nw, not_w)).mean(),
        ]
        return torch.stack(r)

    def regularizer_loss(self, w: torch.Tensor, generator=None):
        """Mean of the 14 residuals, plus the residual vector."""
        r = self.regularizers(w, generator)
        return r.mean(), r

    def l2_penalty(self) -> torch.Tensor:
        return sum((p ** 2).sum() for p in self.parameters())


def sim(v: torch.Tensor, m: torch.Tensor, kappa: float = 10.0) -> torch.Tensor:
    """sigmoid(kappa * cosine(v, m)) along the last axis."""
    nv = v.norm(dim=-1)
    nm = m.norm(dim=-1)
    if (nv == 0).any() or (nm == 0).any():
        raise InputError("sim is undefined for zero-norm vectors")
    cos = (v * m).sum(-1) / (nv * nm)
    return torch.sigmoid(kappa * cos)


def unit_vectors(n: int, d: int, generator=None, dtype=torch.float32) -> torch.Tensor:
    x = torch.randn(n, d, generator=generator, dtype=dtype)
    return x / x.norm(dim=-1, keepdim=True)


def train_regularizers(net: LogicNetwork, w: torch.Tensor, steps: int, lr: float = 1e-2,
                       generator=None) -> list[float]:
    """Fit the gates to the logic laws alone with plain SGD; returns the loss curve."""
    opt = torch.optim.SGD(net.parameters(), lr=lr)
    curve = []
    for _ in range(steps):
        loss, _ = net.regularizer_loss(w, generator)
        check_finite(loss, "regularizer loss")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        curve.append(loss.item())
    return curve
