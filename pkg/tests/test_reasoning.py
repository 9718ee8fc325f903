import math

import numpy as np
import pytest
import torch

from conftest import grad_check
from dualmind.errors import InputError
from dualmind.logic import LogicNetwork
from dualmind.reasoning import (ConsistencyReport, chain_truth, compose_local,
                                consistency_csv, embed_trajectory, fold_and,
                                global_chain, implication_step, logic_heatmap,
                                logical_consistency, s2_loss, select_depths,
                                step_consistency, window_bounds, window_implications)

D, LAT, ACT = 8, 5, 1


def small_net(seed=0):
    torch.manual_seed(seed)
    return LogicNetwork(LAT, ACT, d=D, generator=torch.Generator().manual_seed(seed)).double()


def trajectory(B=2, n=6, seed=0):
    g = torch.Generator().manual_seed(seed)
    s = torch.randn(B, n + 1, LAT, generator=g, dtype=torch.float64)
    a = torch.rand(B, n, ACT, generator=g, dtype=torch.float64) * 2 - 1
    return s, a


def test_window_bounds_truncate():
    assert window_bounds(3, 5) == (0, 3)
    assert window_bounds(10, 3) == (7, 10)
    assert window_bounds(4, 0) == (4, 4)
    with pytest.raises(InputError):
        window_bounds(-1, 2)


def test_depth_zero_reduces_to_single_step():
    net = small_net()
    s, a = trajectory(B=3, n=8, seed=1)
    v = net.embed_state(s)
    m = net.embed_action(s[:, :-1], a)
    for t in range(8):
        c_t = compose_local(net, v[:, t], m[:, t])
        got = implication_step(net, [c_t], v[:, t + 1])
        single = net.gate_imply(net.gate_and(v[:, t], m[:, t]), v[:, t + 1])
        assert torch.equal(got, single)


def test_batched_windows_match_literal_folds():
    net = small_net()
    s, a = trajectory(B=2, n=6, seed=2)
    emb = embed_trajectory(net, s, a)
    imps = window_implications(net, emb, depth=3)
    assert len(imps) == 4
    for k, imp in enumerate(imps):
        assert imp.shape == (2, 6 - k, D)
        for start in range(6 - k):
            window = [emb.c[:, j] for j in range(start, start + k + 1)]
            ref = implication_step(net, window, emb.v[:, start + k + 1])
            assert torch.allclose(imp[:, start], ref, atol=1e-12)


def test_select_depths_truncates_early_steps():
    per_k = [torch.full((1, 5 - k), float(k)) for k in range(5)]
    got = select_depths(per_k, 5, [0, 2, 9])
    assert got.shape == (1, 3, 5)
    assert got[0, 0].tolist() == [0, 0, 0, 0, 0]
    assert got[0, 1].tolist() == [0, 1, 2, 2, 2]
    assert got[0, 2].tolist() == [0, 1, 2, 3, 4]


def test_fold_and_order():
    net = small_net()
    x = [torch.randn(D, dtype=torch.float64) for _ in range(3)]
    assert torch.equal(fold_and(net, x), net.gate_and(net.gate_and(x[0], x[1]), x[2]))
    with pytest.raises(InputError):
        fold_and(net, [])


def test_single_phi_chain():
    net = small_net()
    phi = torch.randn(2, D, dtype=torch.float64)
    assert torch.equal(global_chain(net, [phi]), net.gate_imply(phi, net.truth.expand_as(phi)))


def test_chain_reaches_every_phi():
    net = small_net()
    phis = [torch.randn(D, dtype=torch.float64, requires_grad=True) for _ in range(4)]
    out = net.truthiness(global_chain(net, phis))
    grads = torch.autograd.grad(out, phis)
    eps = 1e-6
    for p, g in zip(phis, grads):
        assert g.abs().sum() > 0
        with torch.no_grad():
            p[0] += eps
            up = net.truthiness(global_chain(net, phis))
            p[0] -= eps
        assert abs(up.item() - out.item()) > 0


def test_chain_truth_shape():
    net = small_net()
    s, a = trajectory(B=3, n=5)
    out = chain_truth(net, s, a, depth=2)
    assert out.shape == (3,)
    assert torch.all((out > 0) & (out < 1))


def test_s2_loss_depth_zero_by_hand():
    net = small_net()
    s, a = trajectory(B=2, n=4, seed=3)
    total, comps = s2_loss(net, s, a, depth=0, reg_weight=0.0, l2_weight=0.0)
    v = net.embed_state(s)
    m = net.embed_action(s[:, :-1], a)
    phi = net.gate_imply(net.gate_and(v[:, :-1], m), v[:, 1:])
    expected = (net.sim(phi, net.false_vec()) - net.sim(phi, net.truth)).mean()
    assert total.item() == pytest.approx(expected.item(), abs=1e-12)
    assert comps["per_depth"].shape == (1,)


def test_s2_loss_sums_over_depths():
    net = small_net()
    s, a = trajectory(B=2, n=5, seed=4)
    _, comps = s2_loss(net, s, a, depth=3, reg_weight=0.0, l2_weight=0.0)
    assert comps["per_depth"].shape == (4,)
    assert comps["logic"].item() == pytest.approx(comps["per_depth"].sum().item(), abs=1e-12)
    for alpha in range(4):
        _, single = s2_loss(net, s, a, depth=alpha, reg_weight=0.0, l2_weight=0.0)
        assert comps["per_depth"][alpha].item() == pytest.approx(single["per_depth"][alpha].item(), abs=1e-12)


def test_grad_s2_loss():
    net = small_net()
    s, a = trajectory(B=1, n=3, seed=5)
    fn = lambda: s2_loss(net, s, a, depth=2, reg_weight=0.5, l2_weight=1e-3)[0]
    params = [net.state_embed[0].weight, net.and_gate.kernel, net.or_gate.mlp[2].weight,
              net.not_mlp[0].bias]
    assert grad_check(fn, params) < 1e-4


def test_s2_loss_reg_subsample():
    net = small_net()
    s, a = trajectory(B=2, n=10)
    _, comps = s2_loss(net, s, a, depth=2, reg_samples=8, generator=torch.Generator().manual_seed(0))
    assert comps["residuals"].shape == (14,)
    assert torch.isfinite(comps["reg"])


def test_length_two_consistency_is_single_sim():
    net = small_net()
    s, a = trajectory(B=1, n=1, seed=6)
    rep = logical_consistency(net, s[0], a[0], alpha=30)
    v = net.embed_state(s[0])
    m = net.embed_action(s[0, :1], a[0])
    phi = net.gate_imply(net.gate_and(v[:1], m), v[1:])
    assert rep.mean == pytest.approx(net.truthiness(phi).item(), abs=1e-15)
    assert rep.std == 0.0 and rep.episodes == 1


def test_consistency_mean_std_over_episodes():
    net = small_net()
    s, a = trajectory(B=4, n=7, seed=7)
    rep = logical_consistency(net, s, a, alpha=3)
    per_ep = step_consistency(net, s, a, 3).mean(1).numpy()
    assert rep.mean == pytest.approx(per_ep.mean(), abs=1e-15)
    assert rep.std == pytest.approx(per_ep.std(), abs=1e-15)
    lo, hi = 1 / (1 + math.exp(10)), 1 / (1 + math.exp(-10))
    assert lo < rep.mean < hi


def test_untrained_consistency_is_near_half():
    """Averaged over random networks, an untrained engine has no preference."""
    s, a = trajectory(B=8, n=10, seed=8)
    means = []
    for seed in range(30):
        net = small_net(seed)
        means.append(logical_consistency(net, s, a, alpha=3).mean)
    assert abs(np.mean(means) - 0.5) < 0.1


def test_heatmap_shape_bounds_asymmetry():
    net = small_net()
    s, a = trajectory(B=1, n=30, seed=9)
    m = logic_heatmap(net, s[0], a[0])
    assert m.shape == (30, 30)
    lo, hi = 1 / (1 + math.exp(10)), 1 / (1 + math.exp(-10))
    assert np.all((m > lo) & (m < hi))
    assert not np.allclose(m, m.T)


def test_heatmap_entry_by_hand():
    net = small_net()
    s, a = trajectory(B=1, n=4, seed=10)
    m = logic_heatmap(net, s[0], a[0])
    v = net.embed_state(s[0])
    act = net.embed_action(s[0, :4], a[0])
    phi = net.gate_imply(net.gate_and(v[1], act[2]), v[4])
    assert m[1, 2] == pytest.approx(net.truthiness(phi).item(), abs=1e-12)


def test_embed_rejects_bad_shapes():
    net = small_net()
    s, a = trajectory(B=1, n=3)
    with pytest.raises(InputError):
        embed_trajectory(net, s, a[:, :2])
    with pytest.raises(InputError):
        logic_heatmap(net, s[0], a[0, :1])


def test_consistency_csv_header():
    rows = [ConsistencyReport(10, 30, 0.5, 0.01, 4)]
    text = consistency_csv(rows, "pendulum-swingup")
    assert text.splitlines()[0] == "env,horizon,depth,mean,std,episodes"
    assert text.splitlines()[1] == "pendulum-swingup,10,30,0.500000,0.010000,4"
