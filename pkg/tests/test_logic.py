import math

import pytest
import torch

from conftest import grad_check, projector
from dualmind.errors import InputError
from dualmind.logic import (N_RULES, LogicGate, LogicNetwork, kron_conv_rowmean,
                            kron_conv_rowmean_reference, sim, train_regularizers,
                            unit_vectors)

D = 8


def small_net(seed=0):
    torch.manual_seed(seed)
    return LogicNetwork(5, 2, d=D, generator=torch.Generator().manual_seed(seed)).double()


def rand(*shape, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=torch.float64)


def test_default_sizes():
    net = LogicNetwork(10, 1)
    assert net.d == 64
    assert net.embed_state(torch.randn(3, 10)).shape == (3, 64)
    assert net.gate_not(torch.randn(3, 64)).shape == (3, 64)
    assert net.truth.norm().item() == pytest.approx(1.0, abs=1e-6)


def test_conv_fast_path_matches_conv2d():
    k = rand(3, 3, seed=1)
    v, m = rand(4, 7, 16, seed=2), rand(4, 7, 16, seed=3)
    fast = kron_conv_rowmean(v, m, k)
    ref = kron_conv_rowmean_reference(v, m, k)
    assert torch.allclose(fast, ref, atol=1e-12, rtol=0)


def test_gate_reference_path_agrees():
    torch.manual_seed(0)
    gate = LogicGate(D).double()
    v, m = rand(5, D, seed=1), rand(5, D, seed=2)
    assert torch.allclose(gate(v, m), gate(v, m, reference=True), atol=1e-12)


@pytest.mark.parametrize("which", ["and", "or", "imply"])
def test_grad_binary_gates(which):
    net = small_net()
    v = rand(3, D, seed=1).requires_grad_(True)
    m = rand(3, D, seed=2).requires_grad_(True)
    op = {"and": net.gate_and, "or": net.gate_or, "imply": net.gate_imply}[which]
    w = projector((3, D))
    fn = lambda: (op(v, m) * w).sum()
    gate = net.or_gate if which != "and" else net.and_gate
    params = [gate.kernel, gate.bias_k, gate.mlp[0].weight, gate.mlp[4].weight]
    assert grad_check(fn, [v, m] + params) < 1e-4


def test_grad_not_gate():
    net = small_net()
    v = rand(3, D, seed=4).requires_grad_(True)
    w = projector((3, D))
    fn = lambda: (net.gate_not(v) * w).sum()
    assert grad_check(fn, [v, net.not_mlp[0].weight, net.not_mlp[2].bias]) < 1e-4


def test_grad_embedders():
    net = small_net()
    s = rand(4, 5, seed=5).requires_grad_(True)
    a = rand(4, 2, seed=6).requires_grad_(True)
    w = projector((4, D))
    fn = lambda: ((net.embed_state(s) + net.embed_action(s, a)) * w).sum()
    params = [net.state_embed[0].weight, net.action_embed[2].weight]
    assert grad_check(fn, [s, a] + params) < 1e-4


def test_grad_similarity():
    v = rand(6, D, seed=7).requires_grad_(True)
    m = rand(6, D, seed=8).requires_grad_(True)
    fn = lambda: (sim(v, m) * projector((6,))).sum()
    assert grad_check(fn, [v, m]) < 1e-4


def test_not_with_zero_weights_is_identity():
    net = small_net()
    with torch.no_grad():
        for p in net.not_mlp.parameters():
            p.zero_()
    v = rand(10, D)
    assert torch.equal(net.gate_not(v), v)


def test_imply_is_or_of_not_bitwise():
    net = small_net()
    v, m = rand(1000, D, seed=1), rand(1000, D, seed=2)
    assert torch.equal(net.gate_imply(v, m), net.gate_or(net.gate_not(v), m))
    g1, g2 = torch.Generator().manual_seed(9), torch.Generator().manual_seed(9)
    assert torch.equal(net.gate_imply(v, m, g1), net.gate_or(net.gate_not(v), m, g2))


def test_operand_swap_is_rowwise():
    net = small_net()
    v, m = rand(200, D, seed=1), rand(200, D, seed=2)
    out = net.gate_and(v, m, torch.Generator().manual_seed(0))
    fwd, rev = net.gate_and(v, m), net.gate_and(m, v)
    is_fwd = (out == fwd).all(-1)
    is_rev = (out == rev).all(-1)
    assert torch.all(is_fwd | is_rev)
    assert 50 < is_rev.sum() < 150


def test_sim_values():
    e1 = torch.tensor([1.0, 0.0], dtype=torch.float64)
    e2 = torch.tensor([0.0, 3.0], dtype=torch.float64)
    assert sim(e1, e2).item() == 0.5
    assert sim(e1, 2 * e1).item() == pytest.approx(1 / (1 + math.exp(-10)), abs=1e-15)
    assert sim(e1, -e1).item() == pytest.approx(1 / (1 + math.exp(10)), abs=1e-15)
    with pytest.raises(InputError):
        sim(e1, torch.zeros(2, dtype=torch.float64))


def test_truth_is_not_trained():
    net = small_net()
    assert "truth" not in dict(net.named_parameters())
    before = net.truth.clone()
    train_regularizers(net, unit_vectors(16, D, dtype=torch.float64), steps=3, lr=0.1)
    assert torch.equal(net.truth, before)


def test_false_is_not_of_truth():
    net = small_net()
    assert torch.equal(net.false_vec(), net.gate_not(net.truth))


def test_zero_input_bias_path_finite():
    net = small_net()
    out = net.embed_state(torch.zeros(1, 5, dtype=torch.float64))
    assert torch.isfinite(out).all()
    # last layer has no bias, so the result is W3 relu(W2 relu(b1) + b2)
    l1, l2, l3 = net.state_embed[0], net.state_embed[2], net.state_embed[4]
    expected = l3(torch.relu(l2(torch.relu(l1.bias))))
    assert torch.allclose(out[0], expected, atol=1e-15)


def test_frozen_copy():
    net = small_net()
    twin = net.frozen_copy()
    assert not any(p.requires_grad for p in twin.parameters())
    v, m = rand(4, D), rand(4, D, seed=1)
    assert torch.equal(twin.gate_imply(v, m), net.gate_imply(v, m))


def test_regularizer_vector():
    net = small_net()
    w = unit_vectors(32, D, torch.Generator().manual_seed(0), torch.float64)
    loss, r = net.regularizer_loss(w)
    assert r.shape == (N_RULES,)
    assert torch.all((r > 0) & (r < 1))
    assert loss.item() == pytest.approx(r.mean().item(), abs=1e-15)
    with pytest.raises(InputError):
        net.regularizers(torch.zeros(0, D, dtype=torch.float64))


def test_grad_regularizer_loss():
    net = small_net()
    w = unit_vectors(6, D, torch.Generator().manual_seed(0), torch.float64).requires_grad_(True)
    fn = lambda: net.regularizer_loss(w)[0]
    params = [net.and_gate.kernel, net.or_gate.mlp[0].weight, net.not_mlp[4].weight]
    assert grad_check(fn, [w] + params) < 1e-4


def test_regularizer_training_reduces_loss():
    net = small_net()
    w = unit_vectors(64, D, torch.Generator().manual_seed(0), torch.float64)
    curve = train_regularizers(net, w, steps=100, lr=0.1)
    assert curve[-1] < curve[0]
