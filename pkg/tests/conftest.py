import numpy as np
import pytest
import torch

torch.set_num_threads(1)


def max_rel_error(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(a.norm().item(), b.norm().item(), 1e-12)
    return (a - b).norm().item() / denom


def grad_check(scalar_fn, tensors, eps=1e-5, max_elems=40, seed=0, value_fn=None):
    """Compare autograd against central differences on a sample of entries.

    ``scalar_fn()`` must rebuild the graph from ``tensors`` on every call.
    ``value_fn`` is what gets differenced, when stop-gradients make the
    forward value differ from the function whose gradient autograd returns.
    Returns the worst relative error over the tensors.
    """
    value_fn = value_fn or scalar_fn
    rng = np.random.default_rng(seed)
    grads = torch.autograd.grad(scalar_fn(), tensors, allow_unused=True)
    worst = 0.0
    for t, g in zip(tensors, grads):
        g = torch.zeros_like(t) if g is None else g
        flat = t.data.view(-1)
        idx = np.arange(flat.numel())
        if len(idx) > max_elems:
            idx = rng.choice(idx, max_elems, replace=False)
        num, ana = [], []
        for i in idx:
            old = flat[i].item()
            flat[i] = old + eps
            with torch.no_grad():
                up = value_fn().item()
            flat[i] = old - eps
            with torch.no_grad():
                down = value_fn().item()
            flat[i] = old
            num.append((up - down) / (2 * eps))
            ana.append(g.reshape(-1)[i].item())
        worst = max(worst, max_rel_error(torch.tensor(ana), torch.tensor(num)))
    return worst


def projector(shape, seed=1):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(shape, generator=g, dtype=torch.float64)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


# acceptance outcomes, filled by test_acceptance.py and echoed after the run
ACCEPTANCE: dict = {}


def record(number: int, passed: bool, detail: str) -> bool:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
