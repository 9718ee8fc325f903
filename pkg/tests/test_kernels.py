"""The numba and numpy kernel sets must agree."""

import numpy as np
import pytest

from dualmind import _kernels

pytestmark = pytest.mark.skipif(_kernels.NUMBA is None, reason="numba not installed")


def test_backend_name():
    assert _kernels.backend() in ("numba", "numpy")


def test_pendulum_parity():
    rng = np.random.default_rng(0)
    th, om = rng.uniform(-3, 3, 64), rng.normal(size=64)
    u = rng.uniform(-1, 1, 64)
    args = (th, om, u, 6, 0.01, 9.81, 1.0, 1.0, 0.1, 2.0)
    a = _kernels.NUMPY["pendulum_substeps"](*args)
    b = _kernels.NUMBA["pendulum_substeps"](*args)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)


def test_cartpole_parity():
    rng = np.random.default_rng(1)
    s = [rng.normal(size=32) for _ in range(4)]
    u = rng.uniform(-1, 1, 32)
    args = (*s, u, 8, 0.01, 9.81, 1.0, 0.1, 0.5, 10.0)
    a = _kernels.NUMPY["cartpole_substeps"](*args)
    b = _kernels.NUMBA["cartpole_substeps"](*args)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)


def test_window_kernels_identical():
    rng = np.random.default_rng(2)
    lengths = rng.integers(5, 50, size=20)
    n_valid = np.maximum(lengths - 8 + 1, 0).astype(np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
    draws = rng.integers(0, n_valid.sum(), size=300).astype(np.int64)
    for x, y in zip(_kernels.NUMPY["window_starts"](offsets, n_valid, draws),
                    _kernels.NUMBA["window_starts"](offsets, n_valid, draws)):
        assert np.array_equal(x, y)
    flat = rng.normal(size=(int(lengths.sum()), 3)).astype(np.float32)
    starts = _kernels.NUMPY["window_starts"](offsets, n_valid, draws)[1]
    assert np.array_equal(_kernels.NUMPY["gather_windows"](flat, starts, 8),
                          _kernels.NUMBA["gather_windows"](flat, starts, 8))


def test_env_flag_selects_numpy():
    import os
    import subprocess
    import sys
    env = dict(os.environ, DUALMIND_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", "from dualmind import _kernels; print(_kernels.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
