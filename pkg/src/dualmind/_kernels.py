"""Hot numeric loops with a numba path and a pure-numpy fallback.

Every kernel exists twice with identical signatures: a scalar-loop version
compiled with ``numba.njit`` and a vectorised numpy version.  The module-level
names bind to the numba versions unless numba is missing or the environment
variable ``DUALMIND_NUMBA`` is set to ``0``/``false``/``off``.

Both paths evaluate the same floating-point expressions in the same order, so
they agree to the last ulp for everything except transcendental functions,
where numba calls libm and numpy may use its own SIMD routines.
"""

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_FLAG = os.environ.get("DUALMIND_NUMBA", "1").strip().lower()
USE_NUMBA = numba is not None and _FLAG not in ("0", "false", "off", "no")


# --------------------------------------------------------------------------
# pendulum: theta measured from upright, semi-implicit Euler
# --------------------------------------------------------------------------

def _np_pendulum_substeps(theta, omega, torque, n_sub, dt, gravity, length,
                          mass, damping, max_torque):
    theta = np.array(theta, dtype=np.float64)
    omega = np.array(omega, dtype=np.float64)
    torque = np.asarray(torque, dtype=np.float64)
    reward = np.zeros_like(theta)
    inertia = mass * length * length
    for _ in range(n_sub):
        acc = (gravity / length) * np.sin(theta) \
            - damping * omega / inertia + torque * max_torque / inertia
        omega = omega + dt * acc
        theta = theta + dt * omega
        reward = reward + 0.5 * (np.cos(theta) + 1.0)
    return theta, omega, reward


def _py_pendulum_substeps(theta, omega, torque, n_sub, dt, gravity, length,
                          mass, damping, max_torque):
    n = theta.shape[0]
    out_theta = np.empty(n)
    out_omega = np.empty(n)
    reward = np.zeros(n)
    inertia = mass * length * length
    for i in range(n):
        th = theta[i]
        om = omega[i]
        r = 0.0
        for _ in range(n_sub):
            acc = (gravity / length) * math.sin(th) \
                - damping * om / inertia + torque[i] * max_torque / inertia
            om = om + dt * acc
            th = th + dt * om
            r = r + 0.5 * (math.cos(th) + 1.0)
        out_theta[i] = th
        out_omega[i] = om
        reward[i] = r
    return out_theta, out_omega, reward


# --------------------------------------------------------------------------
# cart-pole: classic inverted pendulum on a cart, theta from upright
# --------------------------------------------------------------------------

def _np_cartpole_substeps(x, x_dot, theta, theta_dot, force, n_sub, dt,
                          gravity, cart_mass, pole_mass, half_length,
                          max_force):
    x = np.array(x, dtype=np.float64)
    x_dot = np.array(x_dot, dtype=np.float64)
    theta = np.array(theta, dtype=np.float64)
    theta_dot = np.array(theta_dot, dtype=np.float64)
    force = np.asarray(force, dtype=np.float64)
    reward = np.zeros_like(x)
    total = cart_mass + pole_mass
    pml = pole_mass * half_length
    for _ in range(n_sub):
        sin_t = np.sin(theta)
        cos_t = np.cos(theta)
        temp = (force * max_force + pml * theta_dot * theta_dot * sin_t) / total
        theta_acc = (gravity * sin_t - cos_t * temp) / (
            half_length * (4.0 / 3.0 - pole_mass * cos_t * cos_t / total))
        x_acc = temp - pml * theta_acc * cos_t / total
        x_dot = x_dot + dt * x_acc
        x = x + dt * x_dot
        theta_dot = theta_dot + dt * theta_acc
        theta = theta + dt * theta_dot
        upright = 0.5 * (np.cos(theta) + 1.0)
        centered = 0.5 * (1.0 + np.exp(-x * x))
        reward = reward + upright * centered
    return x, x_dot, theta, theta_dot, reward


def _py_cartpole_substeps(x, x_dot, theta, theta_dot, force, n_sub, dt,
                          gravity, cart_mass, pole_mass, half_length,
                          max_force):
    n = x.shape[0]
    ox = np.empty(n)
    oxd = np.empty(n)
    ot = np.empty(n)
    otd = np.empty(n)
    reward = np.zeros(n)
    total = cart_mass + pole_mass
    pml = pole_mass * half_length
    for i in range(n):
        xi = x[i]
        xd = x_dot[i]
        th = theta[i]
        td = theta_dot[i]
        r = 0.0
        for _ in range(n_sub):
            sin_t = math.sin(th)
            cos_t = math.cos(th)
            temp = (force[i] * max_force + pml * td * td * sin_t) / total
            theta_acc = (gravity * sin_t - cos_t * temp) / (
                half_length * (4.0 / 3.0 - pole_mass * cos_t * cos_t / total))
            x_acc = temp - pml * theta_acc * cos_t / total
            xd = xd + dt * x_acc
            xi = xi + dt * xd
            td = td + dt * theta_acc
            th = th + dt * td
            upright = 0.5 * (math.cos(th) + 1.0)
            centered = 0.5 * (1.0 + math.exp(-xi * xi))
            r = r + upright * centered
        ox[i] = xi
        oxd[i] = xd
        ot[i] = th
        otd[i] = td
        reward[i] = r
    return ox, oxd, ot, otd, reward


# --------------------------------------------------------------------------
# replay: map uniform draws onto window starts, then copy windows out
# --------------------------------------------------------------------------

def _np_window_starts(row_offsets, n_valid, draws):
    """Map integer draws in [0, sum(n_valid)) to (episode, flat start row)."""
    cum = np.cumsum(n_valid)
    episode = np.searchsorted(cum, draws, side="right")
    before = cum[episode] - n_valid[episode]
    offset = draws - before
    return episode, row_offsets[episode] + offset, offset


def _py_window_starts(row_offsets, n_valid, draws):
    n_ep = n_valid.shape[0]
    cum = np.empty(n_ep, dtype=np.int64)
    acc = 0
    for e in range(n_ep):
        acc += n_valid[e]
        cum[e] = acc
    b = draws.shape[0]
    episode = np.empty(b, dtype=np.int64)
    start = np.empty(b, dtype=np.int64)
    offset = np.empty(b, dtype=np.int64)
    for i in range(b):
        d = draws[i]
        lo = 0
        hi = n_ep
        while lo < hi:  # first e with cum[e] > d
            mid = (lo + hi) // 2
            if cum[mid] > d:
                hi = mid
            else:
                lo = mid + 1
        episode[i] = lo
        offset[i] = d - (cum[lo] - n_valid[lo])
        start[i] = row_offsets[lo] + offset[i]
    return episode, start, offset


def _np_gather_windows(flat, starts, length):
    idx = starts[:, None] + np.arange(length)[None, :]
    return flat[idx]


def _py_gather_windows(flat, starts, length):
    b = starts.shape[0]
    out = np.empty((b, length, flat.shape[1]), dtype=flat.dtype)
    for i in range(b):
        s = starts[i]
        for t in range(length):
            for k in range(flat.shape[1]):
                out[i, t, k] = flat[s + t, k]
    return out


NUMPY = {
    "pendulum_substeps": _np_pendulum_substeps,
    "cartpole_substeps": _np_cartpole_substeps,
    "window_starts": _np_window_starts,
    "gather_windows": _np_gather_windows,
}

if numba is not None:
    _jit = numba.njit(cache=True, nogil=True)
    NUMBA = {
        "pendulum_substeps": _jit(_py_pendulum_substeps),
        "cartpole_substeps": _jit(_py_cartpole_substeps),
        "window_starts": _jit(_py_window_starts),
        "gather_windows": _jit(_py_gather_windows),
    }
else:  # pragma: no cover
    NUMBA = None

ACTIVE = NUMBA if USE_NUMBA else NUMPY

pendulum_substeps = ACTIVE["pendulum_substeps"]
cartpole_substeps = ACTIVE["cartpole_substeps"]
window_starts = ACTIVE["window_starts"]
gather_windows = ACTIVE["gather_windows"]


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
