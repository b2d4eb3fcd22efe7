"""Compiled one-step updates for the built-in models.

Each kernel advances every particle of a one-dimensional system by one
Euler step, drawing its own keyed noise so results are independent of
scheduling.  The sine-series kernel generates sin(k x) for k = 1..l by
the Chebyshev recurrence sin((k+1)x) = 2 cos(x) sin(kx) - sin((k-1)x),
which avoids l libm calls per particle.
"""

import numpy as np
from numba import njit, uint64

from .rng import normal_at


@njit(cache=True, fastmath=True)
def step_sine_series(x, xbar, m, coef, dt, sqdt, base):
    n = x.size
    l = coef.size
    out = np.empty(n)
    for i in range(n):
        xi = x[i]
        c2 = 2.0 * np.cos(xi)
        s_prev = 0.0
        s_k = np.sin(xi)
        acc = 0.0
        row = uint64(i * l)
        for k in range(l):
            z = normal_at(base, row + uint64(k))
            acc += coef[k] * s_k * z
            s_next = c2 * s_k - s_prev
            s_prev = s_k
            s_k = s_next
        out[i] = xi + (m * xbar - xi) * dt + sqdt * acc
    return out


@njit(cache=True, fastmath=True)
def step_mean_reverting(x, xbar, m, s, dt, sqdt, base):
    n = x.size
    out = np.empty(n)
    for i in range(n):
        z = normal_at(base, uint64(i))
        out[i] = x[i] + (m * xbar - x[i]) * dt + s * sqdt * z
    return out


@njit(cache=True, fastmath=True)
def step_contractive(x, eps, dt, sqdt, base):
    n = x.size
    out = np.empty(n)
    for i in range(n):
        z = normal_at(base, uint64(i))
        out[i] = x[i] - x[i] * dt + eps * np.sin(x[i]) * sqdt * z
    return out
