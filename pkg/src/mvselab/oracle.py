"""Closed-form moment references for the mean-reverting built-in model.

For drift -(x - m * mean) and constant diffusion s, the first two
moments close:

    m1' = -(1 - m) m1
    m2' = -2 m2 + 2 m m1^2 + s^2

and integrate to exponentials plus a particular part.  No numerical ODE
solver is involved, so the reference stays independent of integrator
bugs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class OUParams:
    """Parameters and initial moments of the mean-reverting oracle."""

    m: float          # mean-reversion coupling
    s: float          # diffusion amplitude
    m1_0: float       # initial first moment
    m2_0: float       # initial second moment

    def __post_init__(self):
        if self.m >= 1.0:
            raise UsageError("mean coupling m must be < 1 for mean decay")
        if self.s < 0:
            raise UsageError("diffusion amplitude must be nonnegative")
        if self.m2_0 < self.m1_0 ** 2:
            raise UsageError("need m2_0 >= m1_0^2 (valid moment pair)")


def ou_moments(params, times):
    """First and second moment curves on ``times`` (increasing, from 0).

    Closed form:
        m1(t) = m1_0 exp(-(1-m) t)
        m2(t) = s^2/2 + m1_0^2 exp(-2(1-m) t)
                + (m2_0 - m1_0^2 - s^2/2) exp(-2 t)
    """
    t = np.asarray(times, dtype=np.float64)
    if t.ndim != 1 or t.size == 0 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
        raise UsageError("times must be increasing and start at 0")
    lam = 1.0 - params.m
    m1 = params.m1_0 * np.exp(-lam * t)
    m2 = (params.s ** 2 / 2.0
          + params.m1_0 ** 2 * np.exp(-2.0 * lam * t)
          + (params.m2_0 - params.m1_0 ** 2 - params.s ** 2 / 2.0)
          * np.exp(-2.0 * t))
    return m1, m2
