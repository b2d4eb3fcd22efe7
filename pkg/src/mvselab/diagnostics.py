"""Ensemble diagnostics: moment/Lyapunov curves, decay envelopes,
supermartingale and pathwise-identity checks, exit and crossing
statistics.

Statistical conventions used throughout:

* Replicas are the only i.i.d. unit.  Standard errors are always taken
  across replicas (within-replica particle spread is correlated through
  the shared empirical measure), and verdicts allow 3 standard errors.
* Envelope verdicts come from :func:`bound_check`; the decay-rate fit
  is advisory only, because fitting a rate in the presence of an
  additive offset is biased (see the fit docstring).
* Almost-sure statements are reported as tail fractions with Wilson 95%
  intervals; the tool never claims probability-one facts.
* Crossing detection scans the recorded grid; excursions between
  recorded samples are invisible, so a guidance note is attached when
  dt * record_stride > 0.1.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FitError, UsageError
from .measure import EmpiricalMeasure
from .lyapunov import generator_on_measure
from .model import drift_batch

Z95 = 1.959963984540054


def wilson_interval(successes, n, z=Z95):
    """Wilson score interval for a binomial fraction."""
    if n <= 0:
        raise UsageError("wilson_interval needs n >= 1")
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass
class MomentCurve:
    """Replica-averaged curve with across-replica standard errors.

    ``se`` is None when only one replica is available (absent, not
    zero).  ``per_replica`` keeps the (M_ok, T) block the aggregate was
    computed from.
    """

    times: np.ndarray
    values: np.ndarray
    se: np.ndarray
    label: str
    per_replica: np.ndarray = None

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise UsageError("times and values must have equal length")
        if self.se is not None and np.any(self.se < 0):
            raise UsageError("standard errors must be nonnegative")

    def to_csv(self, path, envelope=None):
        with open(path, "w") as fh:
            header = "t,value,se" + (",envelope" if envelope is not None else "")
            fh.write(header + "\n")
            for i, t in enumerate(self.times):
                se = "" if self.se is None else f"{self.se[i]:.17g}"
                row = f"{t:.17g},{self.values[i]:.17g},{se}"
                if envelope is not None:
                    row += f",{envelope[i]:.17g}"
                fh.write(row + "\n")
        return path


def _per_replica_mean(ens, point_fn):
    """Apply ``point_fn(states, mu) -> (n,)`` per (replica, time), average
    over particles; returns (M_ok, T)."""
    ok = ens.ok()
    m, t, n, d = ok.shape
    out = np.empty((m, t))
    for r in range(m):
        for ti in range(t):
            states = ok[r, ti]
            mu = EmpiricalMeasure(states)
            out[r, ti] = float(np.mean(point_fn(states, mu)))
    return out


def _aggregate(times, per_replica, label):
    m = per_replica.shape[0]
    values = per_replica.mean(axis=0)
    se = (per_replica.std(axis=0, ddof=1) / math.sqrt(m)) if m >= 2 else None
    return MomentCurve(times=np.asarray(times), values=values, se=se,
                       label=label, per_replica=per_replica)


def moment_curve(ens, p):
    """Estimate of the p-th radial moment along time, pooled within
    replicas then averaged across them."""
    if ens.n_ok == 0:
        raise UsageError("no surviving replicas")
    per = _per_replica_mean(
        ens, lambda X, mu: np.linalg.norm(X, axis=1) ** p)
    return _aggregate(ens.times, per, label=f"moment{p}")


def lyapunov_curve(ens, vspec):
    """Estimate of E v(X_t, mu_t) with the within-replica empirical measure."""
    if ens.n_ok == 0:
        raise UsageError("no surviving replicas")
    per = _per_replica_mean(ens, lambda X, mu: vspec.values(X, mu))
    return _aggregate(ens.times, per, label=f"v[{vspec.label}]")


def fit_decay_rate(curve, window):
    """Advisory least-squares exponential fit on a time window.

    Returns (rate, prefactor, r_squared) from a line fit to
    (t, log value).  This is *not* the envelope verdict: with an
    additive offset the log-curve flattens and the fitted rate is
    biased low, which is why theorem verdicts use :func:`bound_check`.
    """
    lo, hi = window
    mask = (curve.times >= lo) & (curve.times <= hi)
    t = curve.times[mask]
    v = curve.values[mask]
    if np.any(v <= 0):
        raise FitError(
            "window contains nonpositive values; the curve has likely "
            "saturated at an offset - use bound_check in ultimate-"
            "boundedness mode instead of a rate fit")
    if t.size < 3:
        raise UsageError("need at least 3 points in the fit window")
    logv = np.log(v)
    slope, intercept = np.polyfit(t, logv, 1)
    resid = logv - (slope * t + intercept)
    ss_tot = float(np.sum((logv - logv.mean()) ** 2))
    r2 = 0.0 if ss_tot == 0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return float(-slope), float(math.exp(intercept)), r2


@dataclass
class EnvelopeVerdict:
    """Comparison of a moment curve against K e^{-rate t} m2_0 + offset."""

    K: float
    rate: float
    offset: float
    times: np.ndarray
    envelope: np.ndarray
    margins: np.ndarray          # envelope - estimate, per time
    allowance: np.ndarray        # 3 * SE, per time
    passed: bool
    worst_margin: float
    worst_time: float

    def to_dict(self):
        return {"K": self.K, "rate": self.rate, "offset": self.offset,
                "pass": self.passed, "worst_margin": self.worst_margin,
                "worst_time": self.worst_time,
                "min_slack": float(np.min(self.margins + self.allowance)),
                "mean_margin": float(np.mean(self.margins))}


def bound_check(curve, cert, init_m2):
    """Envelope verdict: estimate must stay below
    (a2/a1) e^{-alpha t} init_m2 + offset within 3 standard errors."""
    if init_m2 < 0:
        raise UsageError("init_m2 must be nonnegative")
    K = cert.a2 / cert.a1
    offset = cert.offset
    env = K * np.exp(-cert.alpha * curve.times) * init_m2 + offset
    margins = env - curve.values
    allowance = 3.0 * curve.se if curve.se is not None else np.zeros_like(margins)
    ok = margins >= -allowance
    worst = int(np.argmin(margins + allowance))
    return EnvelopeVerdict(
        K=K, rate=cert.alpha, offset=offset, times=curve.times,
        envelope=env, margins=margins, allowance=allowance,
        passed=bool(np.all(ok)), worst_margin=float(margins[worst]),
        worst_time=float(curve.times[worst]))


@dataclass
class SupermartingaleVerdict:
    """Non-increase check of t -> e^{alpha t} E v(X_t, mu_t)."""

    alpha: float
    passed: bool
    worst_increase: float        # largest mean increment beyond allowance
    worst_time: float
    curve: np.ndarray

    def to_dict(self):
        return {"alpha": self.alpha, "pass": self.passed,
                "worst_increase": self.worst_increase,
                "worst_time": self.worst_time}


def supermartingale_check(ens, vspec, alpha, atol=1e-9):
    """Check that e^{alpha t} E v is non-increasing between consecutive
    recorded times, within 3 standard errors of each increment."""
    vcurve = lyapunov_curve(ens, vspec)
    growth = np.exp(alpha * vcurve.times)
    per = vcurve.per_replica * growth[None, :]
    inc = np.diff(per, axis=1)
    m = per.shape[0]
    mean_inc = inc.mean(axis=0)
    se_inc = (inc.std(axis=0, ddof=1) / math.sqrt(m)) if m >= 2 else np.zeros_like(mean_inc)
    scale = np.maximum(1.0, np.abs(per).max())
    excess = mean_inc - 3.0 * se_inc - atol * scale
    worst = int(np.argmax(excess))
    return SupermartingaleVerdict(
        alpha=alpha, passed=bool(np.all(excess <= 0)),
        worst_increase=float(excess[worst]),
        worst_time=float(vcurve.times[worst + 1]),
        curve=per.mean(axis=0))


# ---------------------------------------------------------------------------
# pathwise identity check (expectation form of the generator formula)

@dataclass
class ItoReport:
    """Grid comparison of E v(X_t) - E v(X_0) against the time-integrated
    expected generator.

    ``discrepancy_raw`` uses the two sides as is; ``discrepancy``
    additionally subtracts the reconstructed martingale term
    mean of grad v(X_n) . (X_{n+1} - X_n - b(X_n) dt)
    (exactly zero-mean under the Euler chain), which removes the
    dominant Monte Carlo fluctuation without changing the estimand.
    The correction needs consecutive steps, so it is available only at
    record_stride 1 or from the online accumulator.
    """

    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    martingale: np.ndarray
    discrepancy: float
    discrepancy_raw: float
    dt: float
    nm: int
    c1: float
    c2: float
    tolerance: float

    def to_dict(self):
        return {"discrepancy": self.discrepancy,
                "discrepancy_raw": self.discrepancy_raw,
                "dt": self.dt, "nm": self.nm,
                "tolerance_model": "c1*dt + 3*c2/sqrt(NM)",
                "c1": self.c1, "c2": self.c2, "tolerance": self.tolerance}


def _ito_report(times, lhs, rhs, mart, dt, nm, per_replica_v):
    disc_raw = float(np.max(np.abs(lhs - rhs)))
    if mart is not None:
        disc = float(np.max(np.abs(lhs - mart - rhs)))
    else:
        disc = disc_raw
    m = per_replica_v.shape[0]
    if m >= 2:
        se = per_replica_v.std(axis=0, ddof=1) / math.sqrt(m)
        c2 = float(np.median(se) * math.sqrt(nm))
    else:
        c2 = 0.0
    # first-order error constant proxy: scale of the generator curve
    c1 = float(np.max(np.abs(np.gradient(rhs, times)))) if len(times) > 1 else 0.0
    tol = c1 * dt + 3.0 * c2 / math.sqrt(nm)
    return ItoReport(times=times, lhs=lhs, rhs=rhs, martingale=mart,
                     discrepancy=disc, discrepancy_raw=disc_raw, dt=dt,
                     nm=nm, c1=c1, c2=c2, tolerance=tol)


def ito_consistency(ens, vspec, model):
    """Expectation-identity check on a recorded ensemble.

    Compares E v(X_t, mu_t) - E v(X_0, mu_0) with the trapezoid
    integral of the expected generator along the recorded grid.  The
    martingale correction is applied when the ensemble was recorded at
    every step.
    """
    ok = ens.ok()
    m, t, n, d = ok.shape
    vbar = np.empty((m, t))
    gbar = np.empty((m, t))
    stride1 = ens.config.record_stride == 1
    mart = np.zeros((m, t)) if stride1 else None
    dt = ens.config.dt
    for r in range(m):
        for ti in range(t):
            states = ok[r, ti]
            mu = EmpiricalMeasure(states)
            vbar[r, ti] = float(np.mean(vspec.values(states, mu)))
            gbar[r, ti] = float(np.mean(generator_on_measure(vspec, model, mu)))
            if stride1 and ti + 1 < t:
                nxt = ok[r, ti + 1]
                b = drift_batch(model, states, mu)
                g = vspec.grads(states, mu)
                incr = np.einsum("nd,nd->n", g, nxt - states - b * dt)
                mart[r, ti + 1] = mart[r, ti] + float(np.mean(incr))
    lhs = vbar.mean(axis=0) - vbar.mean(axis=0)[0]
    g_mean = gbar.mean(axis=0)
    rhs = np.concatenate([[0.0], np.cumsum(
        0.5 * (g_mean[1:] + g_mean[:-1]) * np.diff(ens.times))])
    mart_mean = mart.mean(axis=0) if mart is not None else None
    return _ito_report(ens.times, lhs, rhs, mart_mean, dt, m * n, vbar)


class ItoAccumulator:
    """Streaming observer computing the identity check without storing paths."""

    def __init__(self, vspec, model, config):
        self.vspec = vspec
        self.model = model
        self.config = config
        self.rec_steps = config.recorded_steps
        self._rec_index = {s: i for i, s in enumerate(self.rec_steps)}
        t = len(self.rec_steps)
        m = config.n_paths
        self.vbar = np.full((m, t), np.nan)
        self.integral = np.full((m, t), np.nan)
        self.mart = np.full((m, t), np.nan)
        self._g_prev = None
        self._grad_prev = None
        self._b_prev = None
        self._int_acc = 0.0
        self._mart_acc = 0.0

    def _evaluate(self, states):
        mu = EmpiricalMeasure(states)
        g = float(np.mean(generator_on_measure(self.vspec, self.model, mu)))
        vb = float(np.mean(self.vspec.values(states, mu)))
        grad = self.vspec.grads(states, mu)
        b = drift_batch(self.model, states, mu)
        return mu, g, vb, grad, b

    def on_start(self, replica, states):
        _, g, vb, grad, b = self._evaluate(states)
        self._g_prev, self._grad_prev, self._b_prev = g, grad, b
        self._int_acc = 0.0
        self._mart_acc = 0.0
        self.vbar[replica, 0] = vb
        self.integral[replica, 0] = 0.0
        self.mart[replica, 0] = 0.0

    def on_step(self, replica, step_index, t_after, before, after):
        dt = self.config.dt
        incr = np.einsum("nd,nd->n", self._grad_prev,
                         after - before - self._b_prev * dt)
        self._mart_acc += float(np.mean(incr))
        _, g, vb, grad, b = self._evaluate(after)
        self._int_acc += 0.5 * (self._g_prev + g) * dt
        self._g_prev, self._grad_prev, self._b_prev = g, grad, b
        idx = self._rec_index.get(step_index + 1)
        if idx is not None:
            self.vbar[replica, idx] = vb
            self.integral[replica, idx] = self._int_acc
            self.mart[replica, idx] = self._mart_acc

    def report(self, times):
        ok = ~np.isnan(self.vbar[:, -1])
        vbar = self.vbar[ok]
        lhs = vbar.mean(axis=0) - vbar.mean(axis=0)[0]
        rhs = self.integral[ok].mean(axis=0)
        mart = self.mart[ok].mean(axis=0)
        nm = int(ok.sum()) * self.config.n_particles
        return _ito_report(np.asarray(times), lhs, rhs, mart,
                           self.config.dt, nm, vbar)


def ito_consistency_online(model, vspec, config):
    """Run an ensemble with the streaming accumulator and return the
    identity report; memory stays O(N) regardless of step count."""
    from .simulate import run_ensemble
    acc = ItoAccumulator(vspec, model, config)
    run_ensemble(model, config, observers=(acc,))
    return acc.report(config.times)


# ---------------------------------------------------------------------------
# crossing and exit statistics

def crossing_count(values, epsilon1):
    """Completed below-eps1 -> above-2*eps1 -> below-eps1 excursions.

    Scans the sampled series left to right: arm after the first value
    below eps1, count one excursion each time the series then exceeds
    2*eps1 and returns below eps1.
    """
    if epsilon1 <= 0:
        raise UsageError("epsilon1 must be positive")
    count = 0
    below = False      # seen the arming below-eps1 value
    above = False      # currently in an excursion above 2*eps1
    for v in values:
        if not below:
            if v < epsilon1:
                below = True
        elif not above:
            if v > 2 * epsilon1:
                above = True
        else:
            if v < epsilon1:
                count += 1
                above = False
    return count


@dataclass
class CrossingReport:
    """Per-path excursion counts at one threshold."""

    epsilon1: float
    counts: np.ndarray
    note: str = ""

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def max(self):
        return int(self.counts.max()) if self.counts.size else 0

    @property
    def mean(self):
        return float(self.counts.mean()) if self.counts.size else 0.0

    def to_dict(self):
        return {"epsilon1": self.epsilon1, "total": self.total,
                "max": self.max, "mean": self.mean,
                "n_paths": int(self.counts.size), "note": self.note}


def _path_v_series(ens, vspec):
    """v along every path: (paths, T) with paths = ok replicas x particles."""
    ok = ens.ok()
    m, t, n, d = ok.shape
    out = np.empty((m * n, t))
    for r in range(m):
        for ti in range(t):
            states = ok[r, ti]
            mu = EmpiricalMeasure(states)
            out[r * n:(r + 1) * n, ti] = vspec.values(states, mu)
    return out


def _stride_note(ens):
    window = ens.config.dt * ens.config.record_stride
    if window > 0.1:
        msg = (f"recorded spacing {window:.3g} > 0.1; sub-grid excursions "
               "are invisible - consider a smaller record_stride")
        warnings.warn(msg)
        return msg
    return ""


def ensemble_crossings(ens, vspec, epsilon1):
    """Crossing counts of the candidate value along every path."""
    series = _path_v_series(ens, vspec)
    counts = np.array([crossing_count(row, epsilon1) for row in series])
    return CrossingReport(epsilon1=epsilon1, counts=counts,
                          note=_stride_note(ens))


@dataclass
class StabilityReport:
    """Desk-scale proxies for almost-sure convergence to the origin.

    Tail fractions and exit fractions are sampled-grid statistics over
    (replica, particle) paths; intervals are Wilson 95%.  These are
    finite-sample proxies, not probability-one claims.
    """

    t_tail: float
    converged: dict              # eps -> stats
    exits: dict                  # level -> fraction escaping by t_end
    crossings: dict              # eps1 -> crossing summary
    n_paths: int
    note: str = ""
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"t_tail": self.t_tail, "converged": self.converged,
                "exits": self.exits, "crossings": self.crossings,
                "n_paths": self.n_paths, "note": self.note, **self.details}


def as_stability_report(ens, vspec, t_tail, eps_levels, n_levels):
    """Tail-convergence fractions, exit-time fractions, and crossing counts."""
    if t_tail >= ens.times[-1]:
        raise UsageError("t_tail must be below the final recorded time")
    ok = ens.ok()
    m, t, n, d = ok.shape
    radius = np.linalg.norm(ok, axis=3)          # (m, t, n)
    tail_mask = ens.times >= t_tail
    sup_tail = radius[:, tail_mask, :].max(axis=1).ravel()
    sup_all = radius.max(axis=1).ravel()
    n_paths = sup_tail.size
    converged = {}
    for eps in eps_levels:
        hits = int(np.sum(sup_tail < eps))
        lo, hi = wilson_interval(hits, n_paths)
        converged[float(eps)] = {"fraction": hits / n_paths,
                                 "wilson_low": lo, "wilson_high": hi,
                                 "n": n_paths}
    exits = {float(lev): float(np.mean(sup_all > lev)) for lev in n_levels}
    series = _path_v_series(ens, vspec)
    note = _stride_note(ens)
    crossings = {}
    for eps in eps_levels:
        counts = np.array([crossing_count(row, eps) for row in series])
        crossings[float(eps)] = CrossingReport(
            epsilon1=float(eps), counts=counts, note=note).to_dict()
    return StabilityReport(t_tail=t_tail, converged=converged, exits=exits,
                           crossings=crossings, n_paths=n_paths, note=note)
