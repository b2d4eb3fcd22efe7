"""Candidate Lyapunov functionals, the measure-dependent generator, and
certificate audits.

A candidate ``v(x, mu)`` carries five callbacks: the value, its state
gradient and Hessian, the measure derivative ``lions(x, mu, y)`` (the
map y -> d_mu v(x, mu)(y)), and that map's y-Jacobian.  The measure
derivative is an interface the caller supplies, validated numerically
through the empirical lift rather than constructed: perturbing particle
j of an N-particle measure by h e_k must move v by
h * w_j * lions(x, mu, y_j)_k to second order.

The generator evaluated on an empirical measure is the four-term sum

    b . grad_x v  +  1/2 tr[(sigma sigma*) hess_x v]
    + sum_j w_j b(y_j) . lions(x, mu, y_j)
    + 1/2 sum_j w_j tr[(sigma sigma*)(y_j) lions_jac(x, mu, y_j)]

with the two measure integrals taken as weighted sums over particles.
When neither the model nor the candidate depends on the measure the
last two terms vanish and the classical diffusion generator remains.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, StructuralError, UsageError
from .measure import EmpiricalMeasure, raw_moment
from .model import drift_batch, diffusion_batch

_GAMMA_GRID = np.linspace(0.0, 100.0, 401)


class LyapunovSpec:
    """Candidate functional with analytic derivative callbacks.

    Shapes: ``v(x, mu) -> float``, ``grad_x -> (d,)``,
    ``hess_x -> (d, d)``, ``lions(x, mu, y) -> (d,)``,
    ``lions_jac(x, mu, y) -> (d, d)`` with entry [i, j] holding
    d/dy_i of lions_j.  Optional batch callbacks evaluate stacks of
    states at a fixed measure.  Instances are expected to pass
    :func:`validate_derivatives`; builtins do.
    """

    __slots__ = ("v", "grad_x", "hess_x", "lions", "lions_jac", "label",
                 "mu_free", "v_batch", "grad_batch", "hess_batch",
                 "lions_batch", "lions_jac_batch")

    def __init__(self, v, grad_x, hess_x, lions, lions_jac, label,
                 mu_free=False, v_batch=None, grad_batch=None,
                 hess_batch=None, lions_batch=None, lions_jac_batch=None):
        self.v = v
        self.grad_x = grad_x
        self.hess_x = hess_x
        self.lions = lions
        self.lions_jac = lions_jac
        self.label = label
        self.mu_free = mu_free
        self.v_batch = v_batch
        self.grad_batch = grad_batch
        self.hess_batch = hess_batch
        self.lions_batch = lions_batch
        self.lions_jac_batch = lions_jac_batch

    def values(self, states, mu):
        if self.v_batch is not None:
            return np.asarray(self.v_batch(states, mu), dtype=np.float64)
        return np.array([float(self.v(x, mu)) for x in states])

    def grads(self, states, mu):
        if self.grad_batch is not None:
            return np.asarray(self.grad_batch(states, mu), dtype=np.float64)
        return np.stack([np.asarray(self.grad_x(x, mu), dtype=np.float64)
                         for x in states])

    def hessians(self, states, mu):
        if self.hess_batch is not None:
            return np.asarray(self.hess_batch(states, mu), dtype=np.float64)
        return np.stack([np.asarray(self.hess_x(x, mu), dtype=np.float64)
                         for x in states])

    def lions_at(self, x, mu, ys):
        if self.lions_batch is not None:
            return np.asarray(self.lions_batch(x, mu, ys), dtype=np.float64)
        return np.stack([np.asarray(self.lions(x, mu, y), dtype=np.float64)
                         for y in ys])

    def lions_jacs_at(self, x, mu, ys):
        if self.lions_jac_batch is not None:
            return np.asarray(self.lions_jac_batch(x, mu, ys), dtype=np.float64)
        return np.stack([np.asarray(self.lions_jac(x, mu, y), dtype=np.float64)
                         for y in ys])

    def __repr__(self):
        return f"LyapunovSpec({self.label!r})"


def quad():
    """v(x, mu) = |x|^2, independent of the measure."""

    def v(x, mu):
        return float(np.dot(x, x))

    def grad(x, mu):
        return 2.0 * np.asarray(x, dtype=np.float64)

    def hess(x, mu):
        return 2.0 * np.eye(len(np.atleast_1d(x)))

    def lions(x, mu, y):
        return np.zeros_like(np.atleast_1d(np.asarray(x, dtype=np.float64)))

    def lions_jac(x, mu, y):
        d = len(np.atleast_1d(x))
        return np.zeros((d, d))

    return LyapunovSpec(
        v, grad, hess, lions, lions_jac, "quad", mu_free=True,
        v_batch=lambda X, mu: np.sum(X * X, axis=1),
        grad_batch=lambda X, mu: 2.0 * X,
        hess_batch=lambda X, mu: np.broadcast_to(
            2.0 * np.eye(X.shape[1]), (X.shape[0], X.shape[1], X.shape[1])).copy())


def mean_centered(m=0.25):
    """v(x, mu) = (x - m * mean(mu))^2 in one dimension.

    Derivative fields are closed-form: grad 2(x - m mean), Hessian 2,
    measure derivative -2m (x - m mean) constant in y, y-Jacobian 0.
    """

    def gap(x, mu):
        return float(np.atleast_1d(x)[0]) - m * float(mu.mean()[0])

    def v(x, mu):
        return gap(x, mu) ** 2

    def grad(x, mu):
        return np.array([2.0 * gap(x, mu)])

    def hess(x, mu):
        return np.array([[2.0]])

    def lions(x, mu, y):
        return np.array([-2.0 * m * gap(x, mu)])

    def lions_jac(x, mu, y):
        return np.array([[0.0]])

    def v_batch(X, mu):
        g = X[:, 0] - m * float(mu.mean()[0])
        return g * g

    def grad_batch(X, mu):
        return 2.0 * (X[:, :1] - m * float(mu.mean()[0]))

    def hess_batch(X, mu):
        return np.full((X.shape[0], 1, 1), 2.0)

    def lions_batch(x, mu, ys):
        return np.full((len(ys), 1), -2.0 * m * gap(x, mu))

    def lions_jac_batch(x, mu, ys):
        return np.zeros((len(ys), 1, 1))

    return LyapunovSpec(v, grad, hess, lions, lions_jac,
                        f"mean_centered(m={m})",
                        v_batch=v_batch, grad_batch=grad_batch,
                        hess_batch=hess_batch, lions_batch=lions_batch,
                        lions_jac_batch=lions_jac_batch)


def linear_combination(coeffs, specs, label=None):
    """Pointwise linear combination sum_i c_i v_i of candidates."""
    if len(coeffs) != len(specs):
        raise UsageError("coeffs and specs must have equal length")
    cs = [float(c) for c in coeffs]

    def make(attr):
        def f(*args):
            return sum(c * np.asarray(getattr(s, attr)(*args), dtype=np.float64)
                       for c, s in zip(cs, specs))
        return f

    return LyapunovSpec(
        lambda x, mu: sum(c * s.v(x, mu) for c, s in zip(cs, specs)),
        make("grad_x"), make("hess_x"), make("lions"), make("lions_jac"),
        label or "combination",
        mu_free=all(s.mu_free for s in specs))


# ---------------------------------------------------------------------------
# generator evaluation

def _generator_terms(vspec, model, states, mu):
    """Per-point generator values for a stack of states at a fixed measure."""
    B = drift_batch(model, states, mu)
    S = diffusion_batch(model, states, mu)
    G = vspec.grads(states, mu)
    H = vspec.hessians(states, mu)
    t1 = np.einsum("nd,nd->n", B, G)
    SS = np.einsum("ndl,nel->nde", S, S)
    t2 = 0.5 * np.einsum("nde,nde->n", SS, H)
    total = t1 + t2
    if not (vspec.mu_free or mu is None):
        By = drift_batch(model, mu.points, mu)
        Sy = diffusion_batch(model, mu.points, mu)
        SSy = np.einsum("ndl,nel->nde", Sy, Sy)
        w = mu.weights
        t3 = np.empty(states.shape[0])
        t4 = np.empty(states.shape[0])
        for i, x in enumerate(states):
            L = vspec.lions_at(x, mu, mu.points)
            t3[i] = w @ np.einsum("nd,nd->n", By, L)
            J = vspec.lions_jacs_at(x, mu, mu.points)
            t4[i] = 0.5 * (w @ np.einsum("nde,nde->n", SSy, J))
        total = total + t3 + t4
    if not np.all(np.isfinite(total)):
        bad = int(np.flatnonzero(~np.isfinite(total))[0])
        raise NumericError(
            f"generator non-finite at state {states[bad].tolist()} "
            f"(v={vspec.label}, model={model.label})")
    return total


def eval_generator(vspec, model, x, mu):
    """Generator of the mean-field dynamics applied to ``vspec`` at (x, mu)."""
    x = np.asarray(x, dtype=np.float64).reshape(model.dim_state)
    return float(_generator_terms(vspec, model, x[None, :], mu)[0])


def generator_on_measure(vspec, model, mu):
    """Generator values at every particle of ``mu`` (vectorized)."""
    return _generator_terms(vspec, model, mu.points, mu)


def integrated_generator_margin(vspec, model, mu, alpha):
    """Weighted integral of (generator + alpha * v) against the measure."""
    gen = generator_on_measure(vspec, model, mu)
    vals = vspec.values(mu.points, mu)
    return float(mu.weights @ (gen + alpha * vals))


# ---------------------------------------------------------------------------
# certificates

_MODES = ("H21", "H22", "H23")


@dataclass(frozen=True)
class StabilityCertificate:
    """Constants of a decay / ultimate-boundedness / pointwise certificate.

    ``mode`` selects which inequalities are audited: H21 needs the
    integrated generator margin nonpositive and the value sandwiched by
    a1, a2 times the second moment; H22 relaxes both by the offsets
    M1..M3; H23 needs the pointwise margin nonpositive plus radial
    envelope functions gamma1 <= gamma2.  A nonpositive ``a1`` makes
    the sandwich vacuous; the checker reports that instead of passing.
    """

    alpha: float
    a1: float
    a2: float
    M1: float = 0.0
    M2: float = 0.0
    M3: float = 0.0
    gamma1: callable = None
    gamma2: callable = None
    mode: str = "H21"

    def __post_init__(self):
        if self.mode not in _MODES:
            raise UsageError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.alpha <= 0:
            raise UsageError("alpha must be positive")
        if self.a2 <= 0:
            raise UsageError("a2 must be positive")
        if self.a1 > self.a2:
            raise UsageError("a1 must not exceed a2")
        if min(self.M1, self.M2, self.M3) < 0:
            raise UsageError("offsets M1, M2, M3 must be nonnegative")
        if self.mode == "H21" and (self.M1, self.M2, self.M3) != (0.0, 0.0, 0.0):
            raise UsageError("mode H21 requires M1 = M2 = M3 = 0")
        if self.mode == "H23":
            if self.gamma1 is None or self.gamma2 is None:
                raise UsageError("mode H23 requires gamma1 and gamma2")
            g1 = np.asarray([float(self.gamma1(r)) for r in _GAMMA_GRID])
            g2 = np.asarray([float(self.gamma2(r)) for r in _GAMMA_GRID])
            for name, g in (("gamma1", g1), ("gamma2", g2)):
                if abs(g[0]) > 1e-12:
                    raise UsageError(f"{name}(0) must be 0")
                if not np.all(np.diff(g) > 0):
                    raise UsageError(f"{name} must be strictly increasing")
            if np.any(g1 > g2 + 1e-12):
                raise UsageError("gamma1 must not exceed gamma2 on the audit grid")

    @property
    def offset(self):
        """Asymptotic moment-envelope offset (alpha (M2+M3) + M1) / (alpha a1)."""
        if self.a1 <= 0:
            raise UsageError("offset undefined for vacuous certificate (a1 <= 0)")
        return (self.alpha * (self.M2 + self.M3) + self.M1) / (self.alpha * self.a1)


@dataclass
class CertificateReport:
    """Outcome of a certificate audit over sampled measures."""

    mode: str
    passed: bool
    status: str                  # "pass" | "fail" | "vacuous"
    worst_margin: float          # largest integrated (or pointwise) margin
    worst_location: dict
    n_samples: int
    seed: int = None
    details: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps({
            "mode": self.mode, "pass": self.passed,
            "worst_margin": self.worst_margin,
            "worst_location": self.worst_location,
            "n_samples": self.n_samples, "seed": self.seed,
            "status": self.status, **self.details})


def check_certificate(vspec, model, cert, measures, points=None,
                      tol=1e-9, seed=None, echo_worst=10):
    """Audit certificate inequalities on a family of empirical measures.

    For H21/H22 each measure contributes its integrated generator
    margin and the two sandwich slacks; for H23 the generator margin is
    evaluated pointwise at each measure's particles (or at the given
    ``points``) together with the radial envelope bounds.  Failures are
    report content, never exceptions.
    """
    if not measures:
        raise UsageError("certificate audit needs at least one measure")
    if cert.a1 <= 0:
        return CertificateReport(
            mode=cert.mode, passed=False, status="vacuous",
            worst_margin=math.inf, worst_location={},
            n_samples=len(measures), seed=seed,
            details={"reason": "a1 <= 0 makes the moment sandwich vacuous"})

    gen_bound = cert.M1 if cert.mode == "H22" else 0.0
    worst_margin = -math.inf
    worst_location = {}
    failures = 0
    pointwise = []

    sandwich_ok = True
    for mi, mu in enumerate(measures):
        mom2 = raw_moment(mu, 2)
        vbar = float(mu.weights @ vspec.values(mu.points, mu))
        lo = cert.a1 * mom2 - cert.M2
        hi = cert.a2 * mom2 + cert.M3
        scale = max(1.0, abs(vbar), abs(hi))
        if vbar < lo - tol * scale or vbar > hi + tol * scale:
            sandwich_ok = False
            failures += 1
        if cert.mode in ("H21", "H22"):
            margin = integrated_generator_margin(vspec, model, mu, cert.alpha)
            if margin > worst_margin:
                worst_margin = margin
                worst_location = {"measure": mi}
            if margin > gen_bound + tol:
                failures += 1
        else:
            pts = mu.points if points is None else np.asarray(points, dtype=np.float64)
            gen = _generator_terms(vspec, model, pts, mu)
            vals = vspec.values(pts, mu)
            margins = gen + cert.alpha * vals
            radii = np.linalg.norm(pts, axis=1)
            g1 = np.array([float(cert.gamma1(r)) for r in radii])
            g2 = np.array([float(cert.gamma2(r)) for r in radii])
            env_bad = np.sum((vals < g1 - tol) | (vals > g2 + tol))
            failures += int(np.sum(margins > tol)) + int(env_bad)
            k = int(np.argmax(margins))
            if margins[k] > worst_margin:
                worst_margin = float(margins[k])
                worst_location = {"measure": mi, "point": pts[k].tolist()}
            order = np.argsort(margins)[::-1][:echo_worst]
            pointwise.extend(
                {"measure": mi, "point": pts[j].tolist(),
                 "margin": float(margins[j])} for j in order)

    if cert.mode == "H23":
        pointwise.sort(key=lambda r: -r["margin"])
        pointwise = pointwise[:echo_worst]

    passed = failures == 0 and worst_margin <= gen_bound + tol and sandwich_ok
    details = {"generator_bound": gen_bound, "n_violations": failures,
               "sandwich_ok": sandwich_ok}
    if pointwise:
        details["worst_pointwise"] = pointwise
    return CertificateReport(
        mode=cert.mode, passed=passed, status="pass" if passed else "fail",
        worst_margin=float(worst_margin), worst_location=worst_location,
        n_samples=len(measures), seed=seed, details=details)


# ---------------------------------------------------------------------------
# finite-difference validation through the empirical lift

@dataclass
class DerivativeReport:
    """Max relative finite-difference errors per derivative field."""

    grad: float
    hess: float
    lions: float
    lions_jac: float
    hess_asymmetry: float
    lions_jac_fd_magnitude: float
    n_points: int
    step: float
    tol: float = 1e-5

    @property
    def passed(self):
        return max(self.grad, self.hess, self.lions, self.lions_jac) <= self.tol

    def to_dict(self):
        return {"grad": self.grad, "hess": self.hess, "lions": self.lions,
                "lions_jac": self.lions_jac,
                "hess_asymmetry": self.hess_asymmetry,
                "lions_jac_fd_magnitude": self.lions_jac_fd_magnitude,
                "n_points": self.n_points, "step": self.step,
                "tol": self.tol, "pass": self.passed}


def _rel(err, scale):
    return err / max(1.0, scale)


def validate_derivatives(vspec, points, h=None, tol=1e-5, max_particles=16):
    """Check all derivative callbacks against central finite differences.

    State derivatives use plain central differences of v.  The measure
    derivative is validated through the empirical lift: moving particle
    j of the measure by +-h e_k and differencing v must reproduce
    w_j * lions(x, mu, y_j)_k.  The y-Jacobian is differenced directly
    from the lions callback.  ``points`` is a list of (x, mu) pairs;
    measures need at least 2 particles.
    """
    if not points:
        raise UsageError("validate_derivatives needs at least one (x, mu) pair")
    errs = {"grad": 0.0, "hess": 0.0, "lions": 0.0, "lions_jac": 0.0}
    asym = 0.0
    jac_fd_mag = 0.0
    h_used = h
    for x, mu in points:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if mu.n_points < 2:
            raise UsageError("lift validation needs measures with >= 2 particles")
        d = x.size
        hx = h if h is not None else 1e-4 * max(1.0, float(np.linalg.norm(x)))
        h_used = hx

        g_an = np.asarray(vspec.grad_x(x, mu), dtype=np.float64)
        H_an = np.asarray(vspec.hess_x(x, mu), dtype=np.float64)
        asym = max(asym, float(np.max(np.abs(H_an - H_an.T))))
        for i in range(d):
            e = np.zeros(d)
            e[i] = hx
            fp, fm = vspec.v(x + e, mu), vspec.v(x - e, mu)
            fd = (fp - fm) / (2 * hx)
            errs["grad"] = max(errs["grad"], _rel(abs(fd - g_an[i]), abs(g_an[i])))
            f0 = vspec.v(x, mu)
            fd2 = (fp - 2 * f0 + fm) / hx ** 2
            errs["hess"] = max(errs["hess"],
                               _rel(abs(fd2 - H_an[i, i]), abs(H_an[i, i])))
            for j in range(i + 1, d):
                ej = np.zeros(d)
                ej[j] = hx
                fd_ij = (vspec.v(x + e + ej, mu) - vspec.v(x + e - ej, mu)
                         - vspec.v(x - e + ej, mu) + vspec.v(x - e - ej, mu)) / (4 * hx ** 2)
                errs["hess"] = max(errs["hess"],
                                   _rel(abs(fd_ij - H_an[i, j]), abs(H_an[i, j])))

        # measure derivative through the lift V(x; y_1..y_N) = v(x, mu_N)
        n_test = min(mu.n_points, max_particles)
        for j in range(n_test):
            lio = np.asarray(vspec.lions(x, mu, mu.points[j]), dtype=np.float64)
            jac = np.asarray(vspec.lions_jac(x, mu, mu.points[j]), dtype=np.float64)
            for k in range(d):
                pts_p = mu.points.copy()
                pts_m = mu.points.copy()
                pts_p[j, k] += hx
                pts_m[j, k] -= hx
                mu_p = EmpiricalMeasure(pts_p, mu.weights)
                mu_m = EmpiricalMeasure(pts_m, mu.weights)
                fd = (vspec.v(x, mu_p) - vspec.v(x, mu_m)) / (2 * hx)
                target = mu.weights[j] * lio[k]
                errs["lions"] = max(errs["lions"],
                                    _rel(abs(fd - target), abs(lio[k])))
                # d/dy_k of the lions map, row k of the declared Jacobian
                lp = np.asarray(vspec.lions(x, mu, mu.points[j] + (pts_p[j] - mu.points[j])),
                                dtype=np.float64)
                lm = np.asarray(vspec.lions(x, mu, mu.points[j] + (pts_m[j] - mu.points[j])),
                                dtype=np.float64)
                fd_row = (lp - lm) / (2 * hx)
                jac_fd_mag = max(jac_fd_mag, float(np.max(np.abs(fd_row))))
                errs["lions_jac"] = max(
                    errs["lions_jac"],
                    _rel(float(np.max(np.abs(fd_row - jac[k, :]))),
                         float(np.max(np.abs(jac)))))
    if not all(math.isfinite(v) for v in errs.values()):
        raise NumericError("non-finite finite differences during validation")
    return DerivativeReport(
        grad=errs["grad"], hess=errs["hess"], lions=errs["lions"],
        lions_jac=errs["lions_jac"], hess_asymmetry=asym,
        lions_jac_fd_magnitude=jac_fd_mag, n_points=len(points),
        step=float(h_used), tol=tol)
