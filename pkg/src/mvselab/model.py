"""Coefficient pairs (drift, diffusion) of the mean-field SDE, built-in
model instances, and sampled audits of the growth and monotonicity
assumptions the stability theory rests on.

Audits are not proofs: they evaluate the assumption inequalities on a
reproducible sample of states and empirical measures and report worst
margins.  The dual metric inside the monotonicity condition is not
exactly computable, so the audit brackets it between a certified
dictionary lower bound and the 1-Wasserstein upper surrogate and only
claims pass/fail when the bracket is decisive.
"""

import ast
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, rng
from .errors import ConfigError, ModelError, StructuralError, UsageError
from .measure import (EmpiricalMeasure, default_test_dictionary,
                      lambda2_norm_sq, rho_lower_bound, wasserstein1)

AUDIT_SEED = 0
AUDIT_SCALE = 3.0  # audit states/particles drawn from N(0, AUDIT_SCALE^2 I)


class ModelSpec:
    """Drift/diffusion pair with dimensions and optional fast paths.

    ``drift(x, mu)`` maps a state of shape (d,) and an
    :class:`EmpiricalMeasure` to shape (d,); ``diffusion(x, mu)`` to a
    (d, l) matrix.  Callbacks must be pure and re-entrant.  Optional
    ``*_batch`` variants act on (n, d) stacks and are used by the
    integrator and the audits; ``fast_step`` is a compiled whole-step
    update used by the ensemble runner when present.
    """

    __slots__ = ("dim_state", "dim_noise", "drift", "diffusion", "label",
                 "drift_batch", "diffusion_batch", "distribution_free",
                 "fast_step", "params")

    def __init__(self, dim_state, dim_noise, drift, diffusion, label,
                 drift_batch=None, diffusion_batch=None,
                 distribution_free=False, fast_step=None, params=None,
                 audit=True):
        self.dim_state = int(dim_state)
        self.dim_noise = int(dim_noise)
        self.drift = drift
        self.diffusion = diffusion
        self.label = label
        self.drift_batch = drift_batch
        self.diffusion_batch = diffusion_batch
        self.distribution_free = distribution_free
        self.fast_step = fast_step
        self.params = dict(params or {})
        if self.dim_state < 1 or self.dim_noise < 1:
            raise UsageError("dim_state and dim_noise must be positive")
        if audit:
            self._shape_audit()

    def _shape_audit(self):
        gen = np.random.default_rng(AUDIT_SEED)
        mu = EmpiricalMeasure(gen.normal(0.0, AUDIT_SCALE, (8, self.dim_state)))
        for x in gen.normal(0.0, AUDIT_SCALE, (4, self.dim_state)):
            eval_drift(self, x, mu)
            eval_diffusion(self, x, mu)


def eval_drift(model, x, mu):
    """Evaluate the drift at one state; non-finite output raises ModelError."""
    x = np.asarray(x, dtype=np.float64).reshape(model.dim_state)
    b = np.asarray(model.drift(x, mu), dtype=np.float64)
    if b.shape != (model.dim_state,):
        raise ModelError(
            f"{model.label}: drift returned shape {b.shape}, expected "
            f"({model.dim_state},) at x={x.tolist()}")
    if not np.all(np.isfinite(b)):
        raise ModelError(f"{model.label}: drift non-finite at x={x.tolist()}")
    return b


def eval_diffusion(model, x, mu):
    """Evaluate the diffusion matrix at one state; checks shape and finiteness."""
    x = np.asarray(x, dtype=np.float64).reshape(model.dim_state)
    s = np.asarray(model.diffusion(x, mu), dtype=np.float64)
    if s.shape != (model.dim_state, model.dim_noise):
        raise ModelError(
            f"{model.label}: diffusion returned shape {s.shape}, expected "
            f"({model.dim_state}, {model.dim_noise}) at x={x.tolist()}")
    if not np.all(np.isfinite(s)):
        raise ModelError(f"{model.label}: diffusion non-finite at x={x.tolist()}")
    return s


def drift_batch(model, states, mu):
    """(n, d) drift stack, falling back to the per-point callback."""
    if model.drift_batch is not None:
        out = np.asarray(model.drift_batch(states, mu), dtype=np.float64)
        if out.shape != states.shape:
            raise ModelError(f"{model.label}: drift_batch shape {out.shape}")
        return out
    return np.stack([eval_drift(model, x, mu) for x in states])


def diffusion_batch(model, states, mu):
    """(n, d, l) diffusion stack, falling back to the per-point callback."""
    if model.diffusion_batch is not None:
        out = np.asarray(model.diffusion_batch(states, mu), dtype=np.float64)
        if out.shape != (states.shape[0], model.dim_state, model.dim_noise):
            raise ModelError(f"{model.label}: diffusion_batch shape {out.shape}")
        return out
    return np.stack([eval_diffusion(model, x, mu) for x in states])


# ---------------------------------------------------------------------------
# built-in models (all one-dimensional in state)

def example61(m=0.25, l=50):
    """Mean-interaction drift with a damped sine-series diffusion.

    Drift -(x - m * mean(mu)); diffusion row (k^{-3/2} sin(k x)) for
    k = 1..l.  The classic worked instance of the certificate theory;
    ``m`` in (0, 1) keeps the mean contraction strict.
    """
    if l < 1:
        raise UsageError("l must be >= 1")
    coef = 1.0 / np.arange(1.0, l + 1.0) ** 1.5
    ks = np.arange(1.0, l + 1.0)

    def drift(x, mu):
        return np.array([m * mu.mean()[0] - x[0]])

    def diffusion(x, mu):
        return (coef * np.sin(ks * x[0]))[None, :]

    def dbatch(states, mu):
        return m * mu.mean()[0] - states

    def sbatch(states, mu):
        return (np.sin(states[:, :1] * ks[None, :]) * coef[None, :])[:, None, :]

    def fast_step(states, dt, seed, replica, step):
        base = rng.base_key(seed, replica, step)
        x = np.ascontiguousarray(states[:, 0])
        out = _kernels.step_sine_series(x, float(np.mean(x)), m, coef, dt,
                                        math.sqrt(dt), base)
        return out[:, None]

    return ModelSpec(1, l, drift, diffusion, f"example61(m={m}, l={l})",
                     drift_batch=dbatch, diffusion_batch=sbatch,
                     fast_step=fast_step, params={"m": m, "l": l})


def meanfield_ou(m=0.25, s=1.0):
    """Mean-reverting drift -(x - m * mean(mu)) with constant diffusion s."""

    def drift(x, mu):
        return np.array([m * mu.mean()[0] - x[0]])

    def diffusion(x, mu):
        return np.array([[s]])

    def dbatch(states, mu):
        return m * mu.mean()[0] - states

    def sbatch(states, mu):
        return np.full((states.shape[0], 1, 1), s)

    def fast_step(states, dt, seed, replica, step):
        base = rng.base_key(seed, replica, step)
        x = np.ascontiguousarray(states[:, 0])
        out = _kernels.step_mean_reverting(x, float(np.mean(x)), m, s, dt,
                                           math.sqrt(dt), base)
        return out[:, None]

    return ModelSpec(1, 1, drift, diffusion, f"meanfield_ou(m={m}, s={s})",
                     drift_batch=dbatch, diffusion_batch=sbatch,
                     distribution_free=(m == 0.0), fast_step=fast_step,
                     params={"m": m, "s": s})


def contractive(eps=1.0):
    """Distribution-free contraction: drift -x, diffusion eps * sin(x)."""

    def drift(x, mu):
        return -x

    def diffusion(x, mu):
        return np.array([[eps * np.sin(x[0])]])

    def dbatch(states, mu):
        return -states

    def sbatch(states, mu):
        return (eps * np.sin(states))[:, :, None]

    def fast_step(states, dt, seed, replica, step):
        base = rng.base_key(seed, replica, step)
        x = np.ascontiguousarray(states[:, 0])
        out = _kernels.step_contractive(x, eps, dt, math.sqrt(dt), base)
        return out[:, None]

    return ModelSpec(1, 1, drift, diffusion, f"contractive(eps={eps})",
                     drift_batch=dbatch, diffusion_batch=sbatch,
                     distribution_free=True, fast_step=fast_step,
                     params={"eps": eps})


# ---------------------------------------------------------------------------
# modulus functions and assumption bundles

def kappa_tilde(x, eta):
    """Two-branch slowly-varying factor: log(1/x) for 0 < x <= eta, and a
    matched rational continuation above eta.  Continuous at eta; eta
    must lie in (0, 1/e)."""
    if not 0.0 < eta < 1.0 / math.e:
        raise UsageError(f"eta must lie in (0, 1/e), got {eta}")
    x = np.asarray(x, dtype=np.float64)
    a = math.sqrt(math.log(1.0 / eta))
    half_b = 0.5 / a
    safe = np.where(x > 0, x, 1.0)
    low = np.log(1.0 / safe)
    high = ((a - half_b) * safe + half_b * eta) ** 2 / safe ** 2
    out = np.where(x <= eta, low, high)
    return out if out.ndim else float(out)


def kappa_interaction(u, eta=0.1):
    """Concave modulus u * (1 + kappa_tilde(sqrt(u))) on squared distances.

    Vanishes at 0, is strictly increasing and concave; dominates the
    sine-series diffusion differences of :func:`example61`.
    """
    u = np.asarray(u, dtype=np.float64)
    safe = np.where(u > 0, u, 1.0)
    out = np.where(u > 0, safe * (1.0 + kappa_tilde(np.sqrt(safe), eta)), 0.0)
    return out if out.ndim else float(out)


def kappa_identity(u):
    return np.asarray(u, dtype=np.float64) * 1.0


@dataclass(frozen=True)
class AssumptionSpec:
    """Constants and moduli entering the growth/monotonicity audits."""

    L1: float
    L2: float
    kappa1: callable
    kappa2: callable
    eta: float = 0.1

    def __post_init__(self):
        if self.L1 <= 0 or self.L2 <= 0:
            raise UsageError("L1 and L2 must be positive")
        if not 0.0 < self.eta < 1.0 / math.e:
            raise UsageError(f"eta must lie in (0, 1/e), got {self.eta}")
        grid = np.logspace(-6, 1, 200)
        for name, kap in (("kappa1", self.kappa1), ("kappa2", self.kappa2)):
            if abs(float(kap(0.0))) > 1e-12:
                raise UsageError(f"{name}(0) must be 0")
            vals = np.asarray(kap(grid))
            if not np.all(np.diff(vals) > 0):
                raise UsageError(f"{name} is not strictly increasing on the audit grid")
        # the two branches of the built-in modulus factor must agree at eta
        gap = abs(kappa_tilde(self.eta, self.eta)
                  - kappa_tilde(self.eta * (1 + 1e-12), self.eta))
        if gap > 1e-9:
            raise UsageError(f"kappa_tilde branches disagree at eta by {gap:.3g}")


def example61_assumptions(m=0.25, l=50, eta=0.1):
    """Audit constants for :func:`example61`; the growth constant uses the
    full series bound pi^2/12 regardless of the truncation l."""
    return AssumptionSpec(
        L1=2.0 + math.pi ** 2 / 12.0 + 2.0 * m ** 2,
        L2=7.0 + 2.0 * m ** 2,
        kappa1=lambda u: kappa_interaction(u, eta),
        kappa2=kappa_identity,
        eta=eta)


def meanfield_ou_assumptions(m=0.25, s=1.0):
    return AssumptionSpec(L1=2.0 * (m ** 2 + 1.0) + s ** 2,
                          L2=2.0 * (1.0 + m) + 2.0 * m ** 2,
                          kappa1=kappa_identity, kappa2=kappa_identity)


def contractive_assumptions(eps=1.0):
    return AssumptionSpec(L1=2.0 + eps ** 2, L2=1.0 + eps ** 2,
                          kappa1=kappa_identity, kappa2=kappa_identity)


# ---------------------------------------------------------------------------
# sampled audits

def sample_audit_states(dim, n_samples=2000, n_particles=64,
                        seed=AUDIT_SEED, scale=AUDIT_SCALE):
    """Reproducible audit set: Gaussian states paired with small Gaussian
    empirical measures.  The seed is echoed in every report."""
    gen = np.random.default_rng(seed)
    xs = gen.normal(0.0, scale, (n_samples, dim))
    measures = [EmpiricalMeasure(gen.normal(0.0, scale, (n_particles, dim)))
                for _ in range(n_samples)]
    return list(zip(xs, measures))


@dataclass
class AuditReport:
    """Outcome of a sampled assumption audit."""

    kind: str
    passed: bool
    status: str                 # "pass" | "indicative" | "fail"
    n_samples: int
    worst: float                # largest constraint violation margin
    worst_index: int
    seed: int = AUDIT_SEED
    details: dict = field(default_factory=dict)

    def to_dict(self):
        out = {"kind": self.kind, "pass": self.passed, "status": self.status,
               "n_samples": self.n_samples, "worst": self.worst,
               "worst_index": self.worst_index, "seed": self.seed}
        out.update(self.details)
        return out


def check_linear_growth(model, spec, samples):
    """Ratio audit of |b|^2 + ||sigma||^2 against L1 (1 + |x|^2 + lambda2^2).

    The max ratio is an empirical estimate of the true growth constant;
    the audit passes when it does not exceed ``spec.L1``.
    """
    if not samples:
        raise UsageError("linear-growth audit needs at least one sample")
    ratios = np.empty(len(samples))
    for i, (x, mu) in enumerate(samples):
        b = eval_drift(model, x, mu)
        s = eval_diffusion(model, x, mu)
        num = float(b @ b) + float(np.sum(s * s))
        den = 1.0 + float(np.dot(x, x)) + lambda2_norm_sq(mu)
        ratios[i] = num / den
    worst = int(np.argmax(ratios))
    max_ratio = float(ratios[worst])
    ok = max_ratio <= spec.L1 + 1e-9
    return AuditReport(
        kind="linear_growth", passed=ok, status="pass" if ok else "fail",
        n_samples=len(samples), worst=max_ratio - spec.L1, worst_index=worst,
        details={"max_ratio": max_ratio, "L1": spec.L1,
                 "mean_ratio": float(ratios.mean())})


def check_monotone_nonlipschitz(model, spec, pairs, dictionary=None, tol=1e-9):
    """Audit of the one-sided monotonicity condition on state/measure pairs.

    The metric term inside kappa2 is bracketed: the certified dictionary
    gives a lower bound, the 1-Wasserstein distance an upper surrogate.
    A pair passes only if the inequality holds against the smaller
    right-hand side, fails only if it is violated against the larger
    one, and is otherwise flagged "indicative".
    """
    if not pairs:
        raise UsageError("monotonicity audit needs at least one pair")
    if dictionary is None:
        dictionary = default_test_dictionary(model.dim_state)
    lhs = np.empty(len(pairs))
    rhs_lo = np.empty(len(pairs))
    rhs_hi = np.empty(len(pairs))
    for i, ((x1, mu1), (x2, mu2)) in enumerate(pairs):
        x1 = np.asarray(x1, dtype=np.float64).reshape(model.dim_state)
        x2 = np.asarray(x2, dtype=np.float64).reshape(model.dim_state)
        db = eval_drift(model, x1, mu1) - eval_drift(model, x2, mu2)
        ds = eval_diffusion(model, x1, mu1) - eval_diffusion(model, x2, mu2)
        lhs[i] = 2.0 * float((x1 - x2) @ db) + float(np.sum(ds * ds))
        dxsq = float((x1 - x2) @ (x1 - x2))
        rho_hi = wasserstein1(mu1, mu2)
        rho_lo = rho_lower_bound(mu1, mu2, dictionary)
        k1 = float(spec.kappa1(dxsq))
        rhs_lo[i] = spec.L2 * (k1 + float(spec.kappa2(rho_lo ** 2)))
        rhs_hi[i] = spec.L2 * (k1 + float(spec.kappa2(rho_hi ** 2)))
    hard_fail = lhs > rhs_hi + tol
    clean_pass = lhs <= rhs_lo + tol
    if np.any(hard_fail):
        status = "fail"
        worst = int(np.argmax(lhs - rhs_hi))
        margin = float((lhs - rhs_hi)[worst])
    elif np.all(clean_pass):
        status = "pass"
        worst = int(np.argmax(lhs - rhs_lo))
        margin = float((lhs - rhs_lo)[worst])
    else:
        status = "indicative"
        worst = int(np.argmax(lhs - rhs_lo))
        margin = float((lhs - rhs_lo)[worst])
    return AuditReport(
        kind="monotone_nonlipschitz", passed=status == "pass", status=status,
        n_samples=len(pairs), worst=margin, worst_index=worst,
        details={"rho_bracket": "lower=dictionary, upper=wasserstein1",
                 "n_indicative": int(np.sum(~clean_pass & ~hard_fail)),
                 "n_fail": int(np.sum(hard_fail))})


# ---------------------------------------------------------------------------
# restricted expression grammar for user-supplied coefficients

_ALLOWED_CALLS = ("sin", "cos", "exp", "abs", "mean", "mom2")
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract,
           ast.Mult: np.multiply, ast.Div: np.divide}


def _compile_node(node):
    if isinstance(node, ast.Expression):
        return _compile_node(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        val = float(node.value)
        return lambda x, mu: val
    if isinstance(node, ast.Name):
        if node.id == "x":
            return lambda x, mu: x
        raise ConfigError(f"unknown name {node.id!r} in expression")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op = _BINOPS[type(node.op)]
        left = _compile_node(node.left)
        right = _compile_node(node.right)
        return lambda x, mu: op(left(x, mu), right(x, mu))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _compile_node(node.operand)
        sign = -1.0 if isinstance(node.op, ast.USub) else 1.0
        return lambda x, mu: sign * inner(x, mu)
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        name = node.func.id
        if name not in _ALLOWED_CALLS or len(node.args) != 1 or node.keywords:
            raise ConfigError(f"call {name!r} not allowed in expression")
        if name in ("mean", "mom2"):
            if not (isinstance(node.args[0], ast.Name) and node.args[0].id == "mu"):
                raise ConfigError(f"{name}() takes the measure argument 'mu'")
            if name == "mean":
                return lambda x, mu: float(mu.mean()[0])
            from .measure import raw_moment
            return lambda x, mu: raw_moment(mu, 2)
        fn = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs}[name]
        inner = _compile_node(node.args[0])
        return lambda x, mu: fn(inner(x, mu))
    raise ConfigError(f"expression node {type(node).__name__} not allowed")


def compile_expression(src):
    """Compile a restricted arithmetic expression of ``x`` and ``mu``.

    Supported: + - * /, unary minus, sin, cos, exp, abs, mean(mu),
    mom2(mu), numeric literals.  Returns a callable acting elementwise
    on an (n,) state array.  One-dimensional models only.
    """
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {src!r}: {exc}") from exc
    return _compile_node(tree)


def model_from_expressions(expr_drift, expr_diffusion, l=1, label=None):
    """Build a one-dimensional ModelSpec from expression strings;
    ``expr_diffusion`` may be a list of l column expressions."""
    bfn = compile_expression(expr_drift)
    cols = expr_diffusion if isinstance(expr_diffusion, list) else [expr_diffusion]
    if len(cols) != l:
        raise ConfigError(f"expected {l} diffusion expressions, got {len(cols)}")
    sfns = [compile_expression(c) for c in cols]

    def drift(x, mu):
        return np.atleast_1d(np.asarray(bfn(x[0], mu), dtype=np.float64))

    def diffusion(x, mu):
        return np.array([[float(np.asarray(f(x[0], mu))) for f in sfns]])

    def dbatch(states, mu):
        x = states[:, 0]
        return np.broadcast_to(np.asarray(bfn(x, mu), dtype=np.float64),
                               x.shape).copy()[:, None]

    def sbatch(states, mu):
        x = states[:, 0]
        cols_v = [np.broadcast_to(np.asarray(f(x, mu), dtype=np.float64), x.shape)
                  for f in sfns]
        return np.stack(cols_v, axis=1)[:, None, :]

    return ModelSpec(1, l, drift, diffusion,
                     label or f"expr({expr_drift!r})",
                     drift_batch=dbatch, diffusion_batch=sbatch)


_BUILTIN_FACTORIES = {
    "example61": (example61, {"m": 0.25, "l": 50}),
    "meanfield_ou": (meanfield_ou, {"m": 0.25, "s": 1.0}),
    "contractive": (contractive, {"eps": 1.0}),
}


def model_from_config(section):
    """Instantiate a model from a config mapping.

    Either ``{"builtin": name, **params}`` or
    ``{"expr_drift": ..., "expr_diffusion": ..., "d": 1, "l": ...}``.
    Unknown keys are errors.
    """
    if not isinstance(section, dict):
        raise ConfigError("model section must be a mapping")
    sec = dict(section)
    if "builtin" in sec:
        name = sec.pop("builtin")
        if name not in _BUILTIN_FACTORIES:
            raise ConfigError(
                f"unknown builtin {name!r}; choices: {sorted(_BUILTIN_FACTORIES)}")
        factory, defaults = _BUILTIN_FACTORIES[name]
        unknown = set(sec) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown model keys {sorted(unknown)} for {name!r}")
        kwargs = {**defaults, **sec}
        return factory(**kwargs)
    if "expr_drift" in sec:
        drift = sec.pop("expr_drift")
        diffusion = sec.pop("expr_diffusion", "0")
        d = sec.pop("d", 1)
        l = sec.pop("l", 1)
        if sec:
            raise ConfigError(f"unknown model keys {sorted(sec)}")
        if d != 1:
            raise ConfigError("expression models support d = 1 only")
        return model_from_expressions(drift, diffusion, l=l)
    raise ConfigError("model section needs 'builtin' or 'expr_drift'")
