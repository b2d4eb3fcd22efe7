"""Empirical-measure arithmetic: moments, the (1+|x|)^2 norm, and
computable surrogates for the dual-Lipschitz metric on probability
measures with second moments.

The dual metric over the unit ball of {Lipschitz + quadratic-growth}
test functions is a supremum over an infinite class and is not exactly
computable.  This module exposes a bracket instead: ``rho_lower_bound``
(a maximum over a certified finite dictionary, always a lower bound)
and ``wasserstein1`` (every test function in the unit ball is
1-Lipschitz, so the 1-Wasserstein distance is an upper bound in one
dimension).  Downstream checks pick whichever side keeps their verdict
conservative.
"""

import json
import math

import numpy as np

from .errors import StructuralError, UsageError
from .rng import ndtri_array

_WEIGHT_TOL = 1e-12


class EmpiricalMeasure:
    """Weighted particle cloud standing in for a probability measure.

    Parameters
    ----------
    points : array-like, shape (n, d) or (n,) for d = 1
        Particle locations; must be finite.
    weights : array-like, shape (n,), optional
        Nonnegative weights summing to 1 within 1e-12.  Defaults to
        equal weights.  Use :meth:`normalized` to renormalize raw
        masses.

    Instances are immutable after construction and safe to share
    between workers.
    """

    __slots__ = ("points", "weights", "dim")

    def __init__(self, points, weights=None):
        pts = np.atleast_1d(np.array(points, dtype=np.float64))  # own copy; frozen below
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise StructuralError("points must be a nonempty (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise StructuralError("points contain NaN/Inf")
        n = pts.shape[0]
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.array(weights, dtype=np.float64)
            if w.shape != (n,):
                raise StructuralError(
                    f"weights shape {w.shape} does not match {n} points")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise StructuralError("weights must be finite and nonnegative")
            if abs(w.sum() - 1.0) > _WEIGHT_TOL:
                raise StructuralError(
                    f"weights sum to {w.sum()!r}, expected 1 within {_WEIGHT_TOL}")
        pts.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dim", pts.shape[1])

    def __setattr__(self, name, value):
        raise AttributeError("EmpiricalMeasure is immutable")

    @classmethod
    def normalized(cls, points, raw_weights):
        """Build a measure from raw nonnegative masses, renormalizing them."""
        w = np.asarray(raw_weights, dtype=np.float64)
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise StructuralError("raw weights must have positive finite total mass")
        return cls(points, w / total)

    @classmethod
    def dirac(cls, x):
        """Point mass at ``x``."""
        return cls(np.atleast_1d(np.asarray(x, dtype=np.float64))[None, :])

    @property
    def n_points(self):
        return self.points.shape[0]

    def mean(self):
        return self.weights @ self.points

    def to_json(self):
        return json.dumps({"dim": self.dim,
                           "points": self.points.tolist(),
                           "weights": self.weights.tolist()})

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        for key in ("dim", "points", "weights"):
            if key not in data:
                raise StructuralError(f"measure JSON missing key {key!r}")
        pts = np.asarray(data["points"], dtype=np.float64)
        if not np.all(np.isfinite(pts)):
            raise StructuralError("measure JSON contains non-finite coordinates")
        mu = cls(pts, np.asarray(data["weights"], dtype=np.float64))
        if mu.dim != data["dim"]:
            raise StructuralError(
                f"declared dim {data['dim']} does not match points of dim {mu.dim}")
        return mu

    def __repr__(self):
        return f"EmpiricalMeasure(n={self.n_points}, dim={self.dim})"


def _check_same_dim(mu, nu):
    if mu.dim != nu.dim:
        raise StructuralError(f"dimension mismatch: {mu.dim} vs {nu.dim}")


def lambda2_norm_sq(mu):
    """Squared weight norm sum_i w_i (1 + |x_i|)^2; at least 1 for any probability measure."""
    r = np.linalg.norm(mu.points, axis=1)
    return float(mu.weights @ (1.0 + r) ** 2)


def raw_moment(mu, p):
    """Raw radial moment sum_i w_i |x_i|^p for integer 1 <= p <= 4."""
    if not isinstance(p, (int, np.integer)) or not 1 <= p <= 4:
        raise UsageError(f"moment order must be an integer in 1..4, got {p!r}")
    r = np.linalg.norm(mu.points, axis=1)
    return float(mu.weights @ r ** p)


def _w1_1d(x, wx, y, wy):
    # exact integral of |F_mu - F_nu| over the merged support (step CDFs)
    xs = np.argsort(x, kind="stable")
    ys = np.argsort(y, kind="stable")
    xv, xw = x[xs], wx[xs]
    yv, yw = y[ys], wy[ys]
    allv = np.sort(np.concatenate([xv, yv]), kind="stable")
    deltas = np.diff(allv)
    cdf_x = np.concatenate([[0.0], np.cumsum(xw)])[
        np.searchsorted(xv, allv[:-1], side="right")]
    cdf_y = np.concatenate([[0.0], np.cumsum(yw)])[
        np.searchsorted(yv, allv[:-1], side="right")]
    return float(np.abs(cdf_x - cdf_y) @ deltas)


def _r_sequence_alpha(d):
    # positive root of x**(d+1) = x + 1 (generalized golden ratio)
    phi = 2.0
    for _ in range(64):
        phi = (1.0 + phi) ** (1.0 / (d + 1))
    return np.array([phi ** -(j + 1) for j in range(d)]) % 1.0


def sliced_directions(dim, count):
    """Deterministic unit directions from the low-discrepancy R_d sequence.

    Points of the additive-recurrence sequence in [0,1]^dim are mapped
    through the inverse normal CDF and normalized, giving a fixed
    quasi-uniform covering of the sphere with no RNG involved.
    """
    alpha = _r_sequence_alpha(dim)
    k = np.arange(1, count + 1)[:, None]
    u = (0.5 + k * alpha[None, :]) % 1.0
    z = ndtri_array(u).reshape(count, dim)
    norms = np.linalg.norm(z, axis=1)
    norms[norms < 1e-12] = 1.0
    return z / norms[:, None]


def wasserstein1(mu, nu, projections=64):
    """1-Wasserstein distance between two empirical measures.

    In one dimension the value is exact (CDF-difference integral over
    the merged support).  In higher dimension it is the sliced
    estimate: the average of exact one-dimensional distances over
    ``projections`` deterministic unit directions, which lower-bounds
    the true distance.
    """
    _check_same_dim(mu, nu)
    if mu.dim == 1:
        return _w1_1d(mu.points[:, 0], mu.weights, nu.points[:, 0], nu.weights)
    if projections < 1:
        raise UsageError("projections must be >= 1")
    dirs = sliced_directions(mu.dim, projections)
    px = mu.points @ dirs.T
    py = nu.points @ dirs.T
    vals = [_w1_1d(px[:, j], mu.weights, py[:, j], nu.weights)
            for j in range(projections)]
    return float(np.mean(vals))


class TestFunction:
    """Scalar test function with declared Lipschitz and growth certificates.

    ``growth`` bounds sup |phi(x)| / (1+|x|)^2 and ``lip`` the Lipschitz
    constant; admission to a :class:`TestDictionary` requires
    ``lip + growth <= 1``.  ``fn`` must accept an (n, d) array and
    return an (n,) array.
    """

    __slots__ = ("fn", "lip", "growth", "label")

    def __init__(self, fn, lip, growth, label=""):
        self.fn = fn
        self.lip = float(lip)
        self.growth = float(growth)
        self.label = label

    def __call__(self, points):
        return np.asarray(self.fn(points), dtype=np.float64)


def _certify_grid(dim, n_total=10_000, radius=10.0):
    per_axis = max(2, math.ceil(n_total ** (1.0 / dim)))
    axes = [np.linspace(-radius, radius, per_axis)] * dim
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    return grid


class TestDictionary:
    """Finite family of certified unit-ball test functions.

    Each candidate's measured growth on a fixed audit grid plus its
    declared Lipschitz constant must not exceed 1; failures are
    rejected at construction so that the dictionary supremum is a sound
    lower bound for the dual metric.
    """

    def __init__(self, functions, dim, grid_points=10_000, radius=10.0, tol=1e-9):
        if not functions:
            raise UsageError("test dictionary must contain at least one function")
        grid = _certify_grid(dim, grid_points, radius)
        denom = (1.0 + np.linalg.norm(grid, axis=1)) ** 2
        for f in functions:
            if f.lip + f.growth > 1.0 + tol:
                raise UsageError(
                    f"function {f.label!r}: declared lip+growth = "
                    f"{f.lip + f.growth:.6g} exceeds 1")
            vals = f(grid)
            if vals.shape != (grid.shape[0],):
                raise StructuralError(
                    f"function {f.label!r} returned shape {vals.shape}")
            measured = float(np.max(np.abs(vals) / denom))
            if measured + f.lip > 1.0 + tol:
                raise UsageError(
                    f"function {f.label!r}: measured growth {measured:.6g} + "
                    f"declared lip {f.lip:.6g} exceeds 1")
        self.functions = tuple(functions)
        self.dim = dim

    def __len__(self):
        return len(self.functions)


def default_test_dictionary(dim):
    """Small built-in dictionary: scaled coordinates, radius, and bounded maps."""
    fns = []
    for j in range(dim):
        fns.append(TestFunction(
            lambda pts, j=j: pts[:, j] / 1.25, lip=0.8, growth=0.2,
            label=f"x{j + 1}/1.25"))
        fns.append(TestFunction(
            lambda pts, j=j: 0.5 * np.tanh(pts[:, j]), lip=0.5, growth=0.125,
            label=f"tanh(x{j + 1})/2"))
    fns.append(TestFunction(
        lambda pts: np.linalg.norm(pts, axis=1) / 1.25, lip=0.8, growth=0.2,
        label="|x|/1.25"))
    fns.append(TestFunction(
        lambda pts: 0.5 * np.cos(pts[:, 0]), lip=0.5, growth=0.5,
        label="cos(x1)/2"))
    return TestDictionary(fns, dim)


def rho_lower_bound(mu, nu, dictionary):
    """Lower bound for the dual metric: max over the dictionary of
    |integral of phi d(mu - nu)|.  Never exceeds the 1-Wasserstein
    distance in one dimension."""
    _check_same_dim(mu, nu)
    if dictionary is None or len(dictionary.functions) == 0:
        raise UsageError("rho_lower_bound needs a nonempty dictionary")
    if dictionary.dim != mu.dim:
        raise StructuralError(
            f"dictionary dim {dictionary.dim} does not match measures of dim {mu.dim}")
    best = 0.0
    for f in dictionary.functions:
        gap = abs(float(mu.weights @ f(mu.points)) - float(nu.weights @ f(nu.points)))
        best = max(best, gap)
    return best
