"""Interacting-particle Euler integrator for the mean-field SDE.

Each replica advances an N-particle system in which the law of the
solution is replaced by the within-replica equal-weight empirical
measure, recomputed once per step (synchronous coupling).  Replicas are
independent; cross-replica pooling happens only in diagnostics.  Noise
comes from the counter-based generator in :mod:`mvselab.rng`, keyed on
(seed, replica, step, particle, component), so ensembles are
bit-identical for a given config regardless of scheduling or thread
count.
"""

import io
import json
import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import (ConfigError, IntegrationError, StructuralError,
                     UsageError)
from .measure import EmpiricalMeasure
from .model import diffusion_batch, drift_batch

__version__ = "0.1.0"

BLOWUP_LIMIT = 1e8
PACKED_MAGIC = b"MVSELAB\x00ENSEMBLE"  # 16 bytes


@dataclass(frozen=True)
class PointInit:
    """Deterministic initial condition: every particle starts at x0."""

    x0: tuple

    @classmethod
    def of(cls, x0):
        return cls(tuple(np.atleast_1d(np.asarray(x0, dtype=np.float64)).tolist()))

    @property
    def dim(self):
        return len(self.x0)

    def draw(self, seed, replica, n_particles):
        return np.tile(np.asarray(self.x0, dtype=np.float64), (n_particles, 1))

    def to_dict(self):
        return {"point": list(self.x0)}


@dataclass(frozen=True)
class GaussianInit:
    """Gaussian initial condition with given mean vector and covariance."""

    mean: tuple
    cov: tuple  # row tuples

    @classmethod
    def of(cls, mean, cov):
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise ConfigError(f"covariance shape {cov.shape} does not match "
                              f"mean of dim {mean.size}")
        np.linalg.cholesky(cov)  # must be positive definite
        return cls(tuple(mean.tolist()), tuple(map(tuple, cov.tolist())))

    @property
    def dim(self):
        return len(self.mean)

    def draw(self, seed, replica, n_particles):
        mean = np.asarray(self.mean, dtype=np.float64)
        chol = np.linalg.cholesky(np.asarray(self.cov, dtype=np.float64))
        z = rng.init_normals(seed, replica, n_particles, mean.size)
        return mean[None, :] + z @ chol.T

    def to_dict(self):
        return {"gaussian": {"mean": list(self.mean),
                             "cov": [list(r) for r in self.cov]}}


def init_from_dict(data):
    if not isinstance(data, dict) or len(data) != 1:
        raise ConfigError("init section must be {'point': ...} or {'gaussian': ...}")
    if "point" in data:
        return PointInit.of(data["point"])
    if "gaussian" in data:
        g = data["gaussian"]
        return GaussianInit.of(g["mean"], g["cov"])
    raise ConfigError(f"unknown init kind {list(data)!r}")


@dataclass(frozen=True)
class SimConfig:
    """Ensemble run parameters.

    ``n_paths`` independent replicas of ``n_particles`` particles are
    integrated to ``t_end`` with step ``dt``; states are recorded every
    ``record_stride`` steps, always including t = 0 and the final step.
    """

    n_particles: int
    n_paths: int
    dt: float
    t_end: float
    seed: int
    init: object
    record_stride: int = 1

    def __post_init__(self):
        if self.n_particles < 2:
            raise ConfigError("n_particles must be >= 2")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be >= 1")
        if self.dt <= 0 or self.t_end <= 0:
            raise ConfigError("dt and t_end must be positive")
        if self.dt > self.t_end:
            raise ConfigError("dt must not exceed t_end")
        if self.n_steps < 1:
            raise ConfigError("t_end/dt must allow at least one step")
        if self.record_stride < 1:
            raise ConfigError("record_stride must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in 64 bits")

    @property
    def n_steps(self):
        return int(math.floor(self.t_end / self.dt + 1e-9))

    @property
    def recorded_steps(self):
        steps = list(range(0, self.n_steps + 1, self.record_stride))
        if steps[-1] != self.n_steps:
            steps.append(self.n_steps)
        return steps

    @property
    def times(self):
        return np.asarray([s * self.dt for s in self.recorded_steps])

    def to_dict(self):
        return {"n_particles": self.n_particles, "n_paths": self.n_paths,
                "dt": self.dt, "t_end": self.t_end, "seed": int(self.seed),
                "init": self.init.to_dict(), "record_stride": self.record_stride}

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {"n_particles", "n_paths", "dt", "t_end", "seed", "init",
                 "record_stride"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown sim keys {sorted(unknown)}")
        missing = known - {"record_stride"} - set(data)
        if missing:
            raise ConfigError(f"sim section missing keys {sorted(missing)}")
        data["init"] = init_from_dict(data["init"])
        return cls(**data)


class PathEnsemble:
    """Recorded trajectories of M independent N-particle replicas.

    ``states`` is indexed (replica, time, particle, coordinate).
    Replicas that blew up are marked in ``replica_status`` (the failing
    step index, -1 for success) and hold NaN past the failure; use
    :meth:`ok` for the surviving block.
    """

    def __init__(self, times, states, config, provenance, replica_status):
        self.times = times
        self.states = states
        self.config = config
        self.provenance = provenance
        self.replica_status = replica_status
        if not np.all(np.diff(times) > 0):
            raise StructuralError("recorded times must be strictly increasing")

    @property
    def n_ok(self):
        return int(np.sum(self.replica_status < 0))

    def ok(self):
        """States of surviving replicas only, shape (M_ok, T, N, d)."""
        return self.states[self.replica_status < 0]

    def __repr__(self):
        m, t, n, d = self.states.shape
        return (f"PathEnsemble(replicas={m}, times={t}, particles={n}, "
                f"dim={d}, failed={m - self.n_ok})")


def step(states, model, dt, noise):
    """One explicit Euler update of all particles.

    The empirical measure of the current states (equal weights) is
    frozen once, then every particle moves by
    ``b(x_i, mu) dt + sigma(x_i, mu) sqrt(dt) z_i``.
    """
    states = np.atleast_1d(np.asarray(states, dtype=np.float64))
    if states.ndim == 1:
        states = states[:, None]
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (states.shape[0], model.dim_noise):
        raise StructuralError(
            f"noise shape {noise.shape}, expected "
            f"({states.shape[0]}, {model.dim_noise})")
    if not np.all(np.isfinite(noise)):
        raise UsageError("noise entries must be finite")
    mu = EmpiricalMeasure(states)
    b = drift_batch(model, states, mu)
    s = diffusion_batch(model, states, mu)
    out = states + b * dt + math.sqrt(dt) * np.einsum("ndl,nl->nd", s, noise)
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite state after one Euler step")
    return out


def _generic_advance(model, states, dt, seed, replica, step_index):
    mu = EmpiricalMeasure(states)
    b = drift_batch(model, states, mu)
    s = diffusion_batch(model, states, mu)
    z = rng.normals(seed, replica, step_index, states.shape[0], model.dim_noise)
    return states + b * dt + math.sqrt(dt) * np.einsum("ndl,nl->nd", s, z)


def run_ensemble(model, config, observers=()):
    """Integrate the full ensemble; bit-identical for identical configs.

    Observers receive ``on_start(replica, states)`` and
    ``on_step(replica, step_index, t_after, states_before,
    states_after)`` callbacks per step (before/after buffers are
    read-only views).  A replica whose max |x| exceeds 1e8 (or goes
    non-finite) is aborted and marked; an ensemble with no surviving
    replica raises IntegrationError.
    """
    if config.init.dim != model.dim_state:
        raise ConfigError(f"init dim {config.init.dim} does not match model "
                          f"dim {model.dim_state}")
    n_steps = config.n_steps
    rec_steps = config.recorded_steps
    rec_index = {s: i for i, s in enumerate(rec_steps)}
    times = config.times
    m, n, d = config.n_paths, config.n_particles, model.dim_state
    out = np.full((m, len(rec_steps), n, d), np.nan)
    status = np.full(m, -1, dtype=np.int64)
    init_m2 = np.nan
    init_m4 = np.nan

    for r in range(m):
        states = config.init.draw(config.seed, r, n)
        if r == 0:
            radii2 = np.sum(states * states, axis=1)
            init_m2 = float(np.mean(radii2))
            init_m4 = float(np.mean(radii2 ** 2))
        out[r, 0] = states
        for ob in observers:
            if hasattr(ob, "on_start"):
                ob.on_start(r, states)
        for s in range(n_steps):
            prev = states
            if model.fast_step is not None:
                states = model.fast_step(prev, config.dt, config.seed, r, s)
            else:
                states = _generic_advance(model, prev, config.dt,
                                          config.seed, r, s)
            peak = float(np.max(np.abs(states)))
            if not math.isfinite(peak) or peak > BLOWUP_LIMIT:
                status[r] = s + 1
                break
            for ob in observers:
                ob.on_step(r, s, (s + 1) * config.dt, prev, states)
            if (s + 1) in rec_index:
                out[r, rec_index[s + 1]] = states
    if np.all(status >= 0):
        raise IntegrationError(
            f"all {m} replicas blew up (first at step {int(status.min())})",
            step=int(status.min()))
    provenance = {"rng": "splitmix64/as241", "seed": int(config.seed),
                  "version": __version__, "init_m2": init_m2,
                  "init_m4": init_m4}
    return PathEnsemble(times, out, config, provenance, status)


# ---------------------------------------------------------------------------
# persistence: csv (text) and packed (binary) columnar encodings

def _header_dict(ens):
    return {"config": ens.config.to_dict(),
            "provenance": ens.provenance,
            "replica_status": ens.replica_status.tolist(),
            "times": ens.times.tolist(),
            "format_version": 1}


def save_ensemble(ens, path, fmt="csv"):
    """Persist an ensemble.

    Both encodings hold a config-echo header plus rows
    (replica, t, particle, x1..xd) for surviving replicas.  ``packed``
    is the 16-byte magic, a little-endian uint64 header length, the
    UTF-8 header JSON, then rows as little-endian float64.
    """
    header = json.dumps(_header_dict(ens), sort_keys=True)
    m, t, n, d = ens.states.shape
    ok = np.flatnonzero(ens.replica_status < 0)
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(f"# {header}\n")
        cols = ",".join(["replica", "t", "particle"]
                        + [f"x{i + 1}" for i in range(d)])
        buf.write(cols + "\n")
        for r in ok:
            for ti in range(t):
                tv = ens.times[ti]
                block = ens.states[r, ti]
                for p in range(n):
                    xs = ",".join(f"{v:.17g}" for v in block[p])
                    buf.write(f"{r},{tv:.17g},{p},{xs}\n")
        data = buf.getvalue().encode()
    elif fmt == "packed":
        rows = np.empty((len(ok) * t * n, 3 + d))
        i = 0
        for r in ok:
            for ti in range(t):
                block = ens.states[r, ti]
                rows[i:i + n, 0] = r
                rows[i:i + n, 1] = ens.times[ti]
                rows[i:i + n, 2] = np.arange(n)
                rows[i:i + n, 3:] = block
                i += n
        hdr = header.encode()
        data = (PACKED_MAGIC
                + np.uint64(len(hdr)).tobytes()
                + hdr
                + rows.astype("<f8").tobytes())
    else:
        raise UsageError(f"unknown format {fmt!r}; use 'csv' or 'packed'")
    with open(path, "wb") as fh:
        fh.write(data)
    return path


def load_ensemble(path):
    """Read back an ensemble written by :func:`save_ensemble`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob.startswith(PACKED_MAGIC):
        off = len(PACKED_MAGIC)
        hlen = int(np.frombuffer(blob[off:off + 8], dtype="<u8")[0])
        header = json.loads(blob[off + 8:off + 8 + hlen].decode())
        rows = np.frombuffer(blob[off + 8 + hlen:], dtype="<f8")
    else:
        text = blob.decode()
        first, _, rest = text.partition("\n")
        if not first.startswith("# "):
            raise StructuralError(f"{path}: missing config header line")
        header = json.loads(first[2:])
        body = rest.split("\n", 1)[1] if "\n" in rest else ""
        rows = (np.loadtxt(io.StringIO(body), delimiter=",").ravel()
                if body.strip() else np.empty(0))
    config = SimConfig.from_dict(header["config"])
    times = np.asarray(header["times"])
    status = np.asarray(header["replica_status"], dtype=np.int64)
    d = config.init.dim
    width = 3 + d
    rows = rows.reshape(-1, width)
    if rows.size and not np.all(np.isfinite(rows)):
        raise StructuralError(f"{path}: non-finite entries in ensemble rows")
    m, t, n = config.n_paths, len(times), config.n_particles
    states = np.full((m, t, n, d), np.nan)
    ok = np.flatnonzero(status < 0)
    expected = len(ok) * t * n
    if rows.shape[0] != expected:
        raise StructuralError(
            f"{path}: {rows.shape[0]} rows, expected {expected}")
    i = 0
    for r in ok:
        for ti in range(t):
            states[r, ti] = rows[i:i + n, 3:]
            i += n
    return PathEnsemble(times, states, config, header["provenance"], status)
