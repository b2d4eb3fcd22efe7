"""Counter-based noise generator for reproducible parallel simulation.

Every normal draw is a pure function of the key tuple
``(seed, replica, step, particle, component)``, so ensembles are
bit-identical no matter how work is scheduled across workers.  The
algorithm is fixed and part of the file-format contract:

1. key chaining with the SplitMix64 finalizer ``mix64``:
   ``s0 = mix64(seed)``, ``r = mix64(s0 ^ (replica+1)*GAMMA)``,
   ``b = mix64(r ^ (step+1)*GAMMA)``;
2. the sample with flat index ``j = particle*n_components + component``
   is ``u = mix64(b + j*GAMMA)`` (a SplitMix64 stream started at ``b``);
3. ``u`` maps to the open unit interval via the top 53 bits,
   ``p = ((u >> 11) + 0.5) * 2**-53``;
4. normals come from the inverse normal CDF evaluated with Wichura's
   AS 241 double-precision rational approximation (abs. error < 1e-14).

Initial-condition draws use the reserved step key ``INIT_STEP`` so they
never collide with integration noise.
"""

import numpy as np
from numba import njit, uint64, float64

GAMMA = uint64(0x9E3779B97F4A7C15)
_MIX_MUL_1 = uint64(0xBF58476D1CE4E5B9)
_MIX_MUL_2 = uint64(0x94D049BB133111EB)
TWO_M53 = 1.0 / 9007199254740992.0

# step index reserved for initial-condition draws
INIT_STEP = 2**63 - 1


@njit(uint64(uint64), cache=True, inline="always")
def mix64(z):
    """SplitMix64 finalizer (Steele, Lea & Flood 2014)."""
    z = (z ^ (z >> uint64(30))) * _MIX_MUL_1
    z = (z ^ (z >> uint64(27))) * _MIX_MUL_2
    return z ^ (z >> uint64(31))


@njit(float64(float64), cache=True, inline="always", fastmath=True)
def ndtri(p):
    """Inverse standard normal CDF, AS 241 (PPND16), p in (0, 1)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r
                    + 6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r
                  + 1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r
                + 1.3314166789178437745e+2) * r + 3.3871328727963666080e+0)
        den = (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r
                    + 3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r
                  + 5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r
                + 4.2313330701600911252e+1) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = np.sqrt(-np.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r
                  + 3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r
                + 4.63033784615654529590e+0) * r + 1.42343711074968357734e+0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                  + 6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r
                + 2.05319162663775882187e+0) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                  + 2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r
                + 5.46378491116411436990e+0) * r + 6.65790464350110377720e+0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                    + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                  + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                + 5.99832206555887937690e-1) * r + 1.0)
    val = num / den
    return -val if q < 0.0 else val


@njit(uint64(uint64, uint64, uint64), cache=True, inline="always")
def step_key(seed, replica, step):
    """Per-(replica, step) base key; samples index a stream from here."""
    s0 = mix64(seed)
    r = mix64(s0 ^ (replica + uint64(1)) * GAMMA)
    return mix64(r ^ (step + uint64(1)) * GAMMA)


@njit(float64(uint64, uint64), cache=True, inline="always", fastmath=True)
def normal_at(base, flat_index):
    u = mix64(base + flat_index * GAMMA)
    return ndtri(((u >> uint64(11)) + 0.5) * TWO_M53)


@njit(cache=True, fastmath=True)
def _fill_normals(base, n, l, out):
    for i in range(n):
        row = uint64(i * l)
        for k in range(l):
            out[i, k] = normal_at(base, row + uint64(k))


def base_key(seed, replica, step):
    """Python-side helper returning the (replica, step) base as np.uint64."""
    return np.uint64(step_key(np.uint64(seed), np.uint64(replica),
                              np.uint64(step)))


def normals(seed, replica, step, n_particles, n_components):
    """Standard-normal block for one (replica, step), shape (n_particles, n_components)."""
    out = np.empty((n_particles, n_components), dtype=np.float64)
    _fill_normals(base_key(seed, replica, step), n_particles, n_components, out)
    return out


def init_normals(seed, replica, n_particles, dim):
    """Normals for the initial-condition draw of one replica."""
    return normals(seed, replica, INIT_STEP, n_particles, dim)


@njit(cache=True, fastmath=True)
def _fill_ndtri(p, out):
    for i in range(p.size):
        out[i] = ndtri(p[i])


def ndtri_array(p):
    """Vectorized inverse normal CDF (same AS 241 kernel as the noise path)."""
    p = np.ascontiguousarray(np.asarray(p, dtype=np.float64).ravel())
    out = np.empty_like(p)
    _fill_ndtri(p, out)
    return out
