"""Counter-based hashing used for every random draw in the package.

All randomness is a pure function of a 64-bit key and a counter, so an
environment never has to be stored and any walk can be replayed from its
(seed, run id, step) triple.
"""

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S11 = np.uint64(11)
_S27 = np.uint64(27)
_S30 = np.uint64(30)
_S31 = np.uint64(31)
_SITE_SALT = np.uint64(0x5EED0F517E5A17ED)
_TAU_SALT = np.uint64(0x7A0DE1A7C0FFEE11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def to_unit(z):
    """Map a 64-bit word to [0, 1) with 53 bits of resolution."""
    return float(z >> _S11) * _INV53


@njit(cache=True)
def stream_word(key, counter):
    # splitmix64: state after `counter + 1` increments of the golden gamma
    return mix64(key + np.uint64(counter + 1) * _GOLDEN)


@njit(cache=True)
def stream_uniform(key, counter):
    return to_unit(stream_word(key, counter))


@njit(cache=True)
def derive_key(seed, index):
    return mix64(seed ^ mix64(np.uint64(index) * _GOLDEN + _GOLDEN))


@njit(cache=True)
def tau_key(walk_key):
    return mix64(walk_key ^ _TAU_SALT)


# Weyl-lattice multipliers, one per coordinate (d <= 8)
_SITE_K = np.array([0x9E3779B97F4A7C15, 0xC2B2AE3D27D4EB4F, 0x165667B19E3779F9,
                    0xD6E8FEB86659FD93, 0xFF51AFD7ED558CCD, 0xC4CEB9FE1A85EC53,
                    0x2545F4914F6CDD1D, 0x4F1BBCDCBFA53E0B], dtype=np.uint64)
MAX_DIM = _SITE_K.size


@njit(cache=True)
def site_key(seed):
    return mix64(seed ^ _SITE_SALT)


@njit(cache=True, inline="always")
def site_uniform_at(key, pos, r, off, j, period):
    """Uniform variate of site pos[r] + off[j], reduced mod ``period`` if > 0.

    One finalizer round over a seed-offset Weyl lattice keeps the per-step
    cost low; neighbouring sites are decorrelated by the splitmix64 mixer.
    """
    h = key
    for i in range(pos.shape[1]):
        c = pos[r, i] + off[j, i]
        if period > 0:
            c = c % period
        h += np.uint64(c) * _SITE_K[i]
    return to_unit(mix64(h))


@njit(cache=True)
def site_uniform(seed, x, period):
    """Uniform variate attached to lattice site ``x`` (1-D coordinate array)."""
    pos = x.reshape(1, x.shape[0])
    off = np.zeros((1, x.shape[0]), dtype=np.int64)
    return site_uniform_at(site_key(seed), pos, 0, off, 0, period)


@njit(cache=True)
def site_uniforms(seed, xs, period):
    """Vectorised ``site_uniform`` over the rows of ``xs``."""
    key = site_key(seed)
    off = np.zeros((1, xs.shape[1]), dtype=np.int64)
    out = np.empty(xs.shape[0])
    for r in range(xs.shape[0]):
        out[r] = site_uniform_at(key, xs, r, off, 0, period)
    return out


def as_u64(seed):
    """Normalise a Python integer seed to an unsigned 64-bit numpy scalar."""
    return np.uint64(int(seed) & MASK64)


def derive_seed(seed, index):
    """Python-level seed derivation (replica ``index`` of base ``seed``)."""
    return int(derive_key(as_u64(seed), index))
