"""Counter-based random streams.

Every variate is a pure function of ``(seed, tag, counter words)`` via
Philox4x32-10, so no generator state is ever shared between workers.
Word layout of the 128-bit counter: ``(c0, c1, c2 | tag << 24, stream)``.
"""

import numpy as np

from . import _backend

# tags occupy the top byte of counter word c2
BROWNIAN = 1
JUMP_COUNT = 2
JUMP_TIME = 3
JUMP_SIZE = 4
JUMP_LARGE = 5
CHOICE = 6
GENERIC = 7

_MASK64 = (1 << 64) - 1


def splitmix64(z):
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed, *keys):
    """Hash a seed and integer keys into a new 64-bit seed."""
    h = splitmix64(int(seed) & _MASK64)
    for k in keys:
        h = splitmix64(h ^ (int(k) & _MASK64))
    return h


def _flat_counters(tag, c0, c1, c2, c3):
    c0, c1, c2, c3 = np.broadcast_arrays(
        np.asarray(c0, dtype=np.int64), np.asarray(c1, dtype=np.int64),
        np.asarray(c2, dtype=np.int64), np.asarray(c3, dtype=np.int64))
    shape = c0.shape
    words = [np.ascontiguousarray(c.reshape(-1) & 0xFFFFFFFF, dtype=np.uint32)
             for c in (c0, c1, c2 & 0xFFFFFF, c3)]
    words[2] = words[2] | np.uint32(tag << 24)
    return shape, words


def uniforms(seed, tag, c0, c1, c2=0, c3=0, backend=None):
    """Two uniforms on [0, 1) per counter; result shape ``broadcast + (2,)``."""
    shape, w = _flat_counters(tag, c0, c1, c2, c3)
    out = _backend.get(backend).uniform_pairs(int(seed) & _MASK64, *w)
    return np.asarray(out).reshape(shape + (2,))


def normals(seed, tag, c0, c1, c2=0, c3=0, backend=None):
    """Two standard normals per counter; result shape ``broadcast + (2,)``."""
    shape, w = _flat_counters(tag, c0, c1, c2, c3)
    out = _backend.get(backend).normal_pairs(int(seed) & _MASK64, *w)
    return np.asarray(out).reshape(shape + (2,))


def brownian_normals(seed, stream, paths, step, m, backend=None):
    """The ``m`` standard normals driving each path over increment ``step``."""
    paths = np.ascontiguousarray(np.asarray(paths, dtype=np.int64) & 0xFFFFFFFF, dtype=np.uint32)
    k = _backend.get(backend)
    return np.asarray(k.brownian_normals(int(seed) & _MASK64, int(stream) & 0xFFFFFFFF,
                                         paths, int(step), int(m)))


def generator(seed, *keys):
    """A numpy Generator on a Philox stream keyed by ``derive_seed(seed, *keys)``.

    Used where a caller-supplied sampler needs a conventional Generator.
    """
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *keys)))
