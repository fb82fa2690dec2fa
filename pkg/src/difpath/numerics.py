"""Seeded random streams and the symmetric-matrix routines used by FID.

Random numbers come from a Philox4x64 counter-based generator keyed by
``(seed, stream_id)``. A stream's position is the number of 64-bit words
consumed so far, so any position can be reached directly; that is what lets
sample ``i`` of a batch draw its noise at a fixed offset no matter how the
batch is chunked.
"""
from dataclasses import dataclass

import numpy as np

from .errors import NotPSDError, ParameterError, SymmetryError

_MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0


def _splitmix64(z):
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass
class RngStream:
    """A position in a counter-based random stream.

    ``counter`` counts 64-bit words already consumed. Drawing advances it in
    place; ``child`` derives an independent stream without touching the parent.
    """

    seed: int
    stream: int = 0
    counter: int = 0

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64
        self.stream = int(self.stream) & _MASK64
        if self.counter < 0:
            raise ParameterError("counter must be non-negative")

    def child(self, index):
        return RngStream(self.seed, _splitmix64(self.stream ^ _splitmix64(int(index) + 1)), 0)

    def at(self, counter):
        return RngStream(self.seed, self.stream, counter)

    def copy(self):
        return RngStream(self.seed, self.stream, self.counter)

    def raw(self, n):
        """Next ``n`` raw uint64 words."""
        n = int(n)
        if n <= 0:
            return np.empty(0, dtype=np.uint64)
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        bg = np.random.Philox(key=key, counter=self.counter // 4)
        skip = self.counter % 4
        words = bg.random_raw(n + skip)[skip:]
        self.counter += n
        return words

    def uniform(self, size=None):
        """Uniform doubles on [0, 1), one word each; a float when ``size`` is None."""
        if size is None:
            return float((self.raw(1) >> np.uint64(11))[0]) * _INV_2_53
        shape = (int(size),) if np.isscalar(size) else tuple(size)
        u = (self.raw(int(np.prod(shape))) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return u.reshape(shape)

    def integers(self, low, high, size=None):
        """Integers in [low, high); ``high - low`` must be far below 2**53."""
        if size is None:
            return int(low + np.floor(self.uniform() * (high - low)))
        return low + np.floor(self.uniform(size) * (high - low)).astype(np.int64)

    def permutation(self, n):
        return np.argsort(self.uniform(n), kind="stable")

    def generator(self):
        """A numpy Generator seeded from the next word (for non-hot sampling helpers)."""
        word = int(self.raw(1)[0])
        return np.random.Generator(np.random.Philox(key=np.array([self.seed, word], dtype=np.uint64)))


def gaussian_words(n):
    """Words consumed by ``gaussian`` for ``n`` values (Box-Muller works in pairs)."""
    return n + (n & 1)


def gaussian(rng, shape):
    """I.i.d. standard normals; consumes exactly ``gaussian_words(size)`` words."""
    shape = (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ParameterError(f"negative extent in shape {shape}")
    n = int(np.prod(shape)) if shape else 1
    if n == 0:
        return np.zeros(shape)
    words = rng.raw(gaussian_words(n))
    u = (words >> np.uint64(11)).astype(np.float64) * _INV_2_53
    u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
    u2 = u[1::2]
    rad = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * u1.size)
    z[0::2] = rad * np.cos(_TWO_PI * u2)
    z[1::2] = rad * np.sin(_TWO_PI * u2)
    return z[:n].reshape(shape)


def _check_square(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ParameterError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ParameterError("matrix has non-finite entries")
    return m


def sym_eig(m, tol=1e-8):
    """Eigen-decomposition of a symmetric matrix: ``m = V diag(w) V^T``.

    Symmetry is checked relative to the largest entry; LAPACK ``syevd`` does
    the work.
    """
    m = _check_square(m)
    scale = max(np.abs(m).max(initial=0.0), 1.0)
    asym = np.abs(m - m.T).max(initial=0.0)
    if asym > tol * scale:
        raise SymmetryError(f"matrix not symmetric: max |m - m^T| = {asym:.3e}")
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return w, v


def psd_sqrt(m, neg_tol=1e-8):
    """Symmetric PSD square root; eigenvalues in [-neg_tol, 0) are clamped to 0."""
    m = _check_square(m)
    w, v = sym_eig(m, tol=1e-8)
    if w.size and w.min() < -neg_tol:
        raise NotPSDError(f"matrix not PSD: smallest eigenvalue {w.min():.3e}")
    root = np.sqrt(np.clip(w, 0.0, None))
    s = (v * root) @ v.T
    return 0.5 * (s + s.T)
