"""Numeric substrate: f64 arrays, seedable randomness, reference matmul.

Arrays are plain C-contiguous float64 ndarrays, treated as immutable after
construction everywhere in this package. Randomness comes from two
constructions:

* :class:`Prng` — PCG64 seeded through SeedSequence spawn keys, so
  substreams for distinct id tuples are independent by construction and
  bit-identical across runs and platforms (fixed numpy generation
  algorithms).
* :func:`per_sample_uniform` — a stateless SplitMix64 counter hash keyed by
  (seed, epoch, sample_id, coordinate), used for adversarial init noise so
  each sample's noise is independent of batch composition and worker count.
"""

import numpy as np

from udr import backend
from udr.errors import ArgumentError, DimensionError


def as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def matmul(a, b) -> np.ndarray:
    """Matrix product with deterministic left-to-right accumulation.

    Exactly reproduces the naive triple loop (no FMA contraction, no
    blocked reordering); prefer np.dot for large operands where the
    accumulation order does not matter.
    """
    a = as_f64(a)
    b = as_f64(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return backend.kernels().matmul_exact(a, b)


class Prng:
    """Seedable generator with labelled substreams.

    A stream is identified by (seed, ids...) where ids is a tuple of
    non-negative integers; `substream` extends the tuple. Distinct id tuples
    give statistically independent streams (SeedSequence spawn keys).
    """

    def __init__(self, seed: int, ids: tuple = ()):
        self.seed = int(seed)
        self.ids = tuple(int(i) for i in ids)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.ids))
        )

    def substream(self, *ids) -> "Prng":
        return Prng(self.seed, self.ids + tuple(int(i) for i in ids))

    def uniform(self, lo: float, hi: float, shape) -> np.ndarray:
        if lo > hi:
            raise ArgumentError(f"uniform bounds reversed: lo={lo} > hi={hi}")
        return lo + (hi - lo) * self._gen.random(shape)

    def normal(self, mean, cov_diag) -> np.ndarray:
        """Gaussian draw with per-coordinate mean and variance.

        Uses the generator's ziggurat standard-normal transform; cov_diag=0
        coordinates return the mean exactly.
        """
        mean = as_f64(mean)
        cov_diag = as_f64(cov_diag)
        if mean.shape != cov_diag.shape:
            raise DimensionError(
                f"mean shape {mean.shape} != cov_diag shape {cov_diag.shape}"
            )
        if np.any(cov_diag < 0):
            raise ArgumentError("cov_diag entries must be >= 0")
        return mean + np.sqrt(cov_diag) * self._gen.standard_normal(mean.shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, lo: int, hi: int, shape=None) -> np.ndarray:
        return self._gen.integers(lo, hi, size=shape)


def sample_uniform(rng: Prng, lo: float, hi: float, shape) -> np.ndarray:
    """I.i.d. entries in [lo, hi); reproducible for a fixed stream."""
    return rng.uniform(lo, hi, shape)


def sample_normal(rng: Prng, mean, cov_diag) -> np.ndarray:
    return rng.normal(mean, cov_diag)


_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _SM_M1
    z = (z ^ (z >> np.uint64(27))) * _SM_M2
    return z ^ (z >> np.uint64(31))


def per_sample_uniform(seed: int, epoch: int, sample_ids, dim: int,
                       lo: float, hi: float) -> np.ndarray:
    """Counter-based uniform noise in [lo, hi), one row per sample id.

    Row i depends only on (seed, epoch, sample_ids[i], column), never on the
    position of the sample inside its batch, so shuffling and worker counts
    cannot change the noise a sample receives.
    """
    if lo > hi:
        raise ArgumentError(f"uniform bounds reversed: lo={lo} > hi={hi}")
    ids = np.asarray(sample_ids, dtype=np.uint64).reshape(-1, 1)
    cols = np.arange(dim, dtype=np.uint64).reshape(1, -1)
    with np.errstate(over="ignore"):  # modular uint64 arithmetic is intended
        h = _splitmix64(np.uint64(seed) + _SM_GAMMA)
        h = _splitmix64(h ^ (np.uint64(epoch) + _SM_GAMMA))
        z = _splitmix64(h ^ (ids + _SM_GAMMA))
        z = _splitmix64(z ^ (cols + _SM_GAMMA))
    u = (z >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
    return lo + (hi - lo) * u
