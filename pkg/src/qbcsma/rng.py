"""Seed derivation: one root seed, independent reproducible streams per replication."""
import numpy as np

RNG_NAME = "numpy.random.PCG64"
RNG_ID = f"{RNG_NAME}+SeedSequence (numpy {np.__version__})"

MAX_SEED = 2**64 - 1


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for ``seed`` and a stream path such as (N, replication).

    Distinct stream paths give statistically independent generators; the
    same (seed, stream) always yields the same sequence.
    """
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


def fresh_seed() -> int:
    """Random root seed, to be recorded by the caller."""
    return int(np.random.SeedSequence().generate_state(1, dtype=np.uint64)[0])


class UniformFeed:
    """Buffered unit exponentials and uniforms drawn in fixed-size blocks.

    Block size is fixed so the consumed sequence depends only on the seed.
    """

    BLOCK = 8192

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._exp = []
        self._uni = []
        self._i = self.BLOCK

    def _refill(self):
        self._exp = self._rng.standard_exponential(self.BLOCK).tolist()
        self._uni = self._rng.random(self.BLOCK).tolist()
        self._i = 0

    def pair(self):
        if self._i == self.BLOCK:
            self._refill()
        i = self._i
        self._i = i + 1
        return self._exp[i], self._uni[i]
