"""
Deterministic random streams

Every random draw in the package goes through RandomStream so that datasets,
augmentations, dropout masks and initial weights are reproducible from a
single integer seed.

Generator: numpy's PCG64 (128-bit LCG state, XSL-RR 64-bit output), seeded
through SeedSequence(entropy=seed, spawn_key=key). Uniform doubles are
(next64 >> 11) * 2**-53. Normals use Box-Muller on consecutive pairs
(u1, u2): r = sqrt(-2 ln(1 - u1)), emitted as r*cos(2*pi*u2) then
r*sin(2*pi*u2).
"""
import numpy as np

SEED_MASK = (1 << 64) - 1


class RandomStream:
    """A PCG64 stream identified by (seed, *key)"""

    def __init__(self, seed, *key):
        self.seed = int(seed) & SEED_MASK
        self.key = tuple(int(k) for k in key)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self._generator = np.random.Generator(np.random.PCG64(sequence))

    def child(self, *key):
        """Independent stream for a sub-task, e.g. one sample of a batch"""
        return RandomStream(self.seed, *(self.key + tuple(key)))

    def uniform(self, size=None):
        """Doubles in [0, 1)"""
        return self._generator.random(size)

    def normal(self, size):
        """Standard normals by Box-Muller, in documented pair order"""
        count = int(np.prod(size))
        pairs = (count + 1) // 2
        u = self._generator.random(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        values = np.empty((pairs, 2))
        values[:, 0] = radius * np.cos(angle)
        values[:, 1] = radius * np.sin(angle)
        return values.ravel()[:count].reshape(size)

    def permutation(self, n):
        """Stable argsort of n uniforms"""
        return np.argsort(self.uniform(n), kind='stable')


def as_stream(seed_or_stream):
    """Accept either an integer seed or an existing RandomStream"""
    if isinstance(seed_or_stream, RandomStream):
        return seed_or_stream
    return RandomStream(seed_or_stream)


def derived_seed(seed, *key):
    """Deterministic 64-bit seed for item `key` of a run seeded with `seed`"""
    sequence = np.random.SeedSequence(entropy=int(seed) & SEED_MASK,
                                      spawn_key=tuple(int(k) for k in key))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
