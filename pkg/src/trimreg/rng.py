"""Reproducible random streams.

Streams are Philox-4x64-10 counter generators keyed by a 64-bit seed
(``numpy.random.Philox(key=seed)``, counter starting at zero).  Derived
draws use only the raw 64-bit outputs so they can be matched elsewhere:

* uniform: ``(raw >> 11) * 2**-53`` in ``[0, 1)``;
* normal: Box-Muller on consecutive raw pairs ``(r1, r2)`` with
  ``u1 = 1 - uniform(r1)``, ``u2 = uniform(r2)``, emitting
  ``sqrt(-2 log u1) * cos(2 pi u2)`` then ``... * sin(2 pi u2)``;
* subsets: partial Fisher-Yates, ``j = i + floor(u * (p - i))``.

Per-replicate seeds come from :func:`derive_seed`, a SplitMix64 hash
chain over the base seed and the integer keys.
"""

import numpy as np

__all__ = ["splitmix64", "derive_seed", "Stream"]

_MASK = (1 << 64) - 1


def splitmix64(x):
    """SplitMix64 output function applied to ``x + golden gamma``."""
    z = (int(x) + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(base_seed, *keys):
    """Hash a base seed and integer keys into a new 64-bit seed."""
    h = splitmix64(int(base_seed) & _MASK)
    for key in keys:
        h = splitmix64(h ^ (int(key) & _MASK))
    return h


class Stream:
    """A keyed Philox stream with Box-Muller normals."""

    def __init__(self, seed):
        self.seed = int(seed) & _MASK
        self._bits = np.random.Philox(key=self.seed)

    def raw(self, size):
        return self._bits.random_raw(size)

    def uniform(self, size):
        return (self.raw(size) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, size):
        size = int(np.prod(size)) if np.ndim(size) else int(size)
        pairs = (size + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)]).ravel()
        return z[:size]

    def subset(self, p, k):
        """Sorted ``k``-subset of ``range(p)`` by partial Fisher-Yates."""
        idx = np.arange(p)
        u = self.uniform(k)
        for i in range(k):
            j = i + int(np.floor(u[i] * (p - i)))
            idx[i], idx[j] = idx[j], idx[i]
        return np.sort(idx[:k])
