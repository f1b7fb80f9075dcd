"""Deterministic, splittable random number generation.

All randomness in the package flows through :class:`Rng`, a thin wrapper
around NumPy's ``SeedSequence``/``PCG64`` pair.  ``SeedSequence.spawn``
gives statistically independent child streams, so parallel work (one
fiber per worker, one sample per draw) stays bit-reproducible no matter
how it is scheduled: the stream consumed by child ``i`` depends only on
the root seed and the spawn path, never on execution order.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Rng"]


class Rng:
    """Seeded random stream with explicit splitting.

    Parameters
    ----------
    seed : int or numpy.random.SeedSequence
        Root seed (64-bit int) or an already-spawned seed sequence.
    """

    def __init__(self, seed):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
            self.seed = seed.entropy
        else:
            self.seed = int(seed)
            self._seq = np.random.SeedSequence(self.seed)
        self._gen = None

    @property
    def generator(self) -> np.random.Generator:
        """The underlying PCG64 generator (created lazily, owned by caller)."""
        if self._gen is None:
            self._gen = np.random.Generator(np.random.PCG64(self._seq))
        return self._gen

    def split(self, n: int) -> list["Rng"]:
        """Spawn ``n`` independent child streams."""
        return [Rng(s) for s in self._seq.spawn(n)]

    def spawn(self) -> "Rng":
        """Spawn a single independent child stream."""
        return Rng(self._seq.spawn(1)[0])

    def __repr__(self):
        return f"Rng(seed={self.seed!r})"
