"""Seed derivation and generator construction.

Every random draw in the package goes through :func:`generator`, a Philox
counter-based bit generator keyed by a 64-bit seed.  Replica seeds are derived
from a root seed with the splitmix64 finalizer, so replica ``i`` of a run never
depends on how many replicas were requested.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 step: advance the state by the golden gamma and mix."""
    z = (int(x) + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(root: int, *path: int) -> int:
    """Seed of the stream addressed by ``path`` under ``root``.

    ``derive_seed(root, i)`` is the seed of replica ``i``; deeper paths address
    sub-streams (e.g. ``(i, 0)`` for the sampler, ``(i, 1)`` for diagnostics).
    """
    s = splitmix64(int(root) & _MASK)
    for p in path:
        s = splitmix64(s ^ splitmix64(int(p) & _MASK))
    return s


def generator(seed: int | np.random.Generator | None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ValueError("an explicit seed is required for reproducibility")
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK))


def spawn(seed: int, n: int) -> list[int]:
    return [derive_seed(seed, i) for i in range(n)]
