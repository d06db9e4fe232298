"""Independent reference implementations used by the tests."""
from collections import deque
import itertools

import numpy as np


def bfs_component(occupied: np.ndarray, seeds: np.ndarray, star: bool = False) -> np.ndarray:
    """Sites of ``occupied | seeds`` reachable from a seed (plain BFS over index tuples)."""
    d = occupied.ndim
    if star:
        steps = [s for s in itertools.product((-1, 0, 1), repeat=d) if any(s)]
    else:
        steps = [tuple(int(i == k) * sgn for i in range(d)) for k in range(d) for sgn in (1, -1)]
    allowed = occupied | seeds
    seen = np.zeros_like(allowed)
    q = deque()
    for s in zip(*np.nonzero(seeds)):
        seen[s] = True
        q.append(s)
    while q:
        x = q.popleft()
        for e in steps:
            y = tuple(a + b for a, b in zip(x, e))
            if all(0 <= c < n for c, n in zip(y, allowed.shape)) and allowed[y] and not seen[y]:
                seen[y] = True
                q.append(y)
    return seen


def brute_symdiff(a: np.ndarray, b: np.ndarray) -> int:
    """``min_z |A Δ (B + z)|`` over all integer shifts by explicit enumeration."""
    best = None
    pa = np.argwhere(a)
    sa = set(map(tuple, pa))
    pb = np.argwhere(b)
    for z in itertools.product(*[range(-nb, na + 1) for na, nb in zip(a.shape, b.shape)]):
        sb = set(map(tuple, pb + np.asarray(z)))
        v = len(sa ^ sb)
        if best is None or v < best:
            best = v
    return best
