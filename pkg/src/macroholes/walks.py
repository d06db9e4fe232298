"""Simple and weighted random walks on Z^d.

The hot loops are numba kernels that consume pre-drawn random buffers: uniform
direction codes for the simple walk, uniforms in [0, 1) for weighted walks.
Direction code ``k`` moves along axis ``k // 2``, forward for even ``k``.
A Python driver refills the buffer whenever a kernel reports it exhausted, so
paths are a deterministic function of the seed only.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba as nb
import numpy as np

from .lattice import SiteSet
from .rng import generator

# kernel return codes
_BUFFER, _EXITED, _HIT, _BUDGET, _TIME = 0, 1, 2, 3, 4


class StopReason(enum.Enum):
    EXITED_RADIUS = "exited_radius"
    HIT_TARGET = "hit_target"
    STEP_BUDGET = "step_budget"
    TIME_ELAPSED = "time_elapsed"


_REASONS = {_EXITED: StopReason.EXITED_RADIUS, _HIT: StopReason.HIT_TARGET,
            _BUDGET: StopReason.STEP_BUDGET, _TIME: StopReason.TIME_ELAPSED}


@dataclass(frozen=True)
class StopRule:
    """Stop at the first of: ``|X|_inf >= radius``, entering ``target``, ``budget`` steps.

    At least one criterion must be given.
    """

    radius: Optional[int] = None
    target: Optional[SiteSet] = None
    budget: Optional[int] = None

    def __post_init__(self):
        if self.radius is None and self.target is None and self.budget is None:
            raise ValueError("stop rule needs a radius, a target or a budget")
        if self.radius is not None and self.radius < 0:
            raise ValueError("radius must be non-negative")


def unit_vectors(d: int) -> np.ndarray:
    """Step vectors indexed by direction code, shape ``(2d, d)``."""
    e = np.zeros((2 * d, d), dtype=np.int64)
    for k in range(2 * d):
        e[k, k // 2] = 1 if k % 2 == 0 else -1
    return e


@dataclass(frozen=True, eq=False)
class WalkPath:
    start: tuple
    steps: np.ndarray = field(repr=False)
    stop_reason: StopReason = StopReason.STEP_BUDGET

    def __len__(self):
        return int(len(self.steps))

    @property
    def d(self) -> int:
        return len(self.start)

    def positions(self) -> np.ndarray:
        """All visited positions including the start, shape ``(len + 1, d)``."""
        e = unit_vectors(self.d)
        pos = np.empty((len(self.steps) + 1, self.d), dtype=np.int64)
        pos[0] = self.start
        if len(self.steps):
            np.cumsum(e[self.steps], axis=0, out=pos[1:])
            pos[1:] += np.asarray(self.start)
        return pos

    @property
    def end(self) -> tuple:
        if not len(self.steps):
            return tuple(self.start)
        return tuple(int(v) for v in np.asarray(self.start) + unit_vectors(self.d)[self.steps].sum(axis=0))


# -- buffered randomness ----------------------------------------------------------

class DirectionStream:
    """Endless supply of i.i.d. direction codes in ``{0, ..., 2d-1}``."""

    def __init__(self, rng, d: int, chunk: int = 1 << 16):
        self.rng = generator(rng)
        self.d = d
        self.chunk = int(chunk)
        self.buf = np.empty(0, dtype=np.uint8)
        self.k = 0

    def ensure(self):
        if self.k >= len(self.buf):
            self.buf = self.rng.integers(0, 2 * self.d, size=self.chunk, dtype=np.uint8)
            self.k = 0


class UniformStream:
    """Endless supply of uniforms in [0, 1)."""

    def __init__(self, rng, chunk: int = 1 << 15):
        self.rng = generator(rng)
        self.chunk = int(chunk)
        self.buf = np.empty(0)
        self.k = 0

    def ensure(self, need: int = 1):
        if self.k + need > len(self.buf):
            self.buf = self.rng.random(self.chunk)
            self.k = 0


# -- grids passed to kernels ---------------------------------------------------

@dataclass
class _Grid:
    """Flat view of a box-shaped array for the kernels (empty means "absent")."""

    flat: np.ndarray
    lo: np.ndarray
    dims: np.ndarray

    @classmethod
    def none(cls, d, dtype=np.uint8):
        return cls(np.zeros(0, dtype=dtype), np.zeros(d, np.int64), np.zeros(d, np.int64))

    @classmethod
    def of(cls, anchor, arr):
        arr = np.ascontiguousarray(arr)
        return cls(arr.reshape(-1), np.asarray(anchor, np.int64), np.asarray(arr.shape, np.int64))


def mark_grid(window: SiteSet) -> tuple[_Grid, np.ndarray]:
    """A writable uint8 visit-mark grid over ``window``'s frame."""
    arr = np.zeros(window.dims, dtype=np.uint8)
    return _Grid.of(window.anchor, arr), arr


@nb.njit(cache=True, inline="always")
def _flat_index(pos, lo, dims):
    idx = 0
    for i in range(pos.shape[0]):
        c = pos[i] - lo[i]
        if c < 0 or c >= dims[i]:
            return -1
        idx = idx * dims[i] + c
    return idx


@nb.njit(cache=True, inline="always")
def _sup_norm(pos):
    m = 0
    for i in range(pos.shape[0]):
        a = abs(pos[i])
        if a > m:
            m = a
    return m


@nb.njit(cache=True)
def _srw_kernel(pos, dirs, k, radius, tgt, tgt_lo, tgt_dims, mark, mark_lo, mark_dims,
                budget, taken, visit, visits):
    """Advance a simple walk in place.

    Returns ``(k, code, taken)``; ``visits[0]`` accumulates visits to ``visit``
    (pass an empty ``visit`` to disable).
    """
    d = pos.shape[0]
    n = dirs.shape[0]
    has_tgt = tgt.shape[0] > 0
    has_mark = mark.shape[0] > 0
    has_visit = visit.shape[0] > 0
    while True:
        # bookkeeping for the current position
        if has_mark:
            j = _flat_index(pos, mark_lo, mark_dims)
            if j >= 0:
                mark[j] = 1
        if has_visit:
            same = True
            for i in range(d):
                if pos[i] != visit[i]:
                    same = False
                    break
            if same:
                visits[0] += 1
        if radius >= 0 and _sup_norm(pos) >= radius:
            return k, 1, taken
        if has_tgt:
            j = _flat_index(pos, tgt_lo, tgt_dims)
            if j >= 0 and tgt[j]:
                return k, 2, taken
        if budget >= 0 and taken >= budget:
            return k, 3, taken
        if k >= n:
            return k, 0, taken
        c = dirs[k]
        k += 1
        ax = c >> 1
        if c & 1:
            pos[ax] -= 1
        else:
            pos[ax] += 1
        taken += 1


@nb.njit(cache=True)
def _weighted_kernel(pos, unif, k, w, w_lo, w_dims, radius, mark, mark_lo, mark_dims,
                     budget, taken, t_now, t_end, out_dirs, n_out):
    """Jump chain with ``P(x, y) ∝ w(y)`` (``w = 1`` off the grid).

    With ``t_end >= 0`` the chain runs in continuous time with jump rate
    ``(1/2d) Σ_y w(y)/w(x)`` and stops once the next jump would occur after
    ``t_end``.  Chosen directions are appended to ``out_dirs``.
    Returns ``(k, code, taken, t_now, n_out)``.
    """
    d = pos.shape[0]
    n = unif.shape[0]
    has_mark = mark.shape[0] > 0
    timed = t_end >= 0.0
    wts = np.empty(2 * d)
    nb_pos = pos.copy()
    while True:
        if has_mark:
            j = _flat_index(pos, mark_lo, mark_dims)
            if j >= 0:
                mark[j] = 1
        if radius >= 0 and _sup_norm(pos) >= radius:
            return k, 1, taken, t_now, n_out
        if budget >= 0 and taken >= budget:
            return k, 3, taken, t_now, n_out
        if k + 2 > n or n_out >= out_dirs.shape[0]:
            return k, 0, taken, t_now, n_out
        tot = 0.0
        for c in range(2 * d):
            for i in range(d):
                nb_pos[i] = pos[i]
            ax = c >> 1
            if c & 1:
                nb_pos[ax] -= 1
            else:
                nb_pos[ax] += 1
            j = _flat_index(nb_pos, w_lo, w_dims)
            wv = w[j] if j >= 0 else 1.0
            wts[c] = wv
            tot += wv
        if timed:
            j = _flat_index(pos, w_lo, w_dims)
            wx = w[j] if j >= 0 else 1.0
            rate = tot / (2.0 * d * wx)
            hold = -np.log(1.0 - unif[k]) / rate
            if t_now + hold > t_end:
                # the deterministic horizon falls inside this holding time;
                # consume the draw so the stream stays aligned
                return k + 1, 4, taken, t_now, n_out
            t_now += hold
        k_sel = k + 1 if timed else k
        r = unif[k_sel] * tot
        k = k_sel + 1
        c = 2 * d - 1
        acc = 0.0
        for cc in range(2 * d):
            acc += wts[cc]
            if r < acc:
                c = cc
                break
        ax = c >> 1
        if c & 1:
            pos[ax] -= 1
        else:
            pos[ax] += 1
        out_dirs[n_out] = c
        n_out += 1
        taken += 1


# -- drivers ----------------------------------------------------------------------

def _target_grid(target: Optional[SiteSet], d: int) -> _Grid:
    if target is None:
        return _Grid.none(d)
    return _Grid.of(target.anchor, target.bits.view(np.uint8))


def run_srw(stream: DirectionStream, start, radius: int = -1, target: Optional[SiteSet] = None,
            budget: int = -1, mark: Optional[_Grid] = None, keep: bool = True,
            visit=None) -> tuple[np.ndarray, Optional[np.ndarray], StopReason, int]:
    """Run a simple walk from ``start`` until the stop rule triggers.

    Returns ``(end, steps, reason, visits)`` where ``steps`` is ``None`` unless
    ``keep``.  ``visits`` counts visits to the site ``visit`` (0 if not given).
    """
    d = stream.d
    pos = np.array(start, dtype=np.int64)
    tg = _target_grid(target, d)
    mk = mark if mark is not None else _Grid.none(d)
    vis = np.zeros(0, np.int64) if visit is None else np.asarray(visit, np.int64)
    count = np.zeros(1, np.int64)
    pieces = []
    taken = 0
    while True:
        stream.ensure()
        k0 = stream.k
        k, code, taken = _srw_kernel(pos, stream.buf, k0, int(radius), tg.flat, tg.lo, tg.dims,
                                     mk.flat, mk.lo, mk.dims, int(budget), taken, vis, count)
        if keep and k > k0:
            pieces.append(stream.buf[k0:k])
        stream.k = k
        if code != _BUFFER:
            steps = (np.concatenate(pieces) if pieces else np.zeros(0, np.uint8)) if keep else None
            return pos, steps, _REASONS[code], int(count[0])


def run_weighted(ustream: UniformStream, start, weights: _Grid, radius: int = -1, budget: int = -1,
                 t_end: float = -1.0, mark: Optional[_Grid] = None, keep: bool = True):
    """Weighted jump chain (see :func:`_weighted_kernel`).

    Returns ``(end, steps, reason, t_last)`` where ``t_last`` is the time of the
    last jump (timed mode) or 0.
    """
    d = len(weights.lo)
    pos = np.array(start, dtype=np.int64)
    mk = mark if mark is not None else _Grid.none(d)
    # every jump consumes at least one uniform, so one chunk of output suffices per call
    out = np.empty(ustream.chunk, dtype=np.uint8)
    pieces = []
    taken, t_now = 0, 0.0
    while True:
        ustream.ensure(2)
        k, code, taken, t_now, n_out = _weighted_kernel(
            pos, ustream.buf, ustream.k, weights.flat, weights.lo, weights.dims, int(radius),
            mk.flat, mk.lo, mk.dims, int(budget), taken, t_now, float(t_end), out, 0)
        ustream.k = k
        if keep and n_out:
            pieces.append(out[:n_out].copy())
        if code != _BUFFER:
            steps = (np.concatenate(pieces) if pieces else np.zeros(0, np.uint8)) if keep else None
            return pos, steps, _REASONS[code], t_now


def sample_path(start: Sequence[int], stop: StopRule, seed) -> WalkPath:
    """Simple random walk from ``start`` stopped by ``stop``; deterministic in ``seed``."""
    start = tuple(int(v) for v in start)
    stream = DirectionStream(seed, len(start))
    _, steps, reason, _ = run_srw(
        stream, start,
        radius=-1 if stop.radius is None else stop.radius,
        target=stop.target,
        budget=-1 if stop.budget is None else stop.budget)
    return WalkPath(start, steps, reason)


# -- excursions -----------------------------------------------------------------

@nb.njit(cache=True)
def _count_excursions(inD, inU, count_partial):
    n = 0
    inside = False
    for t in range(inD.shape[0]):
        if not inside:
            if inD[t]:
                inside = True
        elif not inU[t]:
            n += 1
            inside = False
            if inD[t]:
                inside = True
    if inside and count_partial:
        n += 1
    return n


def excursion_count(paths, D: SiteSet, U: SiteSet, count_partial: bool = True) -> int:
    """Number of excursions from ``D`` to the exterior boundary of ``U``.

    An excursion starts at an entrance in ``D`` and ends at the first later
    visit outside ``U``.  ``paths`` is an iterable of :class:`WalkPath` (a
    trajectory soup's segments); a path ending inside ``U`` contributes its last
    partial excursion iff ``count_partial``.
    """
    if not D.issubset(U):
        raise ValueError("excursion count needs D ⊆ U")
    total = 0
    for p in paths:
        pos = p.positions()
        total += _count_excursions(_member(D, pos), _member(U, pos), bool(count_partial))
    return int(total)


def _member(S: SiteSet, pos: np.ndarray) -> np.ndarray:
    loc = pos - np.asarray(S.anchor)
    ok = np.all((loc >= 0) & (loc < np.asarray(S.dims)), axis=1)
    out = np.zeros(len(pos), dtype=np.bool_)
    out[ok] = S.bits[tuple(loc[ok].T)]
    return out
