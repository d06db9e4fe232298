"""Random interlacements, tilted interlacements and the simple-walk trace, seen in a window.

The window trace of the interlacement at level ``u`` is the union of the
forward paths of ``Poisson(u cap(K))`` walks started from the normalized
equilibrium measure of an entrance set ``K`` (the window, or a larger box).
The backward halves never enter ``K`` and are not simulated.

A forward path is simulated until it leaves ``B(0, R_stop)``; it then returns
to ``K`` with probability ``Σ_y g(x, y) e_K(y)`` (exact last-exit identity, with
the asymptotic Green function) and, if so, re-enters at ``y`` with probability
proportional to ``g(x, y) e_K(y)``.  The walk is thus never truncated; the only
approximation is the far-field form of the re-entrance law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba as nb
import numpy as np

from .lattice import SiteSet, box
from .potential import ScalarField, equilibrium, green_asymptotic, green_constant
from .rng import generator
from .walks import (DirectionStream, StopReason, UniformStream, WalkPath, _Grid, mark_grid, run_srw,
                    run_weighted)


@dataclass(frozen=True)
class RiSpec:
    """Interlacement at level ``u`` observed in ``window``.

    ``entrance`` defaults to the window; a larger box is needed for tilted
    samples so that the conductances are constant outside it.
    """

    u: float
    window: SiteSet
    stop_radius_factor: float = 4.0
    truncation_tol: float = 1e-3
    entrance: Optional[SiteSet] = None
    max_returns: int = 10000
    keep_paths: bool = True

    def __post_init__(self):
        if not self.u > 0:
            raise ValueError("interlacement level must be positive")
        if self.stop_radius_factor < 2:
            raise ValueError("stop radius must be at least twice the entrance radius")

    @property
    def K(self) -> SiteSet:
        return self.window if self.entrance is None else self.entrance

    @property
    def entrance_radius(self) -> int:
        K = self.K
        return max(max(abs(a), abs(a + n - 1)) for a, n in zip(K.anchor, K.dims))

    @property
    def stop_radius(self) -> int:
        return int(math.ceil(self.stop_radius_factor * self.entrance_radius))


class EntranceTable:
    """Equilibrium measure of an entrance set, with the re-entrance law."""

    def __init__(self, K: SiteSet):
        e_field, est = equilibrium(K)
        w = e_field.values[K.bits]
        sites = K.sites()
        keep = w > 1e-14
        self.K = K
        self.sites = sites[keep]
        self.weights = w[keep]
        self.capacity = float(est.value)
        self.estimate = est
        self.prob = self.weights / self.weights.sum()

    def return_law(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        """``P_x[H_K < ∞]`` and the (far-field) re-entrance distribution."""
        gx = green_asymptotic(self.sites - np.asarray(x)[None, :])
        m = gx * self.weights
        p = float(m.sum())
        return min(p, 1.0), m / m.sum()

    def draw_return(self, x: np.ndarray, u1: float, u2: float) -> int:
        """Index of the re-entrance site from ``x``, or ``-1`` for escape.

        ``u1`` decides return versus escape, ``u2`` selects the site.
        """
        return int(_draw_return(self.sites, self.weights, np.asarray(x, dtype=np.int64), u1, u2,
                                green_constant(self.K.d), self.K.d == 3))


@nb.njit(cache=True)
def _draw_return(sites, weights, x, u1, u2, c_d, aniso):
    n, d = sites.shape
    cum = np.empty(n)
    acc = 0.0
    for i in range(n):
        r2 = 0.0
        q = 0.0
        for k in range(d):
            z = float(sites[i, k] - x[k])
            r2 += z * z
            q += z * z * z * z
        r = np.sqrt(r2)
        g = c_d * r ** (2 - d)
        if aniso:
            g += 6.0 / (32.0 * np.pi * r ** 3) * (5.0 * q / (r2 * r2) - 3.0)
        acc += g * weights[i]
        cum[i] = acc
    if u1 >= min(acc, 1.0):
        return -1
    t = u2 * acc
    lo, hi = 0, n - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cum[mid] > t:
            hi = mid
        else:
            lo = mid + 1
    return lo


_TABLES: dict = {}


def entrance_table(K: SiteSet) -> EntranceTable:
    """Cached :class:`EntranceTable` (keyed by the set's content)."""
    key = (K.anchor, K.dims, K.bits.tobytes())
    if key not in _TABLES:
        if len(_TABLES) > 16:
            _TABLES.clear()
        _TABLES[key] = EntranceTable(K)
    return _TABLES[key]


@dataclass(eq=False)
class TrajectorySoup:
    """Window restriction of an interlacement realization.

    ``trajectories[i]`` lists the forward segments of trajectory ``i`` (one
    segment per visit to the entrance set).
    """

    u: float
    window: SiteSet
    entries: np.ndarray
    trajectories: list = field(repr=False)
    trace: SiteSet = field(repr=False)
    flagged: bool = False
    path_lengths: np.ndarray = field(default=None, repr=False)
    returns: int = 0

    @property
    def paths(self) -> list[WalkPath]:
        return [seg for traj in self.trajectories for seg in traj]

    @property
    def n_trajectories(self) -> int:
        return len(self.entries)

    def union(self, other: "TrajectorySoup") -> "TrajectorySoup":
        """Superposition of independent soups (levels add)."""
        if not self.window.same_frame(other.window):
            raise ValueError("soups observed in different windows")
        return TrajectorySoup(self.u + other.u, self.window, np.concatenate([self.entries, other.entries]),
                              self.trajectories + other.trajectories, self.trace | other.trace,
                              self.flagged or other.flagged,
                              np.concatenate([self.path_lengths, other.path_lengths]),
                              self.returns + other.returns)


def _run_trajectories(spec: RiSpec, rng, table: EntranceTable, entries: np.ndarray, step_fn):
    window = spec.window
    grid, marks = mark_grid(window)
    R = spec.stop_radius
    trajectories, lengths = [], []
    flagged = False
    n_returns = 0
    for x0 in entries:
        segs = []
        pos = x0
        total = 0
        for _ in range(spec.max_returns + 1):
            end, steps, reason, n = step_fn(pos, R, grid)
            total += n
            if spec.keep_paths:
                segs.append(WalkPath(tuple(int(v) for v in pos), steps, reason))
            if reason != StopReason.EXITED_RADIUS:
                flagged = True
                break
            j = table.draw_return(end, rng.random(), rng.random())
            if j < 0:
                break
            n_returns += 1
            pos = table.sites[j]
        else:
            flagged = True
        trajectories.append(segs)
        lengths.append(total)
    trace = window.with_bits(marks.astype(bool) & window.bits)
    return TrajectorySoup(spec.u, window, np.asarray(entries).reshape(-1, window.d), trajectories, trace,
                          flagged, np.asarray(lengths, dtype=np.int64), n_returns)


def _draw_entries(rng, table: EntranceTable, mean: float) -> np.ndarray:
    n = rng.poisson(mean)
    idx = rng.choice(len(table.prob), size=n, p=table.prob)
    return table.sites[idx]


def sample(spec: RiSpec, seed) -> TrajectorySoup:
    """Interlacement at level ``spec.u`` restricted to ``spec.window``."""
    rng = generator(seed)
    table = entrance_table(spec.K)
    entries = _draw_entries(rng, table, spec.u * table.capacity)
    stream = DirectionStream(rng, spec.window.d)

    def step(pos, R, grid):
        end, steps, reason, _ = run_srw(stream, pos, radius=R, mark=grid, keep=spec.keep_paths)
        return end, steps, reason, 0 if steps is None else len(steps)

    return _run_trajectories(spec, rng, table, entries, step)


def vacant(soup: TrajectorySoup) -> SiteSet:
    """Window sites not visited by any trajectory."""
    return soup.window - soup.trace


def srw_trace(N: int, truncation_tol: float = 1e-3, seed=0, d: int = 3,
              stop_radius_factor: float = 4.0, return_soup: bool = False):
    """Trace in ``B(0, N)`` of a simple random walk started at the origin.

    The walk is continued past ``B(0, R_stop)`` through the same re-entrance
    law as the interlacement sampler, so the trace is that of the full walk.
    """
    rng = generator(seed)
    window = box((0,) * d, N)
    spec = RiSpec(1.0, window, stop_radius_factor, truncation_tol)
    table = entrance_table(window)
    stream = DirectionStream(rng, d)

    def step(pos, R, grid):
        end, steps, reason, _ = run_srw(stream, pos, radius=R, mark=grid, keep=True)
        return end, steps, reason, len(steps)

    soup = _run_trajectories(spec, rng, table, np.zeros((1, d), dtype=np.int64), step)
    return soup if return_soup else soup.trace


# -- tilted interlacements -------------------------------------------------------------

def weight_grid(f: ScalarField) -> _Grid:
    vals = np.where(f.domain.bits, f.values, 1.0)
    return _Grid.of(f.domain.anchor, vals.astype(np.float64))


def _check_tilt(f: ScalarField, K: SiteSet):
    if np.any(f.values[f.domain.bits] < 1.0 - 1e-12):
        raise ValueError("tilt profile must be >= 1")
    # f must equal 1 on the exterior boundary layer of K and outside K's frame box
    Kp = K.padded(1)
    outer = Kp - K.like(Kp)
    fr = f.domain
    sites = outer.sites()
    loc = sites - np.asarray(fr.anchor)
    ok = np.all((loc >= 0) & (loc < np.asarray(fr.dims)), axis=1)
    vals = np.ones(len(sites))
    vals[ok] = np.where(fr.bits[tuple(loc[ok].T)], f.values[tuple(loc[ok].T)], 1.0)
    if np.any(np.abs(vals - 1.0) > 1e-12):
        raise ValueError("tilt profile must equal 1 outside the entrance set")
    outside = (f.values > 1.0 + 1e-12) & ~K.reframe(fr.anchor, fr.dims).bits if K.issubset(fr) else None
    if outside is not None and outside.any():
        raise ValueError("tilt profile exceeds 1 outside the entrance set")


def tilted_sample(spec: RiSpec, f: ScalarField, seed) -> TrajectorySoup:
    """Interlacement at level 1 on Z^d with conductances ``(u/2d) f(x) f(y)``.

    Requires ``f >= 1`` and ``f = 1`` on and outside the exterior boundary of
    the entrance set.  Then the weighted equilibrium measure of the entrance
    set is ``u e_K``, so the Poisson count and the entrance law coincide with
    the untilted ones; only the walk inside the entrance set changes, to the
    jump chain ``P(x, y) ∝ f(y)``.
    """
    _check_tilt(f, spec.K)
    rng = generator(seed)
    table = entrance_table(spec.K)
    entries = _draw_entries(rng, table, spec.u * table.capacity)
    ustream = UniformStream(rng)
    wg = weight_grid(f)

    def step(pos, R, grid):
        end, steps, reason, _ = run_weighted(ustream, pos, wg, radius=R, mark=grid, keep=spec.keep_paths)
        return end, steps, reason, 0 if steps is None else len(steps)

    return _run_trajectories(spec, rng, table, entries, step)


def weighted_kernel(f: ScalarField, x) -> dict:
    """Transition probabilities of the tilted jump chain out of ``x`` (for audits)."""
    x = np.asarray(x, dtype=np.int64)
    d = len(x)
    out = {}
    tot = 0.0
    for k in range(2 * d):
        y = x.copy()
        y[k // 2] += 1 if k % 2 == 0 else -1
        wy = f(tuple(y)) if tuple(y) in f.domain else 1.0
        out[tuple(int(v) for v in y)] = wy
        tot += wy
    return {y: w / tot for y, w in out.items()}


def occupation_density(u: float, g00: float) -> float:
    """``P[0 ∈ I^u] = 1 - exp(-u / g(0, 0))``."""
    return 1.0 - math.exp(-u / g00)
