"""Coarse graining of a configuration into a continuum interface and the
solidification experiment.

Pipeline: a per-box goodness labeling on ``L_0 Z^d`` is flood-filled into the
region ``U^1`` connected to ``B(0, 2N)^c``; its local density ``σ̂`` on scale
``L̂_0`` locates an interface ``Ŝ_N``; closed cubes around ``Ŝ_N / N`` cut
``R^d`` into an unbounded component ``U_1`` and its complement ``U_0``, and
``A_κ`` is the part of ``U_0`` at distance at least ``L̃_0/(4N)`` from ``U_1``.

Continuum sets are voxel shapes at resolution ``N`` (voxel ``v`` is the cube
``[v/N, (v+1)/N)^d``).  All geometric checks are inner approximations, so a
passing check certifies the continuum statement.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage, stats

from .continuum import ContinuumShape, voxelize
from .lattice import (BoundsError, Connectivity, SiteSet, boundary_cluster, box, clip, dilate,
                      filling, frame_box, label_components, seeded_component)
from .potential import capacity
from .rng import derive_seed, spawn
from .walks import DirectionStream, StopReason, excursion_count, run_srw

# -- scales ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScaleSet:
    """Scales ``L_0 < L̂_0 < L̃_0`` and the lattices ``L_0 Z^d``, ``spacing · Z^d``.

    ``delta_radius`` is the half-side (in lattice units) of the cubes placed
    around interface points; ``literal`` records whether the defaults from the
    asymptotic formulas were used.
    """

    N: int
    K: int
    gamma: float
    L0: int
    Lhat0: int
    Ltilde0: int
    spacing: int
    delta_radius: int
    d: int = 3
    literal: bool = True

    def box_B(self, z) -> SiteSet:
        """``B_z = z + [0, L_0)^d``."""
        return SiteSet(tuple(z), np.ones((self.L0,) * self.d, dtype=bool))

    def box_D(self, z) -> SiteSet:
        """``D_z = z + [-3L_0, 4L_0)^d``."""
        return SiteSet(tuple(c - 3 * self.L0 for c in z), np.ones((7 * self.L0,) * self.d, dtype=bool))

    def box_U(self, z) -> SiteSet:
        """``U_z = z + [-K L_0 + 1, K L_0 - 1)^d``."""
        KL = self.K * self.L0
        return SiteSet(tuple(c - KL + 1 for c in z), np.ones((2 * KL - 2,) * self.d, dtype=bool))

    def box_grid(self, R: int) -> tuple[np.ndarray, tuple]:
        """Lowest box index and grid shape for the boxes ``B_z`` meeting ``B(0, R)``."""
        lo = -((R + self.L0 - 1) // self.L0)
        hi = R // self.L0
        return np.full(self.d, lo, dtype=np.int64), (hi - lo + 1,) * self.d

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in ("N", "K", "gamma", "L0", "Lhat0", "Ltilde0", "spacing",
                                              "delta_radius", "d", "literal")}


def make_scales(N: int, K: int = 100, gamma: float = 1.0, Ltilde0: Optional[int] = None, d: int = 3,
                L0: Optional[int] = None, Lhat0: Optional[int] = None, spacing: Optional[int] = None,
                delta_radius: Optional[int] = None) -> ScaleSet:
    """Build the scales.

    Defaults are ``L_0 = [(N log N / γ)^{1/(d-1)}]``, spacing ``[√γ N]``,
    ``L̂_0 = 100 d · spacing`` and cube half-side ``L̂_0 / (50 d)``.  Passing
    ``L0``/``Lhat0``/``spacing`` overrides them (desk scales cannot reach the
    asymptotic hierarchy); only ``L_0 < L̂_0 < L̃_0`` is enforced then.
    ``Ltilde0`` defaults to ``2 (L̂_0 + L_0 + 1)``, the smallest value for which
    the insulation argument closes.
    """
    if K < 100:
        raise ValueError("K must be at least 100")
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    if N < 2:
        raise ValueError("N must be at least 2")
    literal = L0 is None and Lhat0 is None and spacing is None
    if spacing is None:
        spacing = int(math.floor(math.sqrt(gamma) * N))
    if spacing < 1:
        raise ValueError("interface lattice spacing [sqrt(gamma) N] vanishes")
    if L0 is None:
        L0 = int(math.floor((N * math.log(N) / gamma) ** (1.0 / (d - 1))))
    if Lhat0 is None:
        Lhat0 = 100 * d * spacing
    if delta_radius is None:
        delta_radius = Lhat0 // (50 * d) if literal else 2 * spacing
    if Ltilde0 is None:
        Ltilde0 = 2 * (Lhat0 + L0 + 1)
    if L0 < 1 or delta_radius < 1:
        raise ValueError("L0 and the cube half-side must be positive")
    if not L0 < Lhat0:
        raise ValueError("need L0 < Lhat0")
    if Ltilde0 <= Lhat0:
        raise ValueError("Ltilde0 <= Lhat0 violates the thickening regime")
    return ScaleSet(int(N), int(K), float(gamma), int(L0), int(Lhat0), int(Ltilde0), int(spacing),
                    int(delta_radius), d, literal)


# -- box labelings -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoxLabels:
    """Goodness of the boxes ``B_z``, ``z = L_0 (k_lo + index)``."""

    k_lo: tuple
    good: np.ndarray = field(repr=False)
    L0: int

    @property
    def d(self) -> int:
        return self.good.ndim

    def origins(self) -> np.ndarray:
        idx = np.indices(self.good.shape).reshape(self.d, -1).T
        return (idx + np.asarray(self.k_lo)) * self.L0

    def __and__(self, other: "BoxLabels") -> "BoxLabels":
        if self.k_lo != other.k_lo or self.good.shape != other.good.shape or self.L0 != other.L0:
            raise ValueError("labelings on different box grids")
        return BoxLabels(self.k_lo, self.good & other.good, self.L0)

    def to_sites(self, bits: Optional[np.ndarray] = None) -> SiteSet:
        """Union of the boxes selected by ``bits`` (default: the good ones)."""
        b = self.good if bits is None else bits
        for ax in range(self.d):
            b = np.repeat(b, self.L0, axis=ax)
        return SiteSet(tuple(int(k) * self.L0 for k in self.k_lo), b)


def _block_any(S: SiteSet, k_lo, shape, L0) -> np.ndarray:
    """``out[k] = (B_{L_0 (k_lo + k)} ∩ S ≠ ∅)``."""
    anchor = tuple(int(k) * L0 for k in k_lo)
    dims = tuple(n * L0 for n in shape)
    bits = clip(S, SiteSet.empty(anchor, dims)).bits
    d = len(shape)
    r = bits.reshape(sum(((n, L0) for n in shape), ()))
    return r.any(axis=tuple(range(1, 2 * d, 2)))


def certified_labels(C: SiteSet, N: int, scales: ScaleSet, R: int) -> BoxLabels:
    """Box good iff it meets ``K = C ∪ B(0, N)^c`` (``C`` the boundary cluster).

    With this predicate every good box inside ``B(0, N)`` carries a site of the
    boundary cluster, which makes the hole-side implications deterministic.
    """
    k_lo, shape = scales.box_grid(R)
    hit = _block_any(C, k_lo, shape, scales.L0)
    lo = (np.indices(shape) + k_lo.reshape((-1,) + (1,) * scales.d)) * scales.L0
    contained = np.all((lo >= -N) & (lo + scales.L0 - 1 <= N), axis=0)
    return BoxLabels(tuple(int(k) for k in k_lo), hit | ~contained, scales.L0)


def excursion_labels(paths, scales: ScaleSet, beta: float, R: int) -> BoxLabels:
    """Box good iff ``N_u(D_z) < β cap(D_z)`` (excursions from ``D_z`` to ``∂U_z``).

    ``paths`` are the trajectory segments of a soup; excursions cut by the
    simulated range count as partial ones.
    """
    paths = list(paths)
    k_lo, shape = scales.box_grid(R)
    capD = capacity(scales.box_D((0,) * scales.d)).value
    good = np.zeros(shape, dtype=bool)
    pos = [p.positions() for p in paths]
    for idx in np.ndindex(*shape):
        z = tuple(int(k + i) * scales.L0 for k, i in zip(k_lo, idx))
        D, U = scales.box_D(z), scales.box_U(z)
        near = [WalkSegment(q) for q in pos if _touches(q, D)]
        good[idx] = excursion_count(near, D.like(U), U) < beta * capD
    return BoxLabels(tuple(int(k) for k in k_lo), good, scales.L0)


class WalkSegment:
    """Minimal path wrapper exposing ``positions()`` for the excursion counter."""

    def __init__(self, pos: np.ndarray):
        self._pos = pos

    def positions(self) -> np.ndarray:
        return self._pos


def _touches(pos: np.ndarray, S: SiteSet) -> bool:
    lo = np.asarray(S.anchor)
    return bool(np.any(np.all((pos >= lo) & (pos < lo + np.asarray(S.dims)), axis=1)))


def h_good_labels(sample, scales: ScaleSet, a: float, R: int) -> BoxLabels:
    """GFF box good iff ``inf_{D_z} h > -a``, ``h`` harmonic in ``U_z`` and equal to
    the field outside (``U_z`` clipped to the sampled box).
    """
    from .gff import markov_decompose

    k_lo, shape = scales.box_grid(R)
    fr = sample.values.domain
    inner = fr.with_bits(np.zeros(fr.dims, dtype=bool))
    inner.bits[(slice(1, -1),) * fr.d] = True
    good = np.zeros(shape, dtype=bool)
    for idx in np.ndindex(*shape):
        z = tuple(int(k + i) * scales.L0 for k, i in zip(k_lo, idx))
        U = clip(scales.box_U(z), fr) & inner
        h, _ = markov_decompose(sample, U)
        D = clip(scales.box_D(z), fr)
        good[idx] = bool(D.count) and h.values[D.bits].min() > -a
    return BoxLabels(tuple(int(k) for k in k_lo), good, scales.L0)


# -- U^1 and the density profile --------------------------------------------------------


def u1_region(labels: BoxLabels, N: int, scales: ScaleSet) -> SiteSet:
    """Boxes linked to ``B(0, 2N)^c`` through good boxes (all but possibly the last).

    Flood fill on the nearest-neighbor box graph seeded by the boxes contained
    in ``B(0, 2N)^c``.  Sites beyond the labeled range belong to ``U^1``.
    """
    d = labels.d
    k = np.indices(labels.good.shape) + np.asarray(labels.k_lo).reshape((-1,) + (1,) * d)
    lo, hi = k * labels.L0, k * labels.L0 + labels.L0 - 1
    outside = np.any((lo > 2 * N) | (hi < -2 * N), axis=0)
    grid = SiteSet(tuple(labels.k_lo), labels.good & ~outside)
    seeds = SiteSet(tuple(labels.k_lo), outside)
    if not seeds:
        raise ValueError("labels must reach beyond B(0, 2N)")
    reach = seeded_component(grid, seeds)
    return labels.to_sites(reach.bits)


def _window_sum(a: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """``out[i] = Σ_{j ∈ i + [lo, hi]^d} a[j]`` with zero padding, same shape."""
    out = a.astype(np.int64)
    for ax in range(a.ndim):
        n = out.shape[ax]
        pad = [(0, 0)] * a.ndim
        pad[ax] = (max(0, -lo) + 1, max(0, hi))
        c = np.cumsum(np.pad(out, pad), axis=ax)
        off = max(0, -lo) + 1
        top = np.take(c, np.arange(n) + hi + off, axis=ax)
        bot = np.take(c, np.arange(n) + lo + off - 1, axis=ax)
        out = top - bot
    return out


@dataclass(frozen=True, eq=False)
class DensityField:
    """``σ̂ = counts / denom`` on the frame ``anchor + [0, dims)``."""

    anchor: tuple
    counts: np.ndarray = field(repr=False)
    denom: int
    Lhat0: int

    @property
    def d(self) -> int:
        return self.counts.ndim

    def sigma(self) -> np.ndarray:
        return self.counts / self.denom

    def at(self, x) -> float:
        loc = tuple(int(a) - b for a, b in zip(x, self.anchor))
        if any(i < 0 or i >= n for i, n in zip(loc, self.counts.shape)):
            raise BoundsError(f"{tuple(x)} outside the evaluated region")
        return self.counts[loc] / self.denom

    def coordinates(self) -> list[np.ndarray]:
        return [np.arange(n).reshape([-1 if k == ax else 1 for k in range(self.d)]) + a
                for ax, (a, n) in enumerate(zip(self.anchor, self.counts.shape))]


def density_field(U1: SiteSet, Lhat0: int) -> DensityField:
    """``σ̂(x) = |U^1 ∩ B(x, L̂_0)| / |B(x, L̂_0)|`` wherever the ball fits in the frame."""
    if min(U1.dims) <= 2 * Lhat0:
        raise BoundsError("frame too small for the density ball")
    full = _window_sum(U1.bits, -Lhat0, Lhat0)
    sl = (slice(Lhat0, -Lhat0),) * U1.d
    return DensityField(tuple(a + Lhat0 for a in U1.anchor), full[sl], (2 * Lhat0 + 1) ** U1.d, Lhat0)


def density_profile(U1: SiteSet, x, Lhat0: int) -> float:
    """``σ̂(x)`` for a single site; the ball ``B(x, L̂_0)`` must lie in the frame."""
    ball = box(x, Lhat0)
    if any(a < b or a + n > b + m for a, n, b, m in zip(ball.anchor, ball.dims, U1.anchor, U1.dims)):
        raise BoundsError("density ball escapes the computed region")
    return clip(U1, ball).count / ball.count


def lipschitz_violations(prof: DensityField) -> int:
    """Unit-step pairs with ``|σ̂(x+e) - σ̂(x)| > 1/L̂_0`` (integer arithmetic)."""
    bad = 0
    for ax in range(prof.d):
        diff = np.abs(np.diff(prof.counts, axis=ax))
        bad += int(np.count_nonzero(diff * prof.Lhat0 > prof.denom))
    return bad


def outer_violations(prof: DensityField, N: int, L0: int) -> int:
    """Sites with ``B(x, L̂_0 + L_0) ⊆ B(0, 2N)^c`` but ``σ̂(x) < 1``."""
    r = 2 * N + prof.Lhat0 + L0
    q = np.zeros(prof.counts.shape, dtype=bool)
    for c in prof.coordinates():
        q = q | (np.abs(c) > r)
    return int(np.count_nonzero(q & (prof.counts != prof.denom)))


def hole_zero_violations(prof: DensityField, W: SiteSet, r: int) -> int:
    """Sites within distance ``r`` of ``W`` where ``σ̂ > 0``."""
    if not W:
        return 0
    nb = dilate(W.padded(r), r)
    fr = SiteSet.empty(prof.anchor, prof.counts.shape)
    nb_on = clip(nb, fr)
    if nb_on.count != nb.count:
        raise BoundsError("hole neighborhood leaves the evaluated region")
    return int(np.count_nonzero(nb_on.bits & (prof.counts > 0)))


# -- interface and segmentation ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Segmentation:
    """Interface points, spaced subset, box collections and the continuum sets.

    ``U0``, ``A`` and ``Sigma`` are voxel shapes at resolution ``N``; ``U1``
    and ``Delta`` are voxel sets on a common frame whose outside belongs to
    ``U_1``.
    """

    scales: ScaleSet
    S_hat: np.ndarray = field(repr=False)
    S_tilde: np.ndarray = field(repr=False)
    collections: dict = field(repr=False)
    C: SiteSet = field(repr=False)
    Sigma: ContinuumShape = field(repr=False)
    U0: ContinuumShape = field(repr=False)
    U1: SiteSet = field(repr=False)
    Delta: SiteSet = field(repr=False)
    A: ContinuumShape = field(repr=False)
    flags: tuple = ()

    def to_json(self) -> dict:
        return {"scales": self.scales.to_json(), "S_hat": self.S_hat.tolist(),
                "S_tilde": self.S_tilde.tolist(), "flags": list(self.flags),
                "volumes": {"U0": self.U0.volume, "A": self.A.volume, "Sigma": self.Sigma.volume}}


def greedy_spaced(points: np.ndarray, gap: int) -> np.ndarray:
    """Maximal subset with pairwise sup-distance ``> gap``, greedy in lexicographic order."""
    if not len(points):
        return points.reshape(0, points.shape[1] if points.ndim == 2 else 0)
    order = np.lexsort(points.T[::-1])
    kept = np.empty((0, points.shape[1]), dtype=np.int64)
    for p in points[order]:
        if not len(kept) or np.abs(kept - p).max(axis=1).min() > gap:
            kept = np.vstack([kept, p])
    return kept


def interface_points(prof: DensityField, spacing: int) -> np.ndarray:
    """``Ŝ_N``: points of ``spacing · Z^d`` with ``1/4 ≤ σ̂ ≤ 3/4``."""
    band = (4 * prof.counts >= prof.denom) & (4 * prof.counts <= 3 * prof.denom)
    for c in prof.coordinates():
        band = band & (c % spacing == 0)
    return np.argwhere(band) + np.asarray(prof.anchor)


def interface_and_segmentation(U1: SiteSet, scales: ScaleSet, selected: Optional[BoxLabels] = None,
                               hole: Optional[SiteSet] = None,
                               prof: Optional[DensityField] = None) -> Segmentation:
    """Interface ``Ŝ_N``, spaced subset ``S̃_N`` and the sets ``Σ, U_0, U_1, A_κ``.

    ``selected`` marks the boxes eligible for the collections ``C̃_x`` (boxes
    meeting ``B(x, L̂_0)``); by default the boxes lying in ``U^1``.
    """
    N, d = scales.N, scales.d
    Lh, r = scales.Lhat0, scales.delta_radius
    if prof is None:
        prof = density_field(U1, Lh)
    flags = []
    S_hat = interface_points(prof, scales.spacing)
    S_tilde = greedy_spaced(S_hat, 4 * Lh)

    # box collections and Σ
    if selected is None:
        k_lo, shape = scales.box_grid(max(abs(a) for a in U1.anchor))
        selected = BoxLabels(tuple(int(k) for k in k_lo), _block_all(U1, k_lo, shape, scales.L0),
                             scales.L0)
    collections = {}
    L0, klo = selected.L0, np.asarray(selected.k_lo)
    for x in S_tilde:
        # boxes B_z meeting B(x, L̂_0), as a slice of the box grid
        a = np.maximum(-((-(x - Lh - L0 + 1)) // L0) - klo, 0)
        b = np.minimum((x + Lh) // L0 - klo + 1, selected.good.shape)
        sub = selected.good[tuple(slice(i, j) for i, j in zip(a, b))]
        collections[tuple(int(v) for v in x)] = (np.argwhere(sub) + a + klo) * L0
    chosen = np.vstack(list(collections.values())) if collections else np.empty((0, d), np.int64)
    if len(chosen):
        lo = chosen.min(axis=0)
        dims = chosen.max(axis=0) - lo + scales.L0
        cbits = np.zeros(tuple(dims), dtype=bool)
        for z in chosen:
            cbits[tuple(slice(a - b, a - b + scales.L0) for a, b in zip(z, lo))] = True
        C = SiteSet(tuple(int(v) for v in lo), cbits)
    else:
        C = SiteSet.empty((0,) * d, (1,) * d)
    Sigma = ContinuumShape(N, C, None, "Sigma")

    # Δ_N voxels: closed cube [x - r, x + r]/N covers voxels x + [-r, r-1]
    ext = int(np.abs(S_hat).max()) if len(S_hat) else 0
    R = ext + r + 2
    vf = frame_box(R, d)
    pts = np.zeros(vf.dims, dtype=bool)
    if len(S_hat):
        pts[tuple((S_hat - np.asarray(vf.anchor)).T)] = True
    delta = _window_sum(pts, -r + 1, r) > 0
    Delta = vf.with_bits(delta)
    lab = label_components(vf.with_bits(~delta), Connectivity.NEAREST)
    edge = np.zeros(vf.dims, dtype=bool)
    for ax in range(d):
        sl = [slice(None)] * d
        sl[ax] = 0
        edge[tuple(sl)] = True
        sl[ax] = -1
        edge[tuple(sl)] = True
    ext_labels = np.unique(lab.labels[edge])
    u1 = np.isin(lab.labels, ext_labels[ext_labels > 0])
    U1v = vf.with_bits(u1)
    U0 = ContinuumShape(N, vf.with_bits(~u1), None, "U0")
    # chessboard voxel distance k to U_1: points of the voxel are at distance >= (k-1)/N
    k = ndimage.distance_transform_cdt(~u1, metric="chessboard")
    A = ContinuumShape(N, vf.with_bits(~u1 & (4 * (k - 1) >= scales.Ltilde0)), None, "A_kappa")
    if not len(S_hat) and hole is not None and hole.count:
        flags.append("empty interface with nonempty hole")
    return Segmentation(scales, S_hat, S_tilde, collections, C, Sigma, U0, U1v, Delta, A, tuple(flags))


def _block_all(S: SiteSet, k_lo, shape, L0) -> np.ndarray:
    anchor = tuple(int(k) * L0 for k in k_lo)
    dims = tuple(n * L0 for n in shape)
    bits = clip(S, SiteSet.empty(anchor, dims)).bits
    d = len(shape)
    return bits.reshape(sum(((n, L0) for n in shape), ())).all(axis=tuple(range(1, 2 * d, 2)))


def insulation_check(seg: Segmentation, W: SiteSet, N: int, Ltilde0: int) -> bool:
    """Whether the closed ``L̃_0/(2N)``-neighborhood of ``W/N`` lies in bounded
    components of ``R^d \\ Δ_N``.

    The neighborhood is a union of closed cubes of half-side ``t = L̃_0/2``
    around the sites of ``W``.  Each cube avoids ``Δ_N`` iff its center is at
    sup-distance ``> t + r`` from ``Ŝ_N``; a cube avoiding ``Δ_N`` lies in the
    component of the voxel at its center, which must not be ``U_1``.
    """
    if W is None or not W:
        return True
    S = seg.S_hat
    if not len(S):
        return False
    t2 = Ltilde0  # compare 2 * distance with 2t + 2r to stay in integers
    sites = W.sites()
    lo = np.minimum(sites.min(axis=0), S.min(axis=0)) - 1
    hi = np.maximum(sites.max(axis=0), S.max(axis=0)) + 1
    grid = np.ones(tuple(hi - lo + 1), dtype=bool)
    grid[tuple((S - lo).T)] = False
    dist = ndimage.distance_transform_cdt(grid, metric="chessboard")
    if np.any(2 * dist[tuple((sites - lo).T)] <= t2 + 2 * seg.scales.delta_radius):
        return False
    loc = sites - np.asarray(seg.U1.anchor)
    ok = np.all((loc >= 0) & (loc < np.asarray(seg.U1.dims)), axis=1)
    if not ok.all():
        return False
    return not bool(seg.U1.bits[tuple(loc.T)].any())


# -- hole-event pipeline ------------------------------------------------------------------


@dataclass
class PipelineReport:
    """Per-configuration results of the coarse-graining checks."""

    hole_size: int
    hole_event: bool
    lipschitz_violations: int
    outer_violations: int
    zero_violations: Optional[int]
    interface_outside_3N: int
    insulated: Optional[bool]
    F_in_interior: Optional[bool] = None
    volume_F: Optional[float] = None
    volume_A: Optional[float] = None
    nu: float = 0.0
    delta_F: Optional[float] = None
    chain_35: Optional[bool] = None
    chain_37: Optional[bool] = None
    chain_rhs: Optional[float] = None
    discretization: Optional[float] = None
    flags: tuple = ()

    @property
    def determinism_ok(self) -> bool:
        ok = self.lipschitz_violations == 0 and self.outer_violations == 0 and self.interface_outside_3N == 0
        if self.hole_event:
            ok = ok and self.zero_violations == 0 and bool(self.insulated)
        return ok

    @property
    def shape_ok(self) -> Optional[bool]:
        if not self.hole_event:
            return None
        return bool(self.F_in_interior and self.nu <= self.volume_F <= self.volume_A
                    and self.chain_35 and self.chain_37)


def hole_set(medium: SiteSet, N: int, Ltilde0: int) -> tuple[SiteSet, SiteSet]:
    """Boundary cluster ``C_N`` and the hole ``W̃ = B(0,N) \\ (L̃_0-neighborhood of C_N)``."""
    C = boundary_cluster(medium, N)
    Ct = dilate(C.padded(Ltilde0), Ltilde0)
    ball = box((0,) * medium.d, N)
    Wt = ball - clip(Ct, ball)
    return C, Wt


def _integer_delta(E: ContinuumShape, F: ContinuumShape) -> float:
    from .shapes import best_translate
    return best_translate(E, F, refine=False).integer_value


def run_pipeline(medium: SiteSet, N: int, scales: ScaleSet, nu: float,
                 labels: Optional[Callable[[SiteSet, int, ScaleSet, int], BoxLabels]] = None) -> PipelineReport:
    """All deterministic checks for one configuration of the medium in ``B(0, N)``.

    ``labels(C, N, scales, R)`` supplies the box goodness; it defaults to
    :func:`certified_labels`.
    """
    from .shapes import ball_from_volume, CoarseResolutionWarning

    d = medium.d
    C, Wt = hole_set(medium, N, scales.Ltilde0)
    hole_event = Wt.count >= nu * N ** d
    Rs = 3 * N + scales.Lhat0
    Ru = Rs + scales.Lhat0
    lab = (labels or certified_labels)(C, N, scales, Ru)
    U1 = clip(u1_region(lab, N, scales), frame_box(Ru, d))
    prof = density_field(U1, scales.Lhat0)
    seg = interface_and_segmentation(U1, scales, hole=Wt if hole_event else None, prof=prof)
    outside = int(np.count_nonzero(np.abs(seg.S_hat).max(axis=1) > 3 * N)) if len(seg.S_hat) else 0
    rep = PipelineReport(Wt.count, bool(hole_event), lipschitz_violations(prof),
                         outer_violations(prof, N, scales.L0), None, outside, None, nu=nu,
                         flags=seg.flags)
    if not hole_event:
        return rep
    rep.zero_violations = hole_zero_violations(prof, Wt, scales.Ltilde0 - scales.Lhat0 - scales.L0)
    rep.insulated = insulation_check(seg, Wt, N, scales.Ltilde0)

    F = filling(Wt, N)
    A = seg.A
    rep.F_in_interior = F.in_interior_of(A)
    rep.volume_F, rep.volume_A = F.volume, A.volume
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoarseResolutionWarning)
        B_nu = ball_from_volume(nu, N, d)
        B_A = ball_from_volume(A.volume, N, d)
    dF = _integer_delta(F, B_nu)
    dA = _integer_delta(A, B_nu)
    dAA = _integer_delta(A, B_A)
    lam = dAA / A.volume
    rep.delta_F = dF
    # triangle inequality with F ⊆ A, then the nested concentric balls
    rep.chain_35 = dF <= (A.volume - F.volume) + dA + 1e-12
    balls = B_A.symdiff_volume(B_nu)
    rep.discretization = max(0.0, balls - (A.volume - nu))
    rep.chain_rhs = 2 * (A.volume - nu) + A.volume * lam
    rep.chain_37 = bool(dA <= dAA + balls + 1e-12 and dF <= rep.chain_rhs + rep.discretization + 1e-12)
    return rep


# -- continuum densities ------------------------------------------------------------------


def _cube_overlap(shape: ContinuumShape, x, rho: float) -> float:
    """``|B_∞(x, ρ) ∩ shape|`` from per-axis interval overlaps (exact for voxels)."""
    n = shape.resolution
    V = shape.voxels
    weights = []
    sl = []
    for ax in range(shape.d):
        a, b = x[ax] - rho, x[ax] + rho
        v0 = max(int(math.floor(a * n)), V.anchor[ax])
        v1 = min(int(math.floor(b * n)), V.anchor[ax] + V.dims[ax] - 1)
        if v1 < v0:
            return 0.0
        v = np.arange(v0, v1 + 1)
        w = np.clip(np.minimum((v + 1) / n, b) - np.maximum(v / n, a), 0.0, None)
        weights.append(w)
        sl.append(slice(v0 - V.anchor[ax], v1 + 1 - V.anchor[ax]))
    sub = V.bits[tuple(sl)].astype(np.float64)
    for ax, w in enumerate(weights):
        sub = np.tensordot(sub, w, axes=([0], [0]))
    return float(sub)


def dyadic_density(U0: ContinuumShape, x, ell: int) -> float:
    """``|B_∞(x, 2^{-ℓ}) ∩ U_1| / |B_∞(x, 2^{-ℓ})|`` with ``U_1`` the complement of ``U0``."""
    rho = 2.0 ** (-ell)
    if rho * U0.resolution < 1:
        raise ValueError(f"resolution 1/{U0.resolution} is coarser than 2^-{ell}")
    x = np.asarray(x, dtype=float)
    return 1.0 - _cube_overlap(U0, x, rho) / (2 * rho) ** U0.d


@dataclass(frozen=True)
class ClassReport:
    ok: bool
    witness: Optional[tuple]
    ell_range: tuple
    points: int


def class_membership(U0: ContinuumShape, A: ContinuumShape, ell_star: int) -> ClassReport:
    """Check ``σ̂_ℓ(x) ≤ 1/2`` for ``x ∈ A`` and ``ℓ* ≤ ℓ ≤ ℓ_max``.

    ``ℓ_max`` is the finest level resolved by ``U0``'s voxels; ``x`` runs over
    the corners and centers of ``A``'s voxels.  The witness is the worst
    ``(x, ℓ, σ̂)``.
    """
    ell_max = int(math.floor(math.log2(U0.resolution)))
    if ell_star > ell_max:
        raise ValueError(f"levels beyond {ell_max} are not resolved at resolution {U0.resolution}")
    vox = A.voxels.sites()
    corners = np.unique((vox[:, None, :] + np.array(list(itertools.product((0, 1), repeat=A.d)))[None])
                        .reshape(-1, A.d), axis=0) / A.resolution
    pts = np.vstack([corners, (vox + 0.5) / A.resolution])
    worst = None
    for ell in range(ell_star, ell_max + 1):
        for x in pts:
            s = dyadic_density(U0, x, ell)
            if worst is None or s > worst[2]:
                worst = (tuple(float(v) for v in x), ell, s)
    ok = worst is None or worst[2] <= 0.5 + 1e-12
    return ClassReport(bool(ok), worst, (ell_star, ell_max), len(pts))


# -- porous interfaces ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PorousReport:
    decision: Optional[bool]
    points: np.ndarray = field(repr=False)
    estimate: np.ndarray = field(repr=False)
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)

    @property
    def status(self) -> str:
        return {True: "pass", False: "fail", None: "undecided"}[self.decision]

    @property
    def min_estimate(self) -> float:
        return float(self.estimate.min()) if len(self.estimate) else float("nan")


def boundary_mesh(U0: ContinuumShape, max_points: Optional[int] = None) -> np.ndarray:
    """Centers of the exposed voxel faces of ``U0`` (points of ``∂U_0``)."""
    V = U0.voxels.padded(1)
    pts = []
    for ax in range(U0.d):
        for s in (1, -1):
            exposed = V.bits & ~np.roll(V.bits, -s, axis=ax)
            loc = np.argwhere(exposed).astype(np.float64) + np.asarray(V.anchor) + 0.5
            loc[:, ax] += 0.5 * s
            pts.append(loc)
    pts = np.vstack(pts) / U0.resolution
    if max_points is not None and len(pts) > max_points:
        pts = pts[np.linspace(0, len(pts) - 1, max_points).round().astype(int)]
    return pts


def _fine_target(Sigma: ContinuumShape, refine: int, center: np.ndarray, E: int) -> SiteSet:
    """Fine-lattice sites of ``B(center, E)`` whose point lies in ``Σ``."""
    fr = box(tuple(int(c) for c in center), E)
    vox = np.floor_divide(fr.sites(), refine)
    member = Sigma.contains_points((vox + 0.5) / Sigma.resolution)
    return fr.with_bits(member.reshape(fr.dims))


def hit_probability(Sigma: ContinuumShape, z, eps: float, refine: int = 4, walkers: int = 400,
                    seed=0) -> tuple[int, int]:
    """Walks on the lattice ``Z^d / (refine · res)`` from ``z``: number entering ``Σ``
    strictly before the sup-displacement reaches ``ε``, out of ``walkers``.
    """
    m = Sigma.resolution * refine
    E = int(round(eps * m))
    if E < 4:
        raise ValueError("walk step must be much smaller than eps; increase refine")
    start = np.rint(np.asarray(z, dtype=float) * m).astype(np.int64)
    tgt = _fine_target(Sigma, refine, start, E).shifted(tuple(-int(v) for v in start))
    stream = DirectionStream(seed, Sigma.d)
    hits = 0
    for _ in range(walkers):
        _, _, reason, _ = run_srw(stream, (0,) * Sigma.d, radius=E, target=tgt, keep=False)
        hits += reason is StopReason.HIT_TARGET
    return hits, walkers


def absorbing_solve(Sigma: ContinuumShape, z, eps: float, refine: int = 4) -> float:
    """Hitting probability of :func:`hit_probability` from the discrete Dirichlet problem."""
    from .potential import ScalarField, dirichlet_solve

    m = Sigma.resolution * refine
    E = int(round(eps * m))
    start = np.rint(np.asarray(z, dtype=float) * m).astype(np.int64)
    tgt = _fine_target(Sigma, refine, start, E)
    if tuple(int(v) for v in start) in tgt:
        return 1.0
    fr = tgt.padded(1)
    inner = box(tuple(int(c) for c in start), E - 1, frame=fr) - tgt.like(fr)
    # 1 on Σ, 0 on the sup-sphere of radius E
    bnd = ScalarField(fr.with_bits(np.ones(fr.dims, dtype=bool)), tgt.like(fr).bits.astype(np.float64))
    u = dirichlet_solve(inner, bnd, tol=1e-10)
    return float(u(tuple(int(v) for v in start)))


def porous_membership(Sigma: ContinuumShape, U0: ContinuumShape, eps: float, eta: float,
                      walkers: int = 400, refine: int = 4, mesh: Optional[int] = 64, seed=0,
                      confidence: float = 0.999) -> PorousReport:
    """Test ``P_z[walk enters Σ before moving ε] ≥ η`` on a mesh of ``∂U_0``.

    Clopper-Pearson intervals at level ``confidence`` per point: pass iff every
    lower bound is at least ``η``, fail iff some upper bound is below ``η``,
    undecided otherwise.
    """
    if eps <= 0 or not 0 < eta < 1:
        raise ValueError("need eps > 0 and 0 < eta < 1")
    pts = boundary_mesh(U0, mesh)
    if refine % 2:
        raise ValueError("refine must be even so face centers are fine-lattice points")
    if Sigma.resolution != U0.resolution:
        raise ValueError("Sigma and U0 at different resolutions")
    ss = spawn(seed, len(pts))
    k = np.zeros(len(pts), dtype=np.int64)
    if Sigma:
        for i, z in enumerate(pts):
            k[i], _ = hit_probability(Sigma, z, eps, refine, walkers, ss[i])
    alpha = 1 - confidence
    lo = np.where(k > 0, stats.beta.ppf(alpha / 2, k, walkers - k + 1), 0.0)
    hi = np.where(k < walkers, stats.beta.ppf(1 - alpha / 2, k + 1, walkers - k), 1.0)
    if np.all(lo >= eta):
        dec = True
    elif np.any(hi < eta):
        dec = False
    else:
        dec = None
    return PorousReport(dec, pts, k / walkers, lo, hi)


# -- solidification -------------------------------------------------------------------------


def ball_shape(radius: float, N: int, d: int = 3) -> ContinuumShape:
    """Closed ball ``|z| ≤ radius`` centered at the origin, voxelized at resolution ``N``."""
    return voxelize(lambda *x: sum(xi ** 2 for xi in x) <= radius * radius, N, [-radius] * d,
                    [radius] * d, d, name=f"ball(r={radius:g})")


def perforated_shell(r_in: float, thickness: float, period: Optional[float], N: int, d: int = 3,
                     name: str = "") -> ContinuumShape:
    """Spherical shell ``r_in ≤ |z| ≤ r_in + thickness``; with ``period`` the cells
    ``round(z / period)`` of odd coordinate sum are removed (relative area ~1/2).
    """
    r_out = r_in + thickness

    def ind(*x):
        rr = sum(xi ** 2 for xi in x)
        m = (rr >= r_in * r_in) & (rr <= r_out * r_out)
        if period is not None:
            par = sum(np.rint(xi / period).astype(np.int64) for xi in x) % 2
            m = m & (par == 0)
        return m

    return voxelize(ind, N, [-r_out] * d, [r_out] * d, d,
                    name=name or (f"shell(p={period:g})" if period else "shell"))


def desk_capacity(E: ContinuumShape, M: int) -> float:
    """``d · cap_{Z^d}(M E) / M^{d-2}`` at a single mesh (no extrapolation)."""
    from .shapes import _level_data
    return _level_data(E, [M], 1.3)[0][1]


@dataclass
class SolidificationRow:
    label: str
    period: Optional[float]
    eps: float
    porous: str
    min_hit: float
    ratio: float


def solidification_experiment(A: ContinuumShape, U0s: Sequence[ContinuumShape],
                              Sigmas: Sequence[ContinuumShape], eps: Sequence[float], eta: float,
                              M: int = 64, walkers: int = 400, mesh: int = 48, seed=0,
                              periods: Optional[Sequence[Optional[float]]] = None) -> list[SolidificationRow]:
    """Ratios ``cap(Σ)/cap(A)`` at mesh ``M`` for a family of porous interfaces.

    Each ``Σ`` is first tested with :func:`porous_membership` against its ``U_0``.
    """
    capA = desk_capacity(A, M)
    rows = []
    periods = periods if periods is not None else [None] * len(Sigmas)
    for i, (U0, S, e) in enumerate(zip(U0s, Sigmas, eps)):
        rep = porous_membership(S, U0, e, eta, walkers=walkers, mesh=mesh, seed=derive_seed(seed, i))
        rows.append(SolidificationRow(S.name, periods[i], float(e), rep.status, rep.min_estimate,
                                      desk_capacity(S, M) / capA))
    return rows
