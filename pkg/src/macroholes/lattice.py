"""Lattice subsets of Z^d stored as dense bit grids over a fixed frame.

A :class:`SiteSet` is a boolean array together with the lattice coordinates of
its ``[0, ..., 0]`` entry (the *anchor*).  The array extent is the frame: every
operation keeps its result inside the frame of its input and raises
:class:`BoundsError` instead of silently truncating.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage


class BoundsError(ValueError):
    """A set (or the result of an operation) does not fit its frame."""


class FrameMismatch(ValueError):
    """Binary set operation between sets living on different frames."""


class Connectivity(enum.Enum):
    NEAREST = "nearest"  # |x - y|_1 = 1
    STAR = "star"        # |x - y|_inf = 1

    def structure(self, d: int) -> np.ndarray:
        if self is Connectivity.NEAREST:
            return ndimage.generate_binary_structure(d, 1)
        return ndimage.generate_binary_structure(d, d)


def _as_site(x, d=None) -> tuple[int, ...]:
    site = tuple(int(v) for v in np.atleast_1d(x))
    if d is not None and len(site) != d:
        raise ValueError(f"expected a {d}-dimensional site, got {site}")
    return site


@dataclass(frozen=True, eq=False)
class SiteSet:
    """Finite subset of Z^d given by ``bits`` over the frame ``[anchor, anchor + bits.shape)``."""

    anchor: tuple[int, ...]
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != len(self.anchor):
            raise ValueError("anchor and bit grid disagree on the dimension")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "anchor", _as_site(self.anchor))

    # -- frame ---------------------------------------------------------------
    @property
    def d(self) -> int:
        return len(self.anchor)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.bits.shape

    @property
    def upper(self) -> tuple[int, ...]:
        """Largest coordinates of the frame (inclusive)."""
        return tuple(a + n - 1 for a, n in zip(self.anchor, self.dims))

    def same_frame(self, other: "SiteSet") -> bool:
        return self.anchor == other.anchor and self.dims == other.dims

    @cached_property
    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __len__(self):
        return self.count

    def __bool__(self):
        return self.count > 0

    # -- membership ----------------------------------------------------------
    def local(self, x) -> tuple[int, ...]:
        return tuple(int(v) - a for v, a in zip(x, self.anchor))

    def in_frame(self, x) -> bool:
        return all(0 <= i < n for i, n in zip(self.local(x), self.dims))

    def __contains__(self, x) -> bool:
        x = _as_site(x, self.d)
        return self.in_frame(x) and bool(self.bits[self.local(x)])

    def sites(self) -> np.ndarray:
        """Member sites as an ``(count, d)`` integer array in lexicographic order."""
        return np.argwhere(self.bits) + np.asarray(self.anchor)

    def coordinates(self) -> list[np.ndarray]:
        """Open-mesh coordinate arrays of the frame (for vectorized predicates)."""
        return [np.arange(a, a + n).reshape([-1 if k == i else 1 for k in range(self.d)])
                for i, (a, n) in enumerate(zip(self.anchor, self.dims))]

    def distance_to_frame_edge(self) -> int:
        """Smallest number of steps a member can take before leaving the frame."""
        if not self:
            return np.iinfo(np.int64).max
        idx = np.argwhere(self.bits)
        lo = idx.min(axis=0)
        hi = np.asarray(self.dims) - 1 - idx.max(axis=0)
        return int(min(lo.min(), hi.min()))

    # -- construction helpers -----------------------------------------------
    @classmethod
    def empty(cls, anchor: Sequence[int], dims: Sequence[int]) -> "SiteSet":
        return cls(tuple(anchor), np.zeros(tuple(dims), dtype=bool))

    @classmethod
    def full(cls, anchor: Sequence[int], dims: Sequence[int]) -> "SiteSet":
        return cls(tuple(anchor), np.ones(tuple(dims), dtype=bool))

    @classmethod
    def from_sites(cls, sites: Iterable, anchor: Sequence[int], dims: Sequence[int]) -> "SiteSet":
        bits = np.zeros(tuple(dims), dtype=bool)
        pts = np.asarray(list(sites), dtype=np.int64).reshape(-1, len(anchor))
        loc = pts - np.asarray(anchor)
        if len(loc) and ((loc < 0).any() or (loc >= np.asarray(dims)).any()):
            raise BoundsError("site outside the frame")
        bits[tuple(loc.T)] = True
        return cls(tuple(anchor), bits)

    def with_bits(self, bits: np.ndarray) -> "SiteSet":
        return SiteSet(self.anchor, bits)

    def reframe(self, anchor: Sequence[int], dims: Sequence[int]) -> "SiteSet":
        """The same set on another frame; members falling outside raise :class:`BoundsError`."""
        anchor = _as_site(anchor, self.d)
        out = np.zeros(tuple(dims), dtype=bool)
        src, dst = [], []
        for a0, n0, a1, n1 in zip(self.anchor, self.dims, anchor, dims):
            lo, hi = max(a0, a1), min(a0 + n0, a1 + n1)
            if hi <= lo:
                src = None
                break
            src.append(slice(lo - a0, hi - a0))
            dst.append(slice(lo - a1, hi - a1))
        if src is not None:
            out[tuple(dst)] = self.bits[tuple(src)]
        if int(np.count_nonzero(out)) != self.count:
            raise BoundsError("members of the set fall outside the new frame")
        return SiteSet(anchor, out)

    def like(self, other: "SiteSet") -> "SiteSet":
        return self.reframe(other.anchor, other.dims)

    def padded(self, L: int) -> "SiteSet":
        """Same set on the frame enlarged by ``L`` sites on every side."""
        return self.reframe([a - L for a in self.anchor], [n + 2 * L for n in self.dims])

    def shifted(self, v: Sequence[int]) -> "SiteSet":
        """Translate set and frame together by the lattice vector ``v``."""
        return SiteSet(tuple(a + int(s) for a, s in zip(self.anchor, v)), self.bits)

    # -- algebra -------------------------------------------------------------
    def _check(self, other: "SiteSet"):
        if not self.same_frame(other):
            raise FrameMismatch(f"frames differ: {self.anchor}/{self.dims} vs {other.anchor}/{other.dims}")

    def __or__(self, other):
        self._check(other)
        return self.with_bits(self.bits | other.bits)

    def __and__(self, other):
        self._check(other)
        return self.with_bits(self.bits & other.bits)

    def __sub__(self, other):
        self._check(other)
        return self.with_bits(self.bits & ~other.bits)

    def __xor__(self, other):
        self._check(other)
        return self.with_bits(self.bits ^ other.bits)

    def complement(self) -> "SiteSet":
        """Complement within the frame."""
        return self.with_bits(~self.bits)

    def __eq__(self, other):
        if not isinstance(other, SiteSet):
            return NotImplemented
        if self.same_frame(other):
            return bool(np.array_equal(self.bits, other.bits))
        return self.count == other.count and np.array_equal(self.sites(), other.sites())

    def __hash__(self):
        return hash((self.anchor, self.dims, self.bits.tobytes()))

    def issubset(self, other: "SiteSet") -> bool:
        if self.same_frame(other):
            return not (self.bits & ~other.bits).any()
        return all(tuple(x) in other for x in self.sites())

    def __le__(self, other):
        return self.issubset(other)

    def __repr__(self):
        return f"SiteSet(d={self.d}, anchor={self.anchor}, dims={self.dims}, count={self.count})"


@dataclass(frozen=True)
class Labeling:
    """Component labels over a frame; 0 marks sites outside the labelled set."""

    anchor: tuple[int, ...]
    labels: np.ndarray
    n: int
    connectivity: Connectivity

    def component(self, k: int) -> SiteSet:
        return SiteSet(self.anchor, self.labels == k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.n + 1)[1:]


# -- constructors --------------------------------------------------------------

def box(center, r: int, frame: SiteSet | None = None) -> SiteSet:
    """Closed sup-norm ball ``B(center, r)``.

    Without ``frame`` the result lives on its own tight frame (anchor ``center - r``).
    """
    if r < 0:
        raise ValueError("radius must be non-negative")
    center = _as_site(center)
    d = len(center)
    anchor = tuple(c - r for c in center)
    tight = SiteSet(anchor, np.ones((2 * r + 1,) * d, dtype=bool))
    if frame is None:
        return tight
    return tight.like(frame)


def frame_box(r: int, d: int, center=None) -> SiteSet:
    """Empty set on the frame ``B(center, r)``; the usual way to fix a global bounding box."""
    center = (0,) * d if center is None else _as_site(center, d)
    return SiteSet.empty([c - r for c in center], [2 * r + 1] * d)


def sphere(N: int, d: int = 3, frame: SiteSet | None = None) -> SiteSet:
    """Inner boundary ``S_N = {x : |x|_inf = N}`` of ``B(0, N)``."""
    if N < 1:
        raise ValueError("N must be positive")
    bits = np.ones((2 * N + 1,) * d, dtype=bool)
    bits[(slice(1, -1),) * d] = False
    s = SiteSet((-N,) * d, bits)
    return s if frame is None else s.like(frame)


def ball_euclidean(radius: float, d: int = 3, frame: SiteSet | None = None) -> SiteSet:
    """Lattice sites with Euclidean norm at most ``radius``."""
    R = int(np.floor(radius))
    f = frame_box(max(R, 0), d)
    sq = sum(c.astype(np.float64) ** 2 for c in f.coordinates())
    s = f.with_bits(sq <= radius * radius + 1e-9)
    return s if frame is None else s.like(frame)


# -- morphology and connectivity ----------------------------------------------

def dilate(S: SiteSet, L: int) -> SiteSet:
    """Sites within sup-norm distance ``L`` of ``S`` (same frame)."""
    if L < 0:
        raise ValueError("L must be non-negative")
    if L == 0 or not S:
        return S
    if S.distance_to_frame_edge() < L:
        raise BoundsError(f"dilation by {L} leaves the frame {S.anchor}/{S.dims}")
    bits = ndimage.maximum_filter(S.bits.view(np.uint8), size=2 * L + 1, mode="constant", cval=0)
    return S.with_bits(bits.astype(bool))


def label_components(S: SiteSet, connectivity: Connectivity = Connectivity.NEAREST) -> Labeling:
    labels, n = ndimage.label(S.bits, structure=connectivity.structure(S.d))
    return Labeling(S.anchor, labels, int(n), connectivity)


def seeded_component(occupied: SiteSet, seeds: SiteSet,
                     connectivity: Connectivity = Connectivity.NEAREST) -> SiteSet:
    """Union of the components of ``occupied | seeds`` that meet ``seeds``.

    With ``seeds = S_N`` this is the boundary cluster of (0.2): paths run through
    ``occupied`` and may end on a seed.
    """
    if not seeds:
        raise ValueError("seed set is empty")
    seeds = seeds.like(occupied)
    lab = label_components(occupied | seeds, connectivity)
    hit = np.unique(lab.labels[seeds.bits])
    hit = hit[hit > 0]
    return occupied.with_bits(np.isin(lab.labels, hit))


def boundary_cluster(medium: SiteSet, N: int,
                     connectivity: Connectivity = Connectivity.NEAREST) -> SiteSet:
    """Component of ``S_N`` in ``medium | S_N``, computed inside ``B(0, N)``.

    Any path from the interior to the outside crosses ``S_N``, so the trace of
    the component in ``B(0, N)`` only depends on the medium there.
    """
    window = box((0,) * medium.d, N)
    return seeded_component(clip(medium, window), sphere(N, medium.d), connectivity)


def clip(S: SiteSet, frame: SiteSet) -> SiteSet:
    """Intersection of ``S`` with the frame of ``frame`` (explicit truncation)."""
    out = np.zeros(frame.dims, dtype=bool)
    src, dst = [], []
    for a0, n0, a1, n1 in zip(S.anchor, S.dims, frame.anchor, frame.dims):
        lo, hi = max(a0, a1), min(a0 + n0, a1 + n1)
        if hi <= lo:
            return SiteSet(frame.anchor, out)
        src.append(slice(lo - a0, hi - a0))
        dst.append(slice(lo - a1, hi - a1))
    out[tuple(dst)] = S.bits[tuple(src)]
    return SiteSet(frame.anchor, out)


def hole(thickened_component: SiteSet, N: int) -> SiteSet:
    """``B(0, N)`` minus the thickened component, on the component's frame."""
    B = box((0,) * thickened_component.d, N, frame=thickened_component)
    return B - thickened_component


def filling(W: SiteSet, N: int):
    """Continuum filling ``{z : d_inf(z, W/N) <= 1/N}`` as a voxel shape at resolution ``N``.

    Voxel ``v`` is the cube ``[v/N, (v+1)/N)^d``; site ``x`` contributes the
    ``2^d`` voxels ``x + {-1, 0}^d``, i.e. the cube of side ``2/N`` around ``x/N``.
    """
    from .continuum import ContinuumShape

    d = W.d
    out = np.zeros(tuple(n + 1 for n in W.dims), dtype=bool)
    for corner in itertools.product((0, 1), repeat=d):
        sl = tuple(slice(c, c + n) for c, n in zip(corner, W.dims))
        out[sl] |= W.bits
    voxels = SiteSet(tuple(a - 1 for a in W.anchor), out)
    return ContinuumShape(resolution=N, voxels=voxels, name="filling")


def sup_distance_transform(S: SiteSet) -> np.ndarray:
    """Sup-norm distance from every frame site to ``S`` (``inf`` if ``S`` is empty)."""
    if not S:
        return np.full(S.dims, np.inf)
    return ndimage.distance_transform_cdt(~S.bits, metric="chessboard").astype(np.float64)
