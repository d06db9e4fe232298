"""Continuum subsets of R^d represented as unions of voxels of side 1/N.

Voxel ``v`` stands for the cube ``[v/N, (v+1)/N)^d``.  Volumes are exact
rationals ``count / N^d``.  Shapes built from an analytic description keep the
indicator so they can be re-voxelized at a finer resolution.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from .lattice import Connectivity, FrameMismatch, SiteSet

Indicator = Callable[..., np.ndarray]


@dataclass(frozen=True, eq=False)
class ContinuumShape:
    """Union of closed-open cubes of side ``1/resolution``.

    Parameters
    ----------
    resolution : int
        Voxels per unit length (the ``N`` of the rescaled lattice).
    voxels : SiteSet
        Voxel indices.
    indicator : callable, optional
        Vectorized membership ``indicator(*coords) -> bool array`` on points of
        R^d, used by :meth:`at_resolution` to re-voxelize exactly.
    """

    resolution: int
    voxels: SiteSet
    indicator: Optional[Indicator] = field(default=None, repr=False)
    name: str = ""

    @property
    def d(self) -> int:
        return self.voxels.d

    @property
    def count(self) -> int:
        return self.voxels.count

    @property
    def exact_volume(self) -> Fraction:
        return Fraction(self.count, self.resolution ** self.d)

    @property
    def volume(self) -> float:
        return self.count / float(self.resolution) ** self.d

    def __bool__(self):
        return self.count > 0

    def __repr__(self):
        return f"ContinuumShape({self.name!r}, N={self.resolution}, voxels={self.count}, volume={self.volume:.6g})"

    # -- geometry ------------------------------------------------------------
    def centers(self) -> np.ndarray:
        """Voxel centers in R^d, shape ``(count, d)``."""
        return (self.voxels.sites() + 0.5) / self.resolution

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Tight axis-aligned bounding box (lower, upper) in R^d."""
        s = self.voxels.sites()
        return s.min(axis=0) / self.resolution, (s.max(axis=0) + 1) / self.resolution

    def barycenter(self) -> np.ndarray:
        return self.centers().mean(axis=0)

    def tight(self) -> "ContinuumShape":
        """Same shape on the smallest voxel frame containing it."""
        if not self:
            return self
        idx = np.argwhere(self.voxels.bits)
        lo, hi = idx.min(axis=0), idx.max(axis=0) + 1
        sl = tuple(slice(a, b) for a, b in zip(lo, hi))
        vox = SiteSet(tuple(int(a) + int(l) for a, l in zip(self.voxels.anchor, lo)), self.voxels.bits[sl])
        return self._replace(vox)

    def _replace(self, voxels: SiteSet, name: str | None = None, keep_indicator=True) -> "ContinuumShape":
        return ContinuumShape(self.resolution, voxels, self.indicator if keep_indicator else None,
                              self.name if name is None else name)

    def translated(self, v) -> "ContinuumShape":
        """Translate by the voxel vector ``v`` (i.e. by ``v / N`` in R^d)."""
        ind = None
        if self.indicator is not None:
            base, shift = self.indicator, np.asarray(v, dtype=float) / self.resolution
            ind = lambda *c: base(*(ci - s for ci, s in zip(c, shift)))
        return ContinuumShape(self.resolution, self.voxels.shifted(v), ind, self.name)

    # -- resolution ----------------------------------------------------------
    def at_resolution(self, M: int) -> "ContinuumShape":
        """Re-voxelize at resolution ``M``.

        Uses the indicator when available (voxel kept iff its center is in the
        set); otherwise ``M`` must be a multiple of the current resolution and
        every voxel is split into ``(M/N)^d`` sub-voxels.
        """
        if M == self.resolution:
            return self
        if self.indicator is not None:
            lo, hi = self.bounds()
            return voxelize(self.indicator, M, lo - 2.0 / self.resolution, hi + 2.0 / self.resolution,
                            self.d, name=self.name)
        if M % self.resolution:
            raise ValueError("refinement without an indicator needs an integer factor")
        k = M // self.resolution
        bits = self.voxels.bits
        for ax in range(self.d):
            bits = np.repeat(bits, k, axis=ax)
        vox = SiteSet(tuple(a * k for a in self.voxels.anchor), bits)
        return ContinuumShape(M, vox, None, self.name)

    # -- set algebra (common frame is the union of both frames) -------------
    def _common(self, other: "ContinuumShape") -> tuple[SiteSet, SiteSet]:
        if self.resolution != other.resolution:
            raise FrameMismatch("shapes at different resolutions")
        a, b = self.voxels, other.voxels
        lo = [min(x, y) for x, y in zip(a.anchor, b.anchor)]
        hi = [max(x + n, y + m) for x, n, y, m in zip(a.anchor, a.dims, b.anchor, b.dims)]
        dims = [h - l for h, l in zip(hi, lo)]
        return a.reframe(lo, dims), b.reframe(lo, dims)

    def union(self, other):
        a, b = self._common(other)
        return ContinuumShape(self.resolution, a | b, None, f"{self.name}|{other.name}")

    def intersection(self, other):
        a, b = self._common(other)
        return ContinuumShape(self.resolution, a & b, None, f"{self.name}&{other.name}")

    def difference(self, other):
        a, b = self._common(other)
        return ContinuumShape(self.resolution, a - b, None, f"{self.name}-{other.name}")

    def symdiff_volume(self, other) -> float:
        a, b = self._common(other)
        return (a ^ b).count / float(self.resolution) ** self.d

    def issubset(self, other) -> bool:
        a, b = self._common(other)
        return a.issubset(b)

    def interior_voxels(self) -> SiteSet:
        """Voxels whose closed cube lies in the topological interior of the shape.

        A closed voxel is interior iff all ``3^d - 1`` voxels touching it belong
        to the shape.
        """
        padded = self.voxels.padded(1)
        bits = ndimage.binary_erosion(padded.bits, structure=Connectivity.STAR.structure(self.d),
                                      border_value=0)
        return padded.with_bits(bits)

    def in_interior_of(self, other: "ContinuumShape") -> bool:
        """``closure(self) ⊆ interior(other)``."""
        inner = ContinuumShape(other.resolution, other.interior_voxels())
        return self.issubset(inner)

    def distance_to_complement(self) -> np.ndarray:
        """Voxel-level sup-norm distance of each frame voxel to the complement."""
        padded = self.voxels.padded(1)
        return ndimage.distance_transform_cdt(padded.bits, metric="chessboard")

    def contains_points(self, pts: np.ndarray) -> np.ndarray:
        """Membership of points of R^d (half-open voxel convention)."""
        v = np.floor(np.asarray(pts, dtype=float) * self.resolution).astype(np.int64)
        loc = v - np.asarray(self.voxels.anchor)
        ok = np.all((loc >= 0) & (loc < np.asarray(self.voxels.dims)), axis=1)
        out = np.zeros(len(v), dtype=bool)
        out[ok] = self.voxels.bits[tuple(loc[ok].T)]
        return out


def empty_shape(N: int, d: int = 3) -> ContinuumShape:
    return ContinuumShape(N, SiteSet.empty((0,) * d, (1,) * d), None, "empty")


def voxelize(indicator: Indicator, N: int, lo, hi, d: int = 3, name: str = "") -> ContinuumShape:
    """Voxelize an analytic set: voxel ``v`` kept iff its center lies in the set.

    ``lo``/``hi`` bound the set in R^d.
    """
    lo = np.floor(np.asarray(lo, dtype=float) * N).astype(int) - 1
    hi = np.ceil(np.asarray(hi, dtype=float) * N).astype(int) + 1
    dims = hi - lo
    coords = [((np.arange(n) + a + 0.5) / N).reshape([-1 if k == i else 1 for k in range(d)])
              for i, (a, n) in enumerate(zip(lo, dims))]
    bits = np.broadcast_to(np.asarray(indicator(*coords), dtype=bool), tuple(dims)).copy()
    shape = ContinuumShape(N, SiteSet(tuple(int(a) for a in lo), bits), indicator, name)
    return shape.tight() if shape else shape


def lattice_points(shape: ContinuumShape, M: int) -> SiteSet:
    """Lattice sites ``x`` with ``(x + 1/2)/M`` in the shape.

    This is the discrete blow-up ``M·A`` used for discrete-to-continuum
    capacity scaling; with ``M`` a multiple of the shape's resolution every voxel
    becomes a block of ``(M/N)^d`` sites.
    """
    return shape.at_resolution(M).voxels


def unit_cube_offsets(d: int):
    return list(itertools.product((0, 1), repeat=d))
