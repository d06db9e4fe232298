"""Gaussian free field on boxes: exact zero-boundary sampling, excursion sets,
the harmonic / local decomposition and Cameron-Martin shifts.

The field has covariance ``g`` (the Green function of the discrete-time walk),
so ``E[φ_0^2] = g(0, 0) ≈ 1.516`` in d = 3.  On a box ``[0, n_1) × ... ×
[0, n_d)`` with zero boundary condition the covariance is the killed Green
function ``(I - P)^{-1}``, diagonalized by products of sine modes.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import fft, linalg

from .lattice import BoundsError, SiteSet, box, clip
from .potential import ScalarField, dirichlet_solve, green_asymptotic, killed_green
from .rng import generator


class Method(str, enum.Enum):
    SPECTRAL = "spectral_zero_boundary"
    DENSE = "dense_factorization"


DENSE_LIMIT = 9 ** 3


@dataclass(frozen=True)
class GffSpec:
    """Field observed in ``window``, sampled with zero boundary condition on the
    box of radius ``max(ceil(buffer_factor * R), R + 1)`` around the window's
    center (``R`` the window radius).  ``max_bias`` flags samples whose
    covariance bias bound exceeds it.
    """

    window: SiteSet
    buffer_factor: float = 2.0
    method: Method = Method.SPECTRAL
    max_bias: Optional[float] = None

    def __post_init__(self):
        if self.buffer_factor < 1:
            raise ValueError("buffer_factor must be at least 1")
        if len(set(self.window.dims)) != 1 or self.window.dims[0] % 2 == 0:
            raise ValueError("window must be a box B(center, R)")
        object.__setattr__(self, "method", Method(self.method))

    @property
    def radius(self) -> int:
        return (self.window.dims[0] - 1) // 2

    @property
    def center(self) -> tuple:
        return tuple(a + self.radius for a in self.window.anchor)

    @property
    def buffered(self) -> SiteSet:
        R = self.radius
        return box(self.center, max(int(math.ceil(self.buffer_factor * R)), R + 1))

    def bias_bound(self) -> float:
        """Bound on ``g(x, y) - g_box(x, y)`` for ``x, y`` in the window.

        The difference is ``E_x[g(X_T, y)]`` with ``X_T`` on the exterior
        boundary of the buffered box, hence at most ``g`` at the smallest
        distance between that boundary and the window (evaluated along an axis,
        where the asymptotic expansion is largest).
        """
        d = self.window.d
        gap = (self.buffered.dims[0] - 1) // 2 + 1 - self.radius
        return float(green_asymptotic(np.array([[gap] + [0] * (d - 1)]), d)[0])

    def to_json(self) -> dict:
        return {"window": {"anchor": list(self.window.anchor), "dims": list(self.window.dims)},
                "buffer_factor": self.buffer_factor, "method": self.method.value, "max_bias": self.max_bias}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class FieldSample:
    values: ScalarField = field(repr=False)
    window: SiteSet
    seed: object = None
    spec_hash: str = ""
    bias_bound: float = 0.0
    flagged: bool = False

    def window_values(self) -> np.ndarray:
        """Field values on the window's frame (read-only view)."""
        fr = self.values.domain
        sl = tuple(slice(a - b, a - b + n) for a, b, n in zip(self.window.anchor, fr.anchor, self.window.dims))
        return self.values.values[sl]

    def metadata(self) -> dict:
        return {"seed": self.seed, "spec_hash": self.spec_hash, "bias_bound": self.bias_bound,
                "flagged": self.flagged}


def dirichlet_eigenvalues(dims: Sequence[int]) -> np.ndarray:
    """Eigenvalues of ``I - P`` on the box with zero boundary: ``1 - (1/d) Σ cos(π k_i / (n_i + 1))``."""
    d = len(dims)
    mu = np.ones(tuple(dims))
    for ax, n in enumerate(dims):
        c = np.cos(np.pi * np.arange(1, n + 1) / (n + 1)).reshape([-1 if k == ax else 1 for k in range(d)])
        mu = mu - c / d
    return mu


def spectral_covariance(dims: Sequence[int], x: Sequence[int]) -> np.ndarray:
    """Column ``x`` of the spectral covariance, ``S diag(1/μ) S e_x`` (for audits)."""
    e = np.zeros(tuple(dims))
    e[tuple(x)] = 1.0
    return fft.idstn(fft.dstn(e, type=1, norm="ortho") / dirichlet_eigenvalues(dims), type=1, norm="ortho")


def _dense_factor(dims: tuple) -> np.ndarray:
    n = int(np.prod(dims))
    if n > DENSE_LIMIT:
        raise ValueError("dense factorization is limited to boxes of at most 9^3 sites")
    G = np.empty((n, n))
    for i, x in enumerate(np.ndindex(*dims)):
        G[:, i] = killed_green(dims, x).ravel()
    return linalg.cholesky(0.5 * (G + G.T), lower=True)


_FACTORS: dict = {}


def sample_zero_boundary(dims: Sequence[int], seed, method: Method = Method.SPECTRAL,
                         anchor: Optional[Sequence[int]] = None) -> FieldSample:
    """Centered Gaussian field with the killed Green function as covariance.

    Spectral method: ``φ = S (ξ / sqrt(μ))`` with ``S`` the orthonormal type-I
    sine transform and ``ξ`` i.i.d. standard normals.
    """
    dims = tuple(int(n) for n in dims)
    if any(n < 2 for n in dims):
        raise ValueError("each side must have at least 2 sites")
    rng = generator(seed)
    xi = rng.standard_normal(dims)
    method = Method(method)
    if method is Method.SPECTRAL:
        phi = fft.dstn(xi / np.sqrt(dirichlet_eigenvalues(dims)), type=1, norm="ortho")
    else:
        if dims not in _FACTORS:
            _FACTORS[dims] = _dense_factor(dims)
        phi = (_FACTORS[dims] @ xi.ravel()).reshape(dims)
    anchor = (0,) * len(dims) if anchor is None else tuple(anchor)
    fr = SiteSet.full(anchor, dims)
    seed_out = seed if isinstance(seed, (int, np.integer)) else None
    return FieldSample(ScalarField(fr, phi), fr, seed_out)


def sample_window(spec: GffSpec, seed) -> FieldSample:
    """Zero-boundary sample on the buffered box, observed in the window."""
    buf = spec.buffered
    s = sample_zero_boundary(buf.dims, seed, spec.method, buf.anchor)
    bias = spec.bias_bound()
    flagged = spec.max_bias is not None and bias > spec.max_bias
    return FieldSample(s.values, spec.window, s.seed, spec.digest(), bias, flagged)


def excursion_set(f: FieldSample, alpha: float) -> SiteSet:
    """``{x in window : φ_x >= α}``; ``α = ±inf`` give the whole window / the empty set."""
    return SiteSet(f.window.anchor, (f.window_values() >= alpha) & f.window.bits)


def markov_decompose(f: FieldSample, U: SiteSet, tol: float = 1e-11) -> tuple[ScalarField, ScalarField]:
    """Split ``φ = h_U + ψ_U`` with ``h_U`` harmonic in ``U`` and equal to ``φ``
    outside, and ``ψ_U`` vanishing outside ``U``.
    """
    phi = f.values
    fr = phi.domain
    U = clip(U, fr) if not U.same_frame(fr) else U
    if U.count and U.distance_to_frame_edge() < 1:
        raise BoundsError("U must lie strictly inside the sampled box")
    harm = dirichlet_solve(U, phi, tol=tol).values if U.count else phi.values
    h = np.where(U.bits, harm, phi.values)
    psi = np.where(U.bits, phi.values - h, 0.0)
    return ScalarField(fr, h), ScalarField(fr, psi)


def tilt_sample(spec: GffSpec, f: ScalarField, seed) -> FieldSample:
    """Sample of the shifted law: ``sample_window(spec, seed) + f``."""
    try:
        supp = f.support().like(spec.window)
    except BoundsError:
        raise ValueError("tilt must be supported in the window") from None
    if not supp.issubset(spec.window):
        raise ValueError("tilt must be supported in the window")
    s = sample_window(spec, seed)
    shift = f.reframe(s.values.domain)
    return FieldSample(ScalarField(s.values.domain, s.values.values + shift.values), s.window, s.seed,
                       s.spec_hash, s.bias_bound, s.flagged)
