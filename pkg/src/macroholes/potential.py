"""Discrete potential theory for the simple random walk on Z^d.

Conventions
-----------
* ``g(x, y)`` is the expected number of visits to ``y`` of the discrete-time
  walk started at ``x`` (so ``g(0, 0) ≈ 1.5164`` in d = 3).
* ``P`` is the transition operator, ``Δ = P - I`` the discrete Laplacian.
* ``e_A(x) = P_x[no return to A]`` for ``x ∈ A`` and ``cap(A) = Σ e_A``.

Linear systems on boxes are assembled once, optionally folded by reflection
symmetries of the problem.  Folding keeps the matrix symmetric positive
definite by weighting each row with the multiplicity of its orbit.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba as nb
import numpy as np
import pyamg
import scipy.sparse as sp
from scipy.special import gamma as gamma_fn

from .lattice import BoundsError, SiteSet, dilate

# -- data types -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real values on ``domain``; entries of ``values`` off the domain are zero."""

    domain: SiteSet
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != self.domain.dims:
            raise ValueError("values must match the domain frame")
        v[~self.domain.bits] = 0.0
        if not np.all(np.isfinite(v)):
            raise ValueError("scalar field must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def on_frame(cls, frame: SiteSet, values) -> "ScalarField":
        """Field defined on every site of ``frame``'s box."""
        return cls(SiteSet.full(frame.anchor, frame.dims), values)

    @classmethod
    def zeros(cls, frame: SiteSet) -> "ScalarField":
        return cls.on_frame(frame, np.zeros(frame.dims))

    @property
    def d(self):
        return self.domain.d

    def __call__(self, x) -> float:
        x = tuple(int(v) for v in x)
        if x not in self.domain:
            raise KeyError(f"{x} outside the field's domain")
        return float(self.values[self.domain.local(x)])

    def support(self) -> SiteSet:
        return self.domain.with_bits(self.values != 0)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        if not self.domain.same_frame(other.domain):
            raise ValueError("fields on different frames")
        dom = self.domain & other.domain
        return ScalarField(dom, self.values + other.values)

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(self.domain, self.values * float(c))

    __rmul__ = __mul__

    def reframe(self, frame: SiteSet) -> "ScalarField":
        """Same field on another frame; nonzero values outside it raise :class:`BoundsError`."""
        dom = self.domain.reframe(frame.anchor, frame.dims) if self.domain.count else SiteSet.empty(frame.anchor, frame.dims)
        out = np.zeros(frame.dims)
        src = []
        dst = []
        for a0, n0, a1, n1 in zip(self.domain.anchor, self.domain.dims, frame.anchor, frame.dims):
            lo, hi = max(a0, a1), min(a0 + n0, a1 + n1)
            src.append(slice(lo - a0, max(hi - a0, lo - a0)))
            dst.append(slice(lo - a1, max(hi - a1, lo - a1)))
        out[tuple(dst)] = self.values[tuple(src)]
        if np.count_nonzero(out) != np.count_nonzero(self.values):
            raise BoundsError("nonzero values fall outside the new frame")
        return ScalarField(dom, out)


@dataclass(frozen=True)
class CapacityEstimate:
    value: float
    stderr: float
    method: str  # "linear_solve" | "monte_carlo" | "extrapolated"
    meta: dict = field(default_factory=dict)
    flagged: bool = False

    def to_json(self) -> dict:
        radii = self.meta.get("radii")
        return {"value": self.value, "stderr": self.stderr, "method": self.method,
                "radii": list(radii) if radii is not None else None,
                "flagged": self.flagged}


@dataclass(frozen=True)
class GreenEstimate:
    value: float
    stderr: float
    method: str
    flagged: bool = False
    meta: dict = field(default_factory=dict)


# -- local operators ----------------------------------------------------------------

def discrete_laplacian(f: ScalarField, x) -> float:
    """``(1/2d) Σ_{|e|_1 = 1} (f(x+e) - f(x))``."""
    x = tuple(int(v) for v in x)
    d = len(x)
    fx = f(x)
    acc = 0.0
    for i in range(d):
        for s in (1, -1):
            y = list(x)
            y[i] += s
            if tuple(y) not in f.domain:
                raise KeyError(f"neighbor {tuple(y)} of {x} outside the field's domain")
            acc += f(y) - fx
    return acc / (2 * d)


def laplacian_array(v: np.ndarray) -> np.ndarray:
    """Discrete Laplacian on the interior of an array (edges left at zero)."""
    d = v.ndim
    out = np.zeros_like(v, dtype=np.float64)
    core = tuple(slice(1, -1) for _ in range(d))
    acc = np.zeros(tuple(n - 2 for n in v.shape))
    for ax in range(d):
        for s in (0, 2):
            sl = [slice(1, -1)] * d
            sl[ax] = slice(s, s + v.shape[ax] - 2)
            acc += v[tuple(sl)]
    out[core] = acc / (2 * d) - v[core]
    return out


def dirichlet_form(f: ScalarField, g: ScalarField) -> float:
    """``E(f, g) = 1/2 Σ_{x,y: |x-y|_1=1} (1/2d)(f(y)-f(x))(g(y)-g(x))``.

    Both fields must share a frame and be supported away from its edge, so that
    no gradient is truncated.
    """
    if not f.domain.same_frame(g.domain):
        raise ValueError("fields on different frames")
    for h in (f, g):
        s = h.values != 0
        if s.any():
            edge = np.zeros_like(s)
            for ax in range(s.ndim):
                sl = [slice(None)] * s.ndim
                sl[ax] = 0
                edge[tuple(sl)] = True
                sl[ax] = -1
                edge[tuple(sl)] = True
            if (s & edge).any():
                raise BoundsError("support touches the frame edge; gradient would be truncated")
    return dirichlet_form_array(f.values, g.values)


def dirichlet_form_array(a: np.ndarray, b: np.ndarray) -> float:
    d = a.ndim
    tot = 0.0
    for ax in range(d):
        tot += float(np.sum(np.diff(a, axis=ax) * np.diff(b, axis=ax)))
    return tot / (2 * d)


# -- Green function asymptotics --------------------------------------------------------

def green_constant(d: int) -> float:
    """``c_d`` with ``g(x) ~ c_d |x|^{2-d}``; equals ``d`` times the Brownian constant."""
    return d * gamma_fn(d / 2 - 1) / (2 * math.pi ** (d / 2))


def green_asymptotic(x: np.ndarray, d: Optional[int] = None) -> np.ndarray:
    """Large-``|x|`` expansion of ``g(0, x)``.

    In d = 3 the first anisotropic correction is included; elsewhere only the
    leading term.  Not meant for ``|x| < 2``.
    """
    x = np.asarray(x, dtype=np.float64)
    if d is None:
        d = x.shape[-1]
    r2 = np.sum(x * x, axis=-1)
    r = np.sqrt(r2)
    lead = green_constant(d) * r ** (2 - d)
    if d != 3:
        return lead
    quart = np.sum(x ** 4, axis=-1) / (r2 * r2)
    return lead + 6.0 / (32 * math.pi * r ** 3) * (5 * quart - 3)


# -- folded box systems ----------------------------------------------------------------

@dataclass
class BoxSystem:
    """Geometry of a (possibly folded) box around a center.

    Per axis the parity is ``"even"`` (mirror through the lattice plane at the
    center), ``"odd"`` (mirror through the half-integer plane ``c - 1/2``) or
    ``None`` (no folding).  Grid index ``j`` on a folded axis maps to lattice
    coordinate ``c + j`` (even) or ``c + j`` with mirror ``c - 1 - j`` (odd);
    unfolded axes store ``c - R + j``.
    """

    center: tuple
    R: int
    parity: tuple

    @property
    def d(self):
        return len(self.center)

    @property
    def shape(self) -> tuple:
        return tuple((self.R + 1 if p == "even" else self.R if p == "odd" else 2 * self.R + 1)
                     for p in self.parity)

    def coords(self) -> list[np.ndarray]:
        """Lattice coordinates of the grid, as broadcastable arrays."""
        out = []
        for i, (c, p, n) in enumerate(zip(self.center, self.parity, self.shape)):
            j = np.arange(n)
            x = c + j if p is not None else c - self.R + j
            out.append(x.reshape([-1 if k == i else 1 for k in range(self.d)]))
        return out

    def outer_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        for ax, p in enumerate(self.parity):
            sl = [slice(None)] * self.d
            sl[ax] = -1
            m[tuple(sl)] = True
            if p is None:
                sl[ax] = 0
                m[tuple(sl)] = True
        return m

    def orbit_size(self) -> np.ndarray:
        """Number of lattice sites represented by each grid cell."""
        w = np.ones(self.shape)
        for i, p in enumerate(self.parity):
            if p is None:
                continue
            j = np.arange(self.shape[i])
            m = np.where(j > 0, 2.0, 1.0) if p == "even" else np.full(len(j), 2.0)
            w = w * m.reshape([-1 if k == i else 1 for k in range(self.d)])
        return w

    def row_weight(self) -> np.ndarray:
        """Row scaling that symmetrizes the folded operator (odd axes need none)."""
        w = np.ones(self.shape)
        for i, p in enumerate(self.parity):
            if p == "even":
                j = np.arange(self.shape[i])
                w = w * np.where(j > 0, 2.0, 1.0).reshape([-1 if k == i else 1 for k in range(self.d)])
        return w

    def neighbor_index(self, ax: int, sign: int) -> np.ndarray:
        """Grid index along ``ax`` of the ``sign`` neighbor (``-1`` when off the grid)."""
        n = self.shape[ax]
        j = np.arange(n) + sign
        p = self.parity[ax]
        if p == "even":
            j = np.where(j < 0, 1, j)
        elif p == "odd":
            j = np.where(j < 0, 0, j)
        j = np.where((j < 0) | (j >= n), -1, j)
        return j

    def fold(self, sites: np.ndarray) -> np.ndarray:
        """Grid indices of lattice sites ``(n, d)`` (``-1`` rows if off the grid)."""
        sites = np.asarray(sites, dtype=np.int64)
        idx = np.empty_like(sites)
        for i, (c, p) in enumerate(zip(self.center, self.parity)):
            x = sites[:, i] - c
            if p == "even":
                j = np.abs(x)
            elif p == "odd":
                j = np.where(x >= 0, x, -1 - x)
            else:
                j = x + self.R
            idx[:, i] = j
        bad = np.any((idx < 0) | (idx >= np.asarray(self.shape)), axis=1)
        idx[bad] = -1
        return idx


def _assemble(system: BoxSystem, unknown: np.ndarray, fixed: np.ndarray):
    """Matrix and right-hand side of ``(2d I - Σ shifts) h = 0`` on ``unknown`` cells.

    ``fixed`` holds the values of every non-unknown cell.  Rows are scaled by
    :meth:`BoxSystem.row_weight`, which makes the folded matrix symmetric.
    """
    d = system.d
    shape = system.shape
    n_unknown = int(unknown.sum())
    index = -np.ones(shape, dtype=np.int64)
    index[unknown] = np.arange(n_unknown)
    weight = system.row_weight()[unknown]
    grid = np.indices(shape, sparse=True)
    rows, cols, vals = [], [], []
    diag = np.full(n_unknown, 2.0 * d) * weight
    rhs = np.zeros(n_unknown)
    unk_pos = [np.broadcast_to(g, shape)[unknown] for g in grid]
    for ax in range(d):
        for s in (1, -1):
            nbj = system.neighbor_index(ax, s)[unk_pos[ax]]
            if np.any(nbj < 0):
                raise BoundsError("unknown cell on the grid edge")
            pos = list(unk_pos)
            pos[ax] = nbj
            nb_idx = index[tuple(pos)]
            is_unk = nb_idx >= 0
            rows.append(np.nonzero(is_unk)[0])
            cols.append(nb_idx[is_unk])
            vals.append(-weight[is_unk])
            rhs[~is_unk] += weight[~is_unk] * fixed[tuple(p[~is_unk] for p in pos)]
    rows.append(np.arange(n_unknown))
    cols.append(np.arange(n_unknown))
    vals.append(diag)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_unknown, n_unknown))
    A.sum_duplicates()
    return A, rhs, index


class _Solver:
    """Reusable AMG-preconditioned CG for one assembled matrix."""

    def __init__(self, A):
        self.A = A
        self.ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric", max_coarse=500)

    def solve(self, b, tol=1e-10, maxiter=500):
        if not np.any(b):
            return np.zeros_like(b)
        res = []
        x = self.ml.solve(b, tol=tol, accel="cg", maxiter=maxiter, residuals=res)
        rel = np.linalg.norm(b - self.A @ x) / np.linalg.norm(b)
        if rel > max(10 * tol, 1e-8):
            raise RuntimeError(f"linear solve did not converge (relative residual {rel:.2e})")
        return x


def _symmetry(A: SiteSet):
    """Center and per-axis parity of the reflection symmetries of ``A``."""
    idx = np.argwhere(A.bits)
    lo, hi = idx.min(axis=0), idx.max(axis=0)
    sl = tuple(slice(a, b + 1) for a, b in zip(lo, hi))
    tight = A.bits[sl]
    center, parity = [], []
    for ax in range(A.d):
        ext = hi[ax] - lo[ax] + 1
        sym = np.array_equal(tight, np.flip(tight, axis=ax))
        a = A.anchor[ax] + lo[ax]
        if sym and ext % 2 == 1:
            center.append(int(a + ext // 2))
            parity.append("even")
        elif sym:
            center.append(int(a + ext // 2))
            parity.append("odd")
        else:
            center.append(int(a + ext // 2))
            parity.append(None)
    return tuple(center), tuple(parity)


def _mirror_center(center, parity):
    """Geometric center in R^d of the folded box."""
    return np.array([c - 0.5 if p == "odd" else float(c) for c, p in zip(center, parity)])


@dataclass
class HittingSolution:
    """Hitting probability of ``A`` on a (folded) box, plus its equilibrium data."""

    system: BoxSystem
    inside: np.ndarray  # cells of A
    h: np.ndarray       # P_x[H_A < ∞] on the grid (1 on A)
    escape: np.ndarray  # e_A on A cells, zero elsewhere
    capacity: float


def _escape(system: BoxSystem, inside: np.ndarray, h: np.ndarray) -> np.ndarray:
    d = system.d
    esc = np.zeros(system.shape)
    grid = np.indices(system.shape, sparse=True)
    pos_in = [np.broadcast_to(g, system.shape)[inside] for g in grid]
    acc = np.zeros(len(pos_in[0]))
    for ax in range(d):
        for s in (1, -1):
            pos = list(pos_in)
            pos[ax] = system.neighbor_index(ax, s)[pos_in[ax]]
            if np.any(pos[ax] < 0):
                raise BoundsError("set touches the grid edge")
            acc += 1.0 - h[tuple(pos)]
    esc[inside] = acc / (2 * d)
    return esc


def hitting_solution(A: SiteSet, R: int, boundary: str = "farfield", fold: bool = True,
                     tol: float = 1e-10, center=None, parity=None, refine: int = 8) -> HittingSolution:
    """Solve for ``h(x) = P_x[H_A < ∞]`` on a box of radius ``R`` around ``A``.

    ``boundary="absorbing"`` kills the walk on the outer layer (``h = 0``);
    ``"farfield"`` imposes ``h = Q g(x - c)`` on the outer layer with ``Q``
    fixed self-consistently to the resulting capacity, then up to ``refine``
    times replaces ``g(x - c)`` by the potential of the normalized equilibrium
    measure just found (which removes the multipole error of a point source).
    """
    if not A:
        raise ValueError("empty set has no equilibrium problem")
    c0, p0 = _symmetry(A)
    center = c0 if center is None else tuple(center)
    parity = (p0 if fold else (None,) * A.d) if parity is None else tuple(parity)
    system = BoxSystem(center, int(R), parity)
    coords = system.coords()
    # membership of A on the grid
    inside = np.zeros(system.shape, dtype=bool)
    loc = [c - a for c, a in zip(coords, A.anchor)]
    valid = np.ones(system.shape, dtype=bool)
    for ax, (l, n) in enumerate(zip(loc, A.dims)):
        valid &= (l >= 0) & (l < n)
    sel = np.nonzero(valid)
    inside[sel] = A.bits[tuple(np.broadcast_to(l, system.shape)[sel] for l in loc)]
    if inside.sum() * system.orbit_size()[inside].mean() != A.count and fold:
        # fall back to no folding if the symmetry detection and the grid disagree
        return hitting_solution(A, R, boundary, fold=False, tol=tol, refine=refine)
    outer = system.outer_mask()
    if (inside & outer).any():
        raise BoundsError("set reaches the outer layer; increase R")
    unknown = ~inside & ~outer
    base = np.zeros(system.shape)
    base[inside] = 1.0
    Amat, b0, index = _assemble(system, unknown, base)
    solver = _Solver(Amat)
    h0 = base.copy()
    h0[unknown] = solver.solve(b0, tol)
    esc0 = _escape(system, inside, h0)
    orbit = system.orbit_size()
    C0 = float((orbit * esc0).sum())
    if boundary == "absorbing":
        return HittingSolution(system, inside, h0, esc0, C0)
    if boundary != "farfield":
        raise ValueError(f"unknown boundary mode {boundary!r}")
    xc = _mirror_center(center, parity)
    pts = np.stack([np.broadcast_to(c, system.shape)[outer] for c in coords], axis=1) - xc
    phi = np.zeros(system.shape)
    phi[outer] = green_asymptotic(pts, A.d)
    _, b1, _ = _assemble(system, unknown, phi)
    h1 = phi.copy()
    h1[unknown] = solver.solve(b1, tol)
    h1[inside] = 0.0
    esc1 = _escape(system, inside, h1 + 1.0)  # flux of h1 with the "1 -" removed
    C1 = float((orbit * esc1).sum())
    Q = C0 / (1.0 - C1)
    esc = esc0 + Q * esc1
    cap = float((orbit * esc).sum())
    # replace the point-source boundary data by the potential of the current
    # equilibrium measure, h(x) = Σ_y g(x - y) e_A(y), until the capacity settles
    Asites = A.sites()
    Aidx = system.fold(Asites)
    bpts = np.stack([np.broadcast_to(c, system.shape)[outer] for c in coords], axis=1).astype(np.float64)
    for _ in range(refine):
        w = esc[tuple(Aidx.T)]
        keep = w > 0
        phi = np.zeros(system.shape)
        phi[outer] = _potential(bpts, Asites[keep].astype(np.float64), w[keep] / w.sum(),
                                green_constant(A.d), A.d == 3)
        _, b1, _ = _assemble(system, unknown, phi)
        h1 = phi.copy()
        h1[unknown] = solver.solve(b1, tol)
        h1[inside] = 0.0
        esc1 = _escape(system, inside, h1 + 1.0)
        C1 = float((orbit * esc1).sum())
        Q = C0 / (1.0 - C1)
        esc = esc0 + Q * esc1
        new = float((orbit * esc).sum())
        done = abs(new - cap) <= 1e-9 * new
        cap = new
        if done:
            break
    h = h0 + Q * h1
    return HittingSolution(system, inside, h, esc, cap)


@nb.njit(cache=True)
def _potential(points, sites, weights, c_d, aniso):
    # Σ_j g_asym(points_i - sites_j) weights_j
    n, d = points.shape
    m = sites.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(m):
            r2 = 0.0
            q = 0.0
            for k in range(d):
                z = points[i, k] - sites[j, k]
                r2 += z * z
                q += z * z * z * z
            r = np.sqrt(r2)
            g = c_d * r ** (2 - d)
            if aniso:
                g += 6.0 / (32.0 * np.pi * r ** 3) * (5.0 * q / (r2 * r2) - 3.0)
            acc += g * weights[j]
        out[i] = acc
    return out


def _unfold(sol: HittingSolution, A: SiteSet, grid_values: np.ndarray) -> np.ndarray:
    idx = sol.system.fold(A.sites())
    out = np.zeros(A.dims)
    vals = grid_values[tuple(idx.T)]
    out[tuple((A.sites() - np.asarray(A.anchor)).T)] = vals
    return out


def capacity(A: SiteSet, R: Optional[int] = None, method: str = "farfield", fold: bool = True,
             tol: float = 1e-10) -> CapacityEstimate:
    """Discrete capacity ``cap_{Z^d}(A)``.

    ``method="farfield"`` solves on one box with the self-consistent far-field
    condition, and reports the change against a box of half the margin as the
    error.  ``method="richardson"`` uses absorbing boxes of radii ``R`` and
    ``2R`` and extrapolates ``1/cap`` linearly in ``R^{2-d}``.
    """
    return equilibrium(A, R, tol, method=method, fold=fold)[1]


def _default_radius(A: SiteSet, factor: float = 1.5) -> int:
    idx = np.argwhere(A.bits)
    ext = int((idx.max(axis=0) - idx.min(axis=0)).max()) + 1
    return max(int(math.ceil(factor * (ext / 2 + 1))), ext // 2 + 4)


def equilibrium(A: SiteSet, R_out: Optional[int] = None, tol: float = 1e-10, method: str = "farfield",
                fold: bool = True, check_tol: Optional[float] = None):
    """Equilibrium measure ``e_A`` and capacity of ``A``.

    Returns ``(ScalarField on A, CapacityEstimate)``.  The weights come from the
    finest solve (the larger box for ``richardson``); the capacity is the
    extrapolated value with the extrapolation correction as its error.  The
    estimate is flagged when that correction exceeds ``check_tol`` (relative).
    """
    d = A.d
    R = _default_radius(A) if R_out is None else int(R_out)
    if method == "richardson":
        s1 = hitting_solution(A, R, "absorbing", fold, tol)
        s2 = hitting_solution(A, 2 * R, "absorbing", fold, tol)
        c1, c2 = s1.capacity, s2.capacity
        q = 2.0 ** (2 - d)
        inv = (1 / c2 - q / c1) / (1 - q)
        val = 1.0 / inv
        err = abs(val - c2) * 0.1 + abs(c2 - c1) * q ** 2
        fine = s2
        meta = {"radii": (R, 2 * R), "raw": (c1, c2), "boundary": "absorbing"}
        method_tag = "extrapolated"
        # weights rescaled so they sum to the extrapolated capacity
        scale = val / c2
    elif method == "farfield":
        s2 = hitting_solution(A, R, "farfield", fold, tol)
        R1 = max((R + _default_radius(A, 1.0)) // 2, _default_radius(A, 1.0))
        s1 = hitting_solution(A, R1, "farfield", fold, tol) if R1 < R else s2
        val = s2.capacity
        err = abs(s2.capacity - s1.capacity)
        fine = s2
        meta = {"radii": (R1, R), "raw": (s1.capacity, s2.capacity), "boundary": "farfield"}
        method_tag = "linear_solve"
        scale = 1.0
    else:
        raise ValueError(f"unknown method {method!r}")
    weights = _unfold(fine, A, fine.escape) * scale
    flagged = check_tol is not None and err > check_tol * val
    if np.any(weights[A.bits] < -1e-9):
        flagged = True
    field_ = ScalarField(A, np.clip(weights, 0.0, None))
    return field_, CapacityEstimate(float(val), float(err), method_tag, meta, bool(flagged))


# -- Dirichlet problems on general domains -------------------------------------------

@nb.njit(cache=True)
def _rb_sor(u, mask, omega, tol, maxit):
    """Red-black SOR for Δu = 0 on ``mask`` (3D arrays); returns (iterations, residual)."""
    nx, ny, nz = u.shape
    res = 0.0
    for it in range(maxit):
        for color in range(2):
            for i in range(1, nx - 1):
                for j in range(1, ny - 1):
                    k0 = 1 + ((i + j + 1 + color) & 1)
                    for k in range(k0, nz - 1, 2):
                        if mask[i, j, k]:
                            avg = (u[i - 1, j, k] + u[i + 1, j, k] + u[i, j - 1, k] + u[i, j + 1, k]
                                   + u[i, j, k - 1] + u[i, j, k + 1]) / 6.0
                            u[i, j, k] += omega * (avg - u[i, j, k])
        if it % 10 == 9 or it == maxit - 1:
            res = 0.0
            for i in range(1, nx - 1):
                for j in range(1, ny - 1):
                    for k in range(1, nz - 1):
                        if mask[i, j, k]:
                            r = abs((u[i - 1, j, k] + u[i + 1, j, k] + u[i, j - 1, k] + u[i, j + 1, k]
                                     + u[i, j, k - 1] + u[i, j, k + 1]) / 6.0 - u[i, j, k])
                            if r > res:
                                res = r
            if res <= tol:
                return it + 1, res
    return maxit, res


def exterior_boundary(D: SiteSet) -> SiteSet:
    """Sites outside ``D`` with a nearest neighbor in ``D``."""
    from scipy import ndimage
    from .lattice import Connectivity
    grown = ndimage.binary_dilation(D.bits, structure=Connectivity.NEAREST.structure(D.d))
    return D.with_bits(grown & ~D.bits)


def dirichlet_solve(domain: SiteSet, boundary: ScalarField, tol: float = 1e-10,
                    method: str = "auto", maxit: int = 100000) -> ScalarField:
    """Harmonic function on ``domain`` with the given values on its exterior boundary.

    The result lives on ``domain ∪ ∂domain`` over the boundary field's frame.
    ``method`` is ``"sor"`` (red-black relaxation, d = 3 only), ``"amg"`` or
    ``"auto"``.  Residual is the sup-norm of ``Δu`` on the domain.
    """
    if not boundary.domain.same_frame(domain):
        domain = domain.like(boundary.domain)
    if domain.distance_to_frame_edge() < 1:
        raise BoundsError("domain must stay one site away from the frame edge")
    dB = exterior_boundary(domain)
    if not dB.issubset(boundary.domain):
        raise ValueError("boundary data must cover the exterior boundary of the domain")
    u = np.where(dB.bits, boundary.values, 0.0)
    n = domain.count
    if method == "auto":
        method = "sor" if (domain.d == 3 and n <= 60000) else "amg"
    if method == "sor":
        if domain.d != 3:
            raise ValueError("relaxation kernel is three-dimensional")
        # start from the boundary mean to speed things up
        if dB.count:
            u[domain.bits] = boundary.values[dB.bits].mean()
        nmax = max(domain.dims)
        omega = 2.0 / (1.0 + math.sin(math.pi / nmax))
        its, res = _rb_sor(u, domain.bits.copy(), omega, tol, maxit)
        if res > tol:
            raise RuntimeError(f"relaxation did not reach tol={tol:g} (residual {res:.3e} after {its} sweeps)")
    elif method == "amg":
        u = _solve_on_frame(domain, u, tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    full = domain | dB
    res = np.abs(laplacian_array(u))[domain.bits].max() if n else 0.0
    if res > max(tol, 1e-12) * 10:
        raise RuntimeError(f"harmonic residual {res:.3e} above tolerance")
    return ScalarField(full, np.where(full.bits, u, 0.0))


def _solve_on_frame(domain: SiteSet, u: np.ndarray, tol: float) -> np.ndarray:
    d = domain.d
    shape = domain.dims
    unknown = domain.bits
    index = -np.ones(shape, dtype=np.int64)
    index[unknown] = np.arange(domain.count)
    pos_u = np.nonzero(unknown)
    rows, cols, vals = [], [], []
    rhs = np.zeros(domain.count)
    for ax in range(d):
        for s in (1, -1):
            pos = list(pos_u)
            pos[ax] = pos[ax] + s
            nb_idx = index[tuple(pos)]
            is_unk = nb_idx >= 0
            rows.append(np.nonzero(is_unk)[0])
            cols.append(nb_idx[is_unk])
            vals.append(-np.ones(int(is_unk.sum())))
            rhs[~is_unk] += u[tuple(p[~is_unk] for p in pos)]
    rows.append(np.arange(domain.count))
    cols.append(np.arange(domain.count))
    vals.append(np.full(domain.count, 2.0 * d))
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(domain.count, domain.count))
    x = _Solver(A).solve(rhs, tol=min(tol, 1e-12))
    out = u.copy()
    out[unknown] = x
    return out


# -- Green function -----------------------------------------------------------------------

def killed_green(dims: Sequence[int], x: Sequence[int]) -> np.ndarray:
    """Green function of the walk killed on leaving the box ``[0, dims)``, from ``x``.

    Solves ``(I - P) G(x, ·) = δ_x`` (symmetric in its arguments) by AMG-CG.
    """
    dims = tuple(int(n) for n in dims)
    d = len(dims)
    n = int(np.prod(dims))
    # operator on the whole box with zero exterior
    idx = np.arange(n).reshape(dims)
    rows, cols = [], []
    for ax in range(d):
        a = np.take(idx, range(0, dims[ax] - 1), axis=ax).ravel()
        b = np.take(idx, range(1, dims[ax]), axis=ax).ravel()
        rows += [a, b]
        cols += [b, a]
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    P = sp.csr_matrix((np.full(len(r), 1.0 / (2 * d)), (r, c)), shape=(n, n))
    L = sp.identity(n, format="csr") - P
    rhs = np.zeros(n)
    rhs[np.ravel_multi_index(tuple(int(v) for v in x), dims)] = 1.0
    if n <= 20000:
        from scipy.sparse.linalg import spsolve
        sol = spsolve(L.tocsc(), rhs)
    else:
        sol = _Solver(L * (2 * d)).solve(rhs * (2 * d), tol=1e-12)
    return sol.reshape(dims)


def green_solve(y: Sequence[int] = None, R: int = 24, d: int = 3, tol: float = 1e-11) -> GreenEstimate:
    """``g(0, y)`` from absorbing solves on boxes of radii ``R`` and ``2R``.

    The killed Green function satisfies ``g_R(0, y) ≈ g(0, y) - a R^{2-d}``;
    the two radii give the Richardson extrapolation and its error proxy.
    """
    y = (0,) * d if y is None else tuple(int(v) for v in y)
    vals = []
    for radius in (R, 2 * R):
        system = BoxSystem((0,) * d, radius, ("even",) * d)
        outer = system.outer_mask()
        unknown = ~outer
        Amat, _, index = _assemble(system, unknown, np.zeros(system.shape))
        b = np.zeros(Amat.shape[0])
        b[index[(0,) * d]] = 2.0 * d  # row weight at the origin is 1
        sol = np.zeros(system.shape)
        sol[unknown] = _Solver(Amat).solve(b, tol)
        j = system.fold(np.array([y]))[0]
        vals.append(float(sol[tuple(j)]))
    q = 2.0 ** (2 - d)
    val = (vals[1] - q * vals[0]) / (1 - q)
    err = abs(val - vals[1]) * 0.05 + 1e-9
    return GreenEstimate(val, err, "linear_solve", False, {"radii": (R, 2 * R), "raw": tuple(vals)})


def green_mc(y: Sequence[int] = None, R: int = 24, walks: int = 20000, seed: int = 0,
             d: int = 3) -> GreenEstimate:
    """``g(0, y)`` by Monte Carlo: visits to ``y`` before leaving ``B(0, R)``
    plus the expected visits after exit, ``E[g(X_τ, y)]``, from the asymptotic
    expansion (whose error is far below the statistical one for ``R ≥ 16``).
    """
    from .walks import DirectionStream, run_srw

    y = (0,) * d if y is None else tuple(int(v) for v in y)
    if max(abs(v) for v in y) >= R - 2:
        raise ValueError("target too close to the exit radius")
    stream = DirectionStream(seed, d)
    samples = np.empty(walks)
    yv = np.asarray(y)
    for i in range(walks):
        end, _, _, visits = run_srw(stream, (0,) * d, radius=R, keep=False, visit=y)
        samples[i] = visits + float(green_asymptotic(end - yv, d))
    val = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(walks))
    return GreenEstimate(val, se, "monte_carlo", False, {"radius": R, "walks": walks})


def green(x, y, cfg: Optional[dict] = None) -> GreenEstimate:
    """Estimate ``g(x, y)``; depends on ``y - x`` only.

    ``cfg`` keys: ``method`` (``"linear_solve"`` default or ``"monte_carlo"``),
    ``R``, ``walks``, ``seed``, ``target_stderr``.  When a Monte Carlo run
    cannot reach ``target_stderr`` the estimate is flagged.
    """
    cfg = dict(cfg or {})
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    d = len(x)
    if d < 3:
        raise ValueError("the walk is recurrent for d < 3")
    diff = tuple(int(v) for v in (y - x))
    method = cfg.get("method", "linear_solve")
    if method == "linear_solve":
        R = int(cfg.get("R", max(24, 3 * max(abs(v) for v in diff) + 8)))
        return green_solve(diff, R, d)
    if method == "monte_carlo":
        est = green_mc(diff, int(cfg.get("R", 24)), int(cfg.get("walks", 20000)), int(cfg.get("seed", 0)), d)
        target = cfg.get("target_stderr")
        if target is not None and est.stderr > target:
            warnings.warn("Monte Carlo Green estimate above the requested precision")
            return GreenEstimate(est.value, est.stderr, est.method, True, est.meta)
        return est
    raise ValueError(f"unknown method {method!r}")


def g00(d: int = 3) -> float:
    """Cached high-accuracy ``g(0, 0)`` from the linear-solve route."""
    if d not in _G00:
        _G00[d] = green_solve(None, 32, d).value
    return _G00[d]


_G00: dict = {}
