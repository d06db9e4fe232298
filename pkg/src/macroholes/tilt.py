"""Tilted measures for the lower bounds: profiles, entropies and the tilted walk.

Continuum capacities use the Brownian normalization ``G(x) = a_d |x|^{2-d}``
with ``a_d = Γ(d/2 - 1) / (2 π^{d/2})``, so ``cap(B_2(0, ρ)) = ρ^{d-2} / a_d``
(``2πρ`` in d = 3).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn

from .lattice import SiteSet, box, frame_box
from .potential import ScalarField, dirichlet_form, dirichlet_form_array, laplacian_array
from .rng import generator
from .walks import DirectionStream, StopReason, UniformStream, WalkPath, _Grid, mark_grid, run_srw, run_weighted


def brownian_green_constant(d: int) -> float:
    return gamma_fn(d / 2 - 1) / (2 * math.pi ** (d / 2))


def kappa(d: int) -> float:
    """``κ_d = cap(B_2(0, 1))``."""
    return 1.0 / brownian_green_constant(d)


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / gamma_fn(d / 2 + 1)


def condenser_capacity(rho: float, r: float, d: int = 3) -> float:
    """Capacity of ``B_2(0, ρ)`` relative to ``B_2(0, r)``: ``1 / (a_d (ρ^{2-d} - r^{2-d}))``."""
    if not 0 < rho < r:
        raise ValueError("need 0 < rho < r")
    return 1.0 / (brownian_green_constant(d) * (rho ** (2 - d) - r ** (2 - d)))


# -- radial profiles ------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialProfile:
    """Radial function on R^d given by a callable of ``|z|``.

    ``plateau`` is the radius up to which the profile equals 1 and ``support``
    the radius beyond which it vanishes.
    """

    fn: object = field(repr=False)
    plateau: float
    support: float
    d: int = 3
    label: str = ""
    condenser: tuple = ()

    def __call__(self, s):
        return self.fn(np.asarray(s, dtype=float))

    def on_lattice(self, N: int, margin: int = 2) -> ScalarField:
        """``x ↦ profile(|x|/N)`` on a box with ``margin`` zero layers."""
        R = int(math.ceil(self.support * N)) + margin
        fr = frame_box(R, self.d)
        rad = np.sqrt(sum(c.astype(float) ** 2 for c in fr.coordinates())) / N
        return ScalarField.on_frame(fr, self(rad))


def solve_equilibrium_profile(R_nu: float, delta: float, r: float, d: int = 3) -> RadialProfile:
    """Potential of the condenser ``(B_2(0, R_ν + 2δ), B_2(0, r))``.

    Equals 1 inside ``ρ = R_ν + 2δ``, 0 outside ``r`` and
    ``(s^{2-d} - r^{2-d}) / (ρ^{2-d} - r^{2-d})`` in between (the radial
    harmonic functions are ``a + b s^{2-d}`` in every dimension ``d ≥ 3``).
    """
    rho = R_nu + 2 * delta
    if not (R_nu > 0 and delta > 0 and rho < 1 < r):
        raise ValueError("need R_nu + 2 delta < 1 < r")
    return condenser_profile(rho, r, d)


def condenser_profile(rho: float, r: float, d: int = 3) -> RadialProfile:
    if not 0 < rho < r:
        raise ValueError("need 0 < rho < r")
    den = rho ** (2 - d) - r ** (2 - d)

    def h(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            v = (np.maximum(s, 1e-300) ** (2 - d) - r ** (2 - d)) / den
        return np.clip(np.where(s <= rho, 1.0, np.where(s >= r, 0.0, v)), 0.0, 1.0)

    return RadialProfile(h, rho, r, d, f"condenser({rho:g},{r:g})", (rho, r))


def bump(t, eta: float, d: int = 3):
    """Normalized C² bump ``c (1 - |w|²/η²)^3`` on ``B_2(0, η)`` as a function of ``|w|``."""
    t = np.asarray(t, dtype=float)
    # ∫_0^1 (1 - s²)^3 s^{d-1} ds · |S^{d-1}|
    sphere = 2 * math.pi ** (d / 2) / gamma_fn(d / 2)
    mass = sphere * integrate.quad(lambda s: (1 - s * s) ** 3 * s ** (d - 1), 0, 1)[0] * eta ** d
    return np.where(t < eta, (1 - (t / eta) ** 2) ** 3, 0.0) / mass


def mollify(h: RadialProfile, eta: float, delta: Optional[float] = None, n_table: int = 801,
            n_quad: int = 64) -> RadialProfile:
    """``h^η = h * φ^η`` for a radial ``h`` that is 1 near 0 and 0 far away.

    Only the shells ``|s - plateau| < η`` and ``|s - support| < η`` need
    quadrature: elsewhere the mean-value property of harmonic functions (and
    constancy) gives ``h^η = h``.  On each shell
    ``h^η(s) = ∫_0^η φ(t) |S^{d-1}| t^{d-1} M_t h(s) dt`` with ``M_t`` the
    spherical mean, computed by Gauss-Legendre in ``t`` (and in the polar
    angle when ``d > 3``) and tabulated.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if delta is not None and eta >= delta:
        raise ValueError("mollifier radius must be below delta")
    d = h.d
    sphere = 2 * math.pi ** (d / 2) / gamma_fn(d / 2)
    xt, wt = np.polynomial.legendre.leggauss(n_quad)
    t = 0.5 * eta * (xt + 1)
    wt = 0.5 * eta * wt * bump(t, eta, d) * sphere * t ** (d - 1)
    if d == 3:
        # M_t h(s) = (Q(s + t) - Q(|s - t|)) / (2 s t), Q(a) = ∫_0^a q h(q) dq
        qs = np.linspace(0.0, h.support + 2 * eta, 200001)
        Q = integrate.cumulative_trapezoid(qs * h(qs), qs, initial=0.0)

        def means(s):
            S, T = np.meshgrid(s, t, indexing="ij")
            return (np.interp(S + T, qs, Q) - np.interp(np.abs(S - T), qs, Q)) / (2 * S * T)
    else:
        xm, wm = np.polynomial.legendre.leggauss(4 * n_quad)
        wm = wm * (1 - xm * xm) ** ((d - 3) / 2)
        wm = wm / wm.sum()

        def means(s):
            S, T, MU = np.meshgrid(s, t, xm, indexing="ij")
            return h(np.sqrt(np.maximum(S * S + T * T - 2 * S * T * MU, 0.0))) @ wm

    shells = []
    for c in (h.plateau, h.support):
        grid = np.linspace(max(c - eta, eta / n_table), c + eta, n_table)
        shells.append((grid, means(grid) @ wt))

    def heta(s):
        s = np.asarray(s, dtype=float)
        out = h(s)
        for grid, vals in shells:
            m = (s >= grid[0]) & (s <= grid[-1])
            out = np.where(m, np.interp(s, grid, vals), out)
        return np.clip(out, 0.0, 1.0)

    return RadialProfile(heta, max(h.plateau - eta, 0.0), h.support + eta, d, f"{h.label}*phi({eta:g})",
                         h.condenser)


# -- tilt profiles ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TiltProfile:
    model: str
    params: dict
    h: RadialProfile
    f: ScalarField = field(repr=False)


def profile_ri(u: float, u_crit: float, eps: float, heta: RadialProfile, N: int) -> TiltProfile:
    """``f_N(x) = (sqrt((u** + ε)/u) - 1) h^η(x/N) + 1``."""
    if not 0 < u < u_crit:
        raise ValueError("need 0 < u < u**")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    amp = math.sqrt((u_crit + eps) / u)
    base = heta.on_lattice(N)
    vals = (amp - 1.0) * base.values + 1.0
    f = ScalarField(base.domain, vals)
    assert vals.min() >= 1.0 - 1e-12 and vals.max() <= amp + 1e-12
    return TiltProfile("RI", dict(u=u, u_crit=u_crit, eps=eps, N=N, amplitude=amp), heta, f)


def profile_gff(alpha: float, h_crit: float, eps: float, heta: RadialProfile, N: int) -> TiltProfile:
    """``f_N(x) = -h^η(x/N) (h** - α + ε)``."""
    if not alpha < h_crit:
        raise ValueError("need alpha < h**")
    gap = h_crit - alpha + eps
    base = heta.on_lattice(N)
    f = ScalarField(base.domain, -gap * base.values)
    return TiltProfile("GFF", dict(alpha=alpha, h_crit=h_crit, eps=eps, N=N, gap=gap), heta, f)


def profile_walk(heta: RadialProfile, N: int) -> ScalarField:
    """``h_N(x) = h^η(x/N)``, the profile driving the tilted walk."""
    return heta.on_lattice(N)


# -- entropies and bounds ---------------------------------------------------------------

@dataclass(frozen=True)
class EntropyReport:
    H: float
    normalized: float
    target: float
    gap: float
    label: str = ""

    def to_json(self):
        return {"H": self.H, "normalized": self.normalized, "target": self.target, "relative_gap": self.gap,
                "label": self.label}


def gff_entropy(f: ScalarField, N: int = 1, target: Optional[float] = None) -> EntropyReport:
    """``H(P̃ | P) = E(f, f) / 2`` for the shift of the field by ``f``."""
    H = 0.5 * dirichlet_form(f, f)
    norm = H / N ** (f.d - 2)
    gap = abs(norm - target) / target if target else float("nan")
    return EntropyReport(H, norm, float("nan") if target is None else target, gap, "gff")


def gff_target(gap: float, rho: float, r: float, d: int = 3) -> float:
    """``(1/2d) gap^2 cap_condenser(ρ, r)``."""
    return gap * gap * condenser_capacity(rho, r, d) / (2 * d)


def entropy_lower_bound(p_tilde: float, H: float) -> float:
    """``P[A] >= p̃ exp(-(H + 1/e) / p̃)`` for an event of tilted probability ``p̃``."""
    if not 0 < p_tilde <= 1:
        raise ValueError("p_tilde must lie in (0, 1]")
    if H < 0:
        raise ValueError("relative entropy is non-negative")
    return p_tilde * math.exp(-(H + 1.0 / math.e) / p_tilde)


def log_entropy_lower_bound(p_tilde: float, H: float) -> float:
    """Natural log of :func:`entropy_lower_bound` (usable when the bound underflows)."""
    if not 0 < p_tilde <= 1:
        raise ValueError("p_tilde must lie in (0, 1]")
    return math.log(p_tilde) - (H + 1.0 / math.e) / p_tilde


def gamma_prefactor(gamma: float, u: float, eps_t: float, u_bar: float) -> float:
    """``Γ = (√γ - √u / (1 - ε̃(√(ū/u) - 1))) (√γ - √u)``."""
    if not 0 < u <= gamma < u_bar:
        raise ValueError("need 0 < u <= gamma < u_bar")
    c = eps_t * (math.sqrt(u_bar / u) - 1)
    if not (eps_t >= 0 and c < 1):
        raise ValueError("need eps_t (sqrt(u_bar/u) - 1) < 1")
    return (math.sqrt(gamma) - math.sqrt(u) / (1 - c)) * (math.sqrt(gamma) - math.sqrt(u))


def rate_function(model: str, level: float, crit: float, cap_ball: float, d: int = 3) -> float:
    """Closed-form rates: RI ``(1/d)(√crit - √u)^2 cap``, SRW ``(1/d) crit cap``,
    GFF ``(1/2d)(crit - α)^2 cap``.

    ``crit`` is ``ū``/``u**`` (RI, SRW) or ``h̄``/``h**`` (GFF), supplied by the user.
    """
    model = model.upper()
    if model == "RI":
        if not 0 < level <= crit:
            raise ValueError("need 0 < u <= critical level")
        return (math.sqrt(crit) - math.sqrt(level)) ** 2 * cap_ball / d
    if model == "SRW":
        if crit < 0:
            raise ValueError("critical level must be non-negative")
        return crit * cap_ball / d
    if model == "GFF":
        if level > crit:
            raise ValueError("need alpha <= critical level")
        return (crit - level) ** 2 * cap_ball / (2 * d)
    raise ValueError(f"unknown model {model!r}")


def ri_entropy_surrogate(profile: TiltProfile) -> float:
    """``u E(f_N, f_N)``, the tilt cost reported in place of the RI relative entropy."""
    # f - 1 is compactly supported inside the frame; f itself is 1 on the edge
    return profile.params["u"] * dirichlet_form_array(profile.f.values, profile.f.values)


def walk_entropy_surrogate(h_N: ScalarField, u_crit: float, eps: float) -> float:
    """``(u** + ε) E(h_N, h_N)``: entropy of the tilted walk run from its stationary law."""
    return (u_crit + eps) * dirichlet_form(h_N, h_N)


# -- tilt functional ----------------------------------------------------------------------

def tilt_functional_ri(soup, f: ScalarField, mode: str = "expectation", seed=None) -> float:
    """``Σ_i ∫ -(Δf/f)(X_s) ds`` over the soup's paths.

    ``expectation`` weights each visit by the mean holding time 1; ``sampled``
    draws unit exponential holding times.
    """
    lap = laplacian_array(np.where(f.domain.bits, f.values, 1.0))
    vals = np.where(f.domain.bits, f.values, 1.0)
    ratio = np.zeros_like(vals)
    inner = vals > 0
    ratio[inner] = -lap[inner] / vals[inner]
    # edges of the frame must be where f is flat
    rng = generator(seed) if mode == "sampled" else None
    total = 0.0
    for p in soup.paths if hasattr(soup, "paths") else soup:
        pos = p.positions()
        loc = pos - np.asarray(f.domain.anchor)
        ok = np.all((loc >= 1) & (loc < np.asarray(f.domain.dims) - 1), axis=1)
        outside = ~ok
        if outside.any():
            # f must be 1 (and flat) where the path leaves the frame interior
            edge_ok = np.all((loc >= 0) & (loc < np.asarray(f.domain.dims)), axis=1) & outside
            if edge_ok.any() and np.any(np.abs(vals[tuple(loc[edge_ok].T)] - 1.0) > 1e-12):
                raise ValueError("path leaves the profile's domain where f != 1")
        w = np.zeros(len(pos))
        w[ok] = ratio[tuple(loc[ok].T)]
        if mode == "expectation":
            total += float(w.sum())
        elif mode == "sampled":
            total += float((w * rng.exponential(1.0, len(w))).sum())
        else:
            raise ValueError(f"unknown mode {mode!r}")
    return total


# -- tilted walk ------------------------------------------------------------------------------

@dataclass(eq=False)
class TiltedWalkSample:
    trace: SiteSet
    tilted_steps: int
    end_of_tilt: tuple
    log_likelihood: float
    paths: list = field(repr=False, default_factory=list)
    flagged: bool = False


def tilted_walk_sample(h_N: ScalarField, T_N: float, N: int, seed, stop_radius_factor: float = 4.0,
                       keep_paths: bool = False, max_returns: int = 10000) -> TiltedWalkSample:
    """Walk with generator ``(1/2d) Σ_y (h(y)/h(x)) (g(y) - g(x))`` up to time ``T_N``,
    then a simple random walk; returns the trace in ``B(0, N)``.

    The log-likelihood ratio against the unit-rate simple walk,
    ``log(h(X_T)/h(0)) - ∫_0^T (Δh/h)(X_s) ds``, is returned with the
    holding times replaced by their conditional means (its expectation is the
    relative entropy of the tilted walk).
    """
    from .interlacements import entrance_table

    d = h_N.d
    if T_N < 0:
        raise ValueError("T_N must be non-negative")
    origin = (0,) * d
    if origin not in h_N.domain or h_N(origin) <= 0:
        raise ValueError("h_N must be positive at the origin")
    rng = generator(seed)
    window = box(origin, N)
    grid, marks = mark_grid(window)
    vals = np.where(h_N.domain.bits, h_N.values, 0.0)
    # outside the frame of h_N the weight is 0 as well: pad one layer
    wgrid = _Grid.of(tuple(a - 1 for a in h_N.domain.anchor), np.pad(vals, 1))
    ustream = UniformStream(rng)
    paths = []
    loglik = 0.0
    tilted_steps = 0
    pos = np.array(origin, dtype=np.int64)
    if T_N > 0:
        end, steps, reason, t_last = run_weighted(ustream, origin, wgrid, t_end=float(T_N), mark=grid, keep=True)
        tilted_steps = len(steps)
        wp = WalkPath(origin, steps, reason)
        positions = wp.positions()
        lap = laplacian_array(np.pad(vals, 1))
        loc = positions - np.asarray(wgrid.lo)
        hv = np.pad(vals, 1)[tuple(loc.T)]
        if np.any(hv <= 0):
            raise RuntimeError("tilted walk reached a site where h_N vanishes")
        ratio = lap[tuple(loc.T)] / hv
        rate = (lap[tuple(loc.T)] + hv) / hv  # (1/2d) Σ h(y) / h(x)
        holds = 1.0 / rate
        holds[-1] = T_N - t_last
        loglik = math.log(hv[-1] / hv[0]) - float(np.sum(ratio * holds))
        if keep_paths:
            paths.append(wp)
        pos = end
    table = entrance_table(window)
    stream = DirectionStream(rng, d)
    R = int(math.ceil(stop_radius_factor * N))
    flagged = True
    for _ in range(max_returns + 1):
        end, steps, reason, _ = run_srw(stream, pos, radius=R, mark=grid, keep=keep_paths)
        if keep_paths:
            paths.append(WalkPath(tuple(int(v) for v in pos), steps, reason))
        j = table.draw_return(end, rng.random(), rng.random())
        if j < 0:
            flagged = False
            break
        pos = table.sites[j]
    trace = window.with_bits(marks.astype(bool))
    return TiltedWalkSample(trace, tilted_steps, tuple(int(v) for v in pos), loglik, paths, flagged)


def walk_time_horizon(h_N: ScalarField, u_crit: float, eps: float) -> float:
    """``T_N = (u** + ε) Σ_y h_N(y)^2``."""
    return (u_crit + eps) * float(np.sum(h_N.values ** 2))


def gamma_N_boundary(R_nu: float, delta: float, N: int, d: int = 3) -> SiteSet:
    """Exterior boundary of the sites within sup-distance 1 of ``B_2(0, (R_ν + δ/2) N)``."""
    from scipy import ndimage
    from .lattice import Connectivity, ball_euclidean, dilate

    rad = (R_nu + delta / 2) * N
    R = int(math.ceil(rad)) + 3
    fr = frame_box(R, d)
    ball = ball_euclidean(rad, d, frame=fr)
    blow = dilate(ball, 1)
    grown = ndimage.binary_dilation(blow.bits, structure=Connectivity.NEAREST.structure(d))
    return fr.with_bits(grown & ~blow.bits)


# -- reports -------------------------------------------------------------------------------

def rate_limit_report(model: str, Ns: Sequence[int], heta: RadialProfile, params: dict) -> list[dict]:
    """Normalized tilt cost against ``N`` with the closed-form finite-parameter target.

    ``params``: GFF ``alpha, h_crit, eps``; RI ``u, u_crit, eps``; SRW
    ``u_crit, eps``.  The target uses the capacity of the condenser the
    (unmollified) profile solves.
    """
    d = heta.d
    rows = []
    capc = condenser_capacity(*heta.condenser, d)
    for N in Ns:
        if model.upper() == "GFF":
            prof = profile_gff(params["alpha"], params["h_crit"], params["eps"], heta, N)
            cost = 0.5 * dirichlet_form(prof.f, prof.f)
            target = prof.params["gap"] ** 2 * capc / (2 * d)
        elif model.upper() == "RI":
            prof = profile_ri(params["u"], params["u_crit"], params["eps"], heta, N)
            cost = ri_entropy_surrogate(prof)
            target = (math.sqrt(params["u_crit"] + params["eps"]) - math.sqrt(params["u"])) ** 2 * capc / d
        elif model.upper() == "SRW":
            hN = profile_walk(heta, N)
            cost = walk_entropy_surrogate(hN, params["u_crit"], params["eps"])
            target = (params["u_crit"] + params["eps"]) * capc / d
        else:
            raise ValueError(model)
        norm = cost / N ** (d - 2)
        rows.append({"N": N, "cost": cost, "normalized": norm, "target": target,
                     "gap": abs(norm - target) / target if target else 0.0})
    if len(rows) >= 2:
        a, b = rows[-2], rows[-1]
        # Richardson in 1/N
        ext = (b["N"] * b["normalized"] - a["N"] * a["normalized"]) / (b["N"] - a["N"])
        for r in rows:
            r["extrapolated"] = ext
    return rows



def disconnection_event(medium: SiteSet, gamma: SiteSet, level: int) -> bool:
    """No site of ``gamma`` is joined to ``S_level`` by a nearest-neighbor path in ``medium``.

    A path reaching sup-norm ``level`` first meets ``S_level`` inside
    ``B(0, level)``, so only the medium there matters.
    """
    from .lattice import clip, label_components, sphere

    d = medium.d
    inside = clip(medium, box((0,) * d, level))
    seeds = sphere(level, d, frame=inside) & inside
    if not seeds:
        return True
    lab = label_components(inside)
    hit = np.unique(lab.labels[seeds.bits])
    hit = hit[hit > 0]
    g = clip(gamma, inside)
    return not np.isin(lab.labels[g.bits], hit).any()
