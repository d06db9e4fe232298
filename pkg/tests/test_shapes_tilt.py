import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_bvp

from macroholes import shapes, tilt
from macroholes.continuum import ContinuumShape
from macroholes.lattice import SiteSet
from macroholes.potential import laplacian_array

from oracles import brute_symdiff

NU = 4 * math.pi / 3 / 8

pytestmark = pytest.mark.filterwarnings("ignore::macroholes.shapes.CoarseResolutionWarning")


def _voxel_shape(bits, res=4, anchor=(0, 0, 0)):
    return ContinuumShape(res, SiteSet(anchor, np.asarray(bits, dtype=bool)), None, "random")


# -- Fraenkel-type distances -----------------------------------------------------------------

def test_translate_distance_matches_brute_force():
    rng = np.random.default_rng(2024)
    for i in range(20):
        a = rng.random(tuple(rng.integers(2, 5, 3))) < 0.55
        b = rng.random(tuple(rng.integers(2, 5, 3))) < 0.55
        if not a.any() or not b.any():
            a[0, 0, 0] = b[0, 0, 0] = True
        E, F = _voxel_shape(a), _voxel_shape(b, anchor=tuple(rng.integers(-3, 3, 3)))
        res = shapes.best_translate(E, F)
        assert res.integer_value * 4 ** 3 == pytest.approx(brute_symdiff(a, b), abs=1e-9)
        assert res.value <= res.integer_value + 1e-12


@given(st.integers(-5, 5), st.integers(-5, 5), st.integers(-5, 5))
def test_translate_distance_of_a_translate_is_zero(x, y, z):
    E = shapes.ellipsoid((2, 1, 1), NU, 8)
    assert shapes.symdiff_min_translate(E, E.translated((x, y, z))) == pytest.approx(0, abs=1e-12)


def test_fraenkel_values():
    assert shapes.fraenkel(shapes.ball_from_volume(NU, 16)) <= 2 * shapes.fraenkel_discretization_bound(
        shapes.ball_from_volume(NU, 16)) + 1e-3
    # Monte Carlo oracle for the unit cube against the ball of volume 1
    rng = np.random.default_rng(0)
    R = (3 / (4 * math.pi)) ** (1 / 3)
    p = rng.uniform(-R, R, (10 ** 6, 3))
    both = ((p ** 2).sum(1) <= R * R) & (np.abs(p) <= 0.5).all(1)
    exact = 2 * (1 - both.mean() * (2 * R) ** 3)
    lam_cube = shapes.fraenkel(shapes.cube_from_volume(NU, 32))
    assert lam_cube == pytest.approx(exact, abs=0.01)
    assert shapes.fraenkel(shapes.dumbbell(NU, 16)) > lam_cube


def test_fraenkel_of_empty_shape_raises():
    with pytest.raises(ValueError):
        shapes.fraenkel(_voxel_shape(np.zeros((2, 2, 2))))


# -- capacities ------------------------------------------------------------------------------

def test_ball_closed_form():
    assert shapes.ball_capacity(4 * math.pi / 3) == pytest.approx(2 * math.pi)
    assert shapes.radius_of_volume(4 * math.pi / 3) == pytest.approx(1.0)
    assert shapes.ball_capacity(8 * 4 * math.pi / 3) == pytest.approx(4 * math.pi)


def _spheroid_capacity(axes, nu):
    s = (nu / (4 * math.pi / 3 * np.prod(axes))) ** (1 / 3)
    a, b, c = sorted((s * x for x in axes), reverse=True)
    if a > b:  # prolate
        e = math.sqrt(a * a - c * c) / math.acosh(a / c)
    else:  # oblate
        e = math.sqrt(a * a - c * c) / math.acos(c / a)
    return 2 * math.pi * e


@pytest.mark.parametrize("axes", [(2, 1, 1), (2, 2, 1)])
def test_spheroid_capacity_matches_closed_form(axes):
    est = shapes.continuum_capacity(shapes.ellipsoid(axes, NU, 16), 16)
    ref = _spheroid_capacity(axes, NU)
    assert abs(est.value - ref) < max(3 * est.stderr, 0.01 * ref)


def test_coercivity_hypothesis_branches():
    B = shapes.ball_from_volume(NU, 8)
    out = shapes.coercivity_check(B, B.volume, 0.5, 16)
    assert out["hypothesis"] is False and out["margin"] is None
    with pytest.raises(ValueError):
        shapes.coercivity_check(B, 2 * B.volume, 0.1)


def test_rate_function_closed_forms():
    cap = shapes.ball_capacity(NU)
    assert tilt.rate_function("RI", 1.0, 4.0, cap) == pytest.approx(cap / 3)
    assert tilt.rate_function("SRW", 0.0, 4.0, cap) == pytest.approx(4 * cap / 3)
    assert tilt.rate_function("GFF", -1.0, 1.0, cap) == pytest.approx(4 * cap / 6)


# -- radial profiles and tilts ---------------------------------------------------------------

def test_constants():
    assert tilt.kappa(3) == pytest.approx(2 * math.pi)
    assert tilt.unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)
    assert tilt.unit_ball_volume(2) == pytest.approx(math.pi)


@pytest.mark.parametrize("rho,r", [(0.5, 2.0), (0.8, 1.2), (0.3, 5.0)])
def test_condenser_capacity_matches_radial_ode(rho, r):
    # u'' + (2/s) u' = 0 with u(rho) = 1, u(r) = 0; capacity = -(|S^2| / 2) s^2 u'(s)
    s = np.linspace(rho, r, 50)
    sol = solve_bvp(lambda s, y: np.vstack([y[1], -2 * y[1] / s]), lambda a, b: np.array([a[0] - 1, b[0]]),
                    s, np.vstack([1 - (s - rho) / (r - rho), np.full_like(s, -1 / (r - rho))]), tol=1e-8, max_nodes=10 ** 5)
    assert sol.success
    mid = 0.5 * (rho + r)
    flux = -2 * math.pi * mid ** 2 * sol.sol(mid)[1]
    assert tilt.condenser_capacity(rho, r) == pytest.approx(flux, rel=1e-5)
    h = tilt.condenser_profile(rho, r)
    assert np.allclose(h(s), sol.sol(s)[0], atol=1e-6)


def test_condenser_validation():
    with pytest.raises(ValueError):
        tilt.condenser_capacity(2.0, 1.0)
    with pytest.raises(ValueError):
        tilt.solve_equilibrium_profile(0.5, 0.3, 1.2)


def test_bump_has_unit_mass():
    from scipy.integrate import quad
    eta = 0.3
    m = quad(lambda t: float(tilt.bump(t, eta)) * 4 * math.pi * t * t, 0, eta)[0]
    assert m == pytest.approx(1.0, rel=1e-8)


def test_mollified_profile():
    h = tilt.solve_equilibrium_profile(0.4, 0.2, 1.2)
    he = tilt.mollify(h, 0.1, 0.2)
    s = np.linspace(0, 1.5, 301)
    v = he(s)
    assert np.all((v >= 0) & (v <= 1))
    assert np.all(np.diff(v) <= 1e-9)
    far = (np.abs(s - h.plateau) > 0.1) & (np.abs(s - h.support) > 0.1)
    assert np.allclose(v[far], h(s[far]), atol=1e-6)
    assert he(0.0) == 1.0 and he(1.35) == 0.0


def test_profiles_validate_levels():
    he = tilt.mollify(tilt.solve_equilibrium_profile(0.4, 0.2, 1.2), 0.1, 0.2)
    with pytest.raises(ValueError):
        tilt.profile_ri(2.0, 1.0, 0.5, he, 8)
    with pytest.raises(ValueError):
        tilt.profile_gff(1.0, 0.5, 0.5, he, 8)
    p = tilt.profile_ri(0.5, 8.0, 2.0, he, 8)
    assert p.f.values.max() == pytest.approx(math.sqrt(10 / 0.5))
    assert p.f.values.min() == pytest.approx(1.0)


def test_gff_entropy_is_half_the_dirichlet_form():
    # -Σ f Δf is an independent route to the Dirichlet form (f vanishes at the frame edge)
    he = tilt.mollify(tilt.solve_equilibrium_profile(0.4, 0.2, 1.2), 0.1, 0.2)
    f = tilt.profile_gff(-1.0, 1.0, 0.5, he, 6).f
    rep = tilt.gff_entropy(f, 6, tilt.gff_target(2.5, 0.8, 1.2))
    H = -0.5 * float((f.values * laplacian_array(f.values)).sum())
    assert rep.H == pytest.approx(H, rel=1e-10)
    assert rep.normalized == pytest.approx(rep.H / 6)


def test_gff_target_value():
    assert tilt.gff_target(1.0, 0.5, 2.0) == pytest.approx(2 * math.pi * 0.5 * 2 / 1.5 / 6)


@given(st.floats(0.01, 1.0), st.floats(0.0, 50.0))
def test_entropy_bound(p, H):
    b = tilt.entropy_lower_bound(p, H)
    assert 0 <= b <= p
    if b > 0:
        assert math.log(b) == pytest.approx(tilt.log_entropy_lower_bound(p, H), abs=1e-9)
    assert tilt.entropy_lower_bound(p, H + 1) <= b


def test_entropy_bound_validation():
    with pytest.raises(ValueError):
        tilt.entropy_lower_bound(0.0, 1.0)
    with pytest.raises(ValueError):
        tilt.entropy_lower_bound(0.5, -1.0)


def test_gamma_prefactor():
    assert tilt.gamma_prefactor(4.0, 1.0, 0.0, 9.0) == pytest.approx(1.0)
    assert tilt.gamma_prefactor(4.0, 1.0, 0.1, 9.0) < 1.0
    with pytest.raises(ValueError):
        tilt.gamma_prefactor(0.5, 1.0, 0.1, 9.0)
