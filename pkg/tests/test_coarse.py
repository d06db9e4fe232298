import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from macroholes import coarse
from macroholes.continuum import voxelize
from macroholes.lattice import BoundsError, SiteSet, box, frame_box

from oracles import bfs_component


def desk_scales(N=24, **kw):
    return coarse.make_scales(N, **dict(dict(L0=1, Lhat0=3, spacing=1, Ltilde0=10), **kw))


# -- scales ---------------------------------------------------------------------------------

def test_literal_scales():
    s = coarse.make_scales(10 ** 4, gamma=0.01)
    assert s.L0 == math.floor(math.sqrt(1e4 * math.log(1e4) / 0.01)) == 3034
    assert s.spacing == 1000 and s.Lhat0 == 300000 and s.delta_radius == 2000
    assert s.Ltilde0 == 2 * (300000 + 3034 + 1) and s.literal


def test_scale_validation():
    with pytest.raises(ValueError):
        coarse.make_scales(100, K=50)
    with pytest.raises(ValueError):
        coarse.make_scales(100, gamma=1.5)
    with pytest.raises(ValueError, match="thickening"):
        coarse.make_scales(24, L0=1, Lhat0=3, spacing=1, Ltilde0=3)
    with pytest.raises(ValueError):
        coarse.make_scales(24, L0=3, Lhat0=3, spacing=1)
    s = desk_scales()
    assert not s.literal and s.delta_radius == 2


def test_boxes():
    s = desk_scales(L0=2, Lhat0=5)
    z = (4, 0, -2)
    assert s.box_B(z).count == 8 and s.box_B(z).anchor == z
    D = s.box_D(z)
    assert D.anchor == (-2, -6, -8) and D.dims == (14,) * 3
    U = s.box_U(z)
    assert U.dims == (2 * 100 * 2 - 2,) * 3 and U.anchor[0] == 4 - 200 + 1


# -- labels and U^1 -------------------------------------------------------------------------

def test_certified_labels_without_cluster():
    s = desk_scales(N=6)
    lab = coarse.certified_labels(SiteSet.empty((0, 0, 0), (1, 1, 1)), 6, s, 9)
    inside = np.all(np.abs(lab.origins()) <= 6, axis=1)
    assert not lab.good.ravel()[inside].any() and lab.good.ravel()[~inside].all()


def _labels(good, L0=1):
    R = (good.shape[0] - 1) // 2
    return coarse.BoxLabels((-R,) * 3, good, L0)


def test_u1_all_good_and_all_bad():
    s = desk_scales(N=3)
    full = coarse.u1_region(_labels(np.ones((17, 17, 17), bool)), 3, s)
    assert full.count == 17 ** 3
    none = coarse.u1_region(_labels(np.zeros((17, 17, 17), bool)), 3, s)
    assert none.count == 17 ** 3 - 13 ** 3  # only the boxes beyond B(0, 6)


@settings(max_examples=25)
@given(st.integers(0, 2 ** 31), st.floats(0.3, 0.8))
def test_u1_matches_bfs(seed, p):
    good = np.random.default_rng(seed).random((17, 17, 17)) < p
    got = coarse.u1_region(_labels(good), 3, desk_scales(N=3))
    idx = np.abs(np.indices(good.shape) - 8).max(axis=0)
    seeds = idx > 6
    want = bfs_component(good & ~seeds, seeds)
    assert np.array_equal(got.bits, want)


def test_u1_requires_outside_boxes():
    with pytest.raises(ValueError):
        coarse.u1_region(_labels(np.ones((5, 5, 5), bool)), 3, desk_scales(N=3))


# -- density profile ------------------------------------------------------------------------

@given(st.integers(0, 2 ** 31), st.integers(-2, 2), st.integers(0, 3))
def test_window_sum_matches_brute_force(seed, lo, width):
    a = np.random.default_rng(seed).random((6, 5, 4)) < 0.5
    hi = lo + width
    got = coarse._window_sum(a, lo, hi)
    for x in np.ndindex(*a.shape):
        sl = tuple(slice(max(0, c + lo), max(0, c + hi + 1)) for c in x)
        assert got[x] == a[sl].sum()


def test_density_extremes_and_pointwise():
    fr = frame_box(10, 3)
    full = coarse.density_field(fr.with_bits(np.ones(fr.dims, bool)), 3)
    assert np.all(full.sigma() == 1)
    empty = coarse.density_field(fr.with_bits(np.zeros(fr.dims, bool)), 3)
    assert np.all(empty.sigma() == 0)
    rng = np.random.default_rng(1)
    U1 = fr.with_bits(rng.random(fr.dims) < 0.4)
    prof = coarse.density_field(U1, 3)
    for x in [(0, 0, 0), (7, -7, 2), (-5, 3, 6)]:
        assert prof.at(x) == pytest.approx(coarse.density_profile(U1, x, 3))
    with pytest.raises(BoundsError):
        prof.at((9, 0, 0))
    with pytest.raises(BoundsError):
        coarse.density_profile(U1, (9, 0, 0), 3)


@given(st.integers(0, 2 ** 31), st.floats(0.05, 0.95), st.integers(1, 4))
def test_density_is_lipschitz(seed, p, Lh):
    fr = frame_box(2 * Lh + 4, 3)
    U1 = fr.with_bits(np.random.default_rng(seed).random(fr.dims) < p)
    assert coarse.lipschitz_violations(coarse.density_field(U1, Lh)) == 0


def test_outer_and_hole_checks():
    fr = frame_box(20, 3)
    U1 = fr.with_bits(np.ones(fr.dims, bool)) - box((0, 0, 0), 4, frame=fr)
    prof = coarse.density_field(U1, 2)
    assert coarse.outer_violations(prof, 2, 1) == 0
    assert coarse.hole_zero_violations(prof, box((0, 0, 0), 1), 1) == 0
    assert coarse.hole_zero_violations(prof, box((0, 0, 0), 1), 3) > 0
    bad = fr.with_bits(np.zeros(fr.dims, bool))
    assert coarse.outer_violations(coarse.density_field(bad, 2), 2, 1) > 0


# -- interface, segmentation and insulation -------------------------------------------------

def test_greedy_spacing():
    pts = np.random.default_rng(0).integers(-20, 20, (300, 3))
    kept = coarse.greedy_spaced(pts, 6)
    for i in range(len(kept)):
        others = np.delete(kept, i, axis=0)
        assert np.abs(others - kept[i]).max(axis=1).min() > 6
    # maximal: every point is within 6 of a kept one
    assert np.all(np.abs(pts[:, None] - kept[None]).max(axis=2).min(axis=1) <= 6)


def _cavity(m=8, R=20):
    fr = frame_box(R, 3)
    return fr.with_bits(np.ones(fr.dims, bool)) - box((0, 0, 0), m, frame=fr)


def test_interface_around_a_cavity():
    s = desk_scales(N=8)
    seg = coarse.interface_and_segmentation(_cavity(), s)
    r = np.abs(seg.S_hat).max(axis=1)
    assert len(seg.S_hat) and r.min() >= 8 - 3 and r.max() <= 8 + 3
    assert seg.U0.contains_points(np.zeros((1, 3)))[0]
    assert seg.A.issubset(seg.U0)
    assert seg.A.volume > 0
    assert seg.Sigma.count > 0


def test_insulation_check():
    s = desk_scales(N=8, Ltilde0=4)
    seg = coarse.interface_and_segmentation(_cavity(), s)
    assert coarse.insulation_check(seg, None, 8, 4)
    assert coarse.insulation_check(seg, box((0, 0, 0), 1), 8, 4)
    assert not coarse.insulation_check(seg, box((0, 0, 0), 6), 8, 4)
    assert not coarse.insulation_check(seg, SiteSet.from_sites([(15, 0, 0)], (15, 0, 0), (1, 1, 1)), 8, 4)
    fr = frame_box(20, 3)
    flat = coarse.interface_and_segmentation(fr.with_bits(np.ones(fr.dims, bool)), s)
    assert len(flat.S_hat) == 0
    assert not coarse.insulation_check(flat, box((0, 0, 0), 0), 8, 4)


def _walled_medium(N=24, wall=(20, 21)):
    # vacant everywhere except a box-shaped wall that cuts the center off the boundary
    win = box((0, 0, 0), N)
    r = np.abs(np.indices(win.dims) - N).max(axis=0)
    return win.with_bits((r < wall[0]) | (r > wall[1]))


def test_pipeline_on_a_walled_hole():
    s = desk_scales()
    rep = coarse.run_pipeline(_walled_medium(), 24, s, 0.25)
    assert rep.hole_event and rep.hole_size == 23 ** 3
    assert rep.determinism_ok and rep.shape_ok
    assert rep.nu <= rep.volume_F <= rep.volume_A


def test_pipeline_without_hole():
    win = box((0, 0, 0), 24)
    rep = coarse.run_pipeline(win, 24, desk_scales(), 0.25)
    assert not rep.hole_event and rep.hole_size == 0
    assert rep.determinism_ok and rep.shape_ok is None


# -- dyadic densities and the shape class ----------------------------------------------------

def test_dyadic_density():
    U0 = voxelize(lambda *x: x[0] <= 0, 16, [-1, -1, -1], [0, 1, 1])
    assert coarse.dyadic_density(U0, (0, 0, 0), 2) == pytest.approx(0.5)
    assert coarse.dyadic_density(U0, (-0.5, 0, 0), 3) == pytest.approx(0.0)
    assert coarse.dyadic_density(U0, (0.5, 0, 0), 3) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        coarse.dyadic_density(U0, (0, 0, 0), 6)


def test_class_membership():
    U0 = coarse.ball_shape(0.45, 16)
    assert coarse.class_membership(U0, coarse.ball_shape(0.2, 16), 2).ok
    rep = coarse.class_membership(U0, coarse.ball_shape(0.6, 16), 2)
    assert not rep.ok and rep.witness[2] > 0.5
    with pytest.raises(ValueError):
        coarse.class_membership(U0, U0, 6)


# -- porous interfaces and solidification -----------------------------------------------------

def test_porous_full_shell_passes_and_empty_fails():
    U0 = coarse.ball_shape(0.3, 16)
    shell = coarse.perforated_shell(0.3, 0.125, None, 16)
    rep = coarse.porous_membership(shell, U0, 0.25, 0.3, walkers=100, refine=4, mesh=6)
    assert rep.status == "pass" and rep.min_estimate > 0.5
    none = coarse.porous_membership(voxelize(lambda *x: x[0] > 5, 16, [0] * 3, [0.1] * 3), U0, 0.25, 0.3,
                                    walkers=100, refine=4, mesh=6)
    assert none.status == "fail"
    with pytest.raises(ValueError):
        coarse.porous_membership(shell, U0, 0.25, 0.3, refine=3)


def test_hit_probability_matches_absorbing_solve():
    shell = coarse.perforated_shell(0.3, 0.125, 0.125, 16)
    z = coarse.boundary_mesh(coarse.ball_shape(0.3, 16), 5)[2]
    n = 600
    k, _ = coarse.hit_probability(shell, z, 0.25, 4, n, seed=3)
    p = coarse.absorbing_solve(shell, z, 0.25, 4)
    assert abs(k / n - p) < 3 * math.sqrt(p * (1 - p) / n) + 1e-9


def test_full_shell_capacity_dominates_the_ball():
    A = coarse.ball_shape(0.4, 16)
    S = coarse.perforated_shell(0.4, 0.0625, None, 16)
    ratio = coarse.desk_capacity(S, 16) / coarse.desk_capacity(A, 16)
    # a full shell has the capacity of the solid ball it bounds
    assert ratio >= 1 - 0.05
    assert ratio == pytest.approx(0.4625 / 0.4, rel=0.05)
