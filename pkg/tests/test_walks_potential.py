import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.sparse import identity, lil_matrix
from scipy.sparse.linalg import spsolve

from macroholes.lattice import SiteSet, box, frame_box
from macroholes.potential import (ScalarField, capacity, dirichlet_form, dirichlet_solve, discrete_laplacian,
                                  equilibrium, green, green_asymptotic, green_mc, green_solve, g00)
from macroholes.walks import StopReason, StopRule, WalkPath, excursion_count, sample_path


# -- walks -----------------------------------------------------------------------------------

def test_radius_one_exits_in_one_step():
    for s in range(20):
        p = sample_path((0, 0, 0), StopRule(radius=1), s)
        assert len(p) == 1 and p.stop_reason is StopReason.EXITED_RADIUS


def test_same_seed_same_path():
    a = sample_path((0, 0, 0), StopRule(radius=6), 11)
    b = sample_path((0, 0, 0), StopRule(radius=6), 11)
    assert np.array_equal(a.steps, b.steps)


def test_budget_reported():
    p = sample_path((0, 0, 0), StopRule(radius=1000, budget=50), 3)
    assert len(p) == 50 and p.stop_reason is StopReason.STEP_BUDGET


def _exact_exit_time(R, d=3):
    # (I - P) t = 1 on the sites with |x|_inf < R
    inner = [x for x in np.ndindex(*(2 * R - 1,) * d)]
    idx = {x: i for i, x in enumerate(inner)}
    P = lil_matrix((len(inner), len(inner)))
    for x, i in idx.items():
        for ax in range(d):
            for s in (1, -1):
                y = list(x)
                y[ax] += s
                j = idx.get(tuple(y))
                if j is not None:
                    P[i, j] = 1 / (2 * d)
    t = spsolve((identity(len(inner)) - P).tocsc(), np.ones(len(inner)))
    return t[idx[(R - 1,) * d]]


def test_exit_time_matches_markov_chain_solve():
    exact = _exact_exit_time(2)
    lens = [len(sample_path((0, 0, 0), StopRule(radius=2), s)) for s in range(4000)]
    se = np.std(lens) / math.sqrt(len(lens))
    assert abs(np.mean(lens) - exact) < 4 * se


def _path(points):
    pts = np.asarray(points)
    steps = []
    for a, b in zip(pts[:-1], pts[1:]):
        ax = int(np.nonzero(b - a)[0][0])
        steps.append(2 * ax + (0 if b[ax] > a[ax] else 1))
    return WalkPath(tuple(pts[0]), np.asarray(steps, dtype=np.uint8))


def test_excursion_counts():
    D = box((0,), 0)
    U = box((0,), 2)
    D = D.like(U)
    assert excursion_count([], D, U) == 0
    assert excursion_count([_path([[0], [1], [2], [3]])], D, U) == 1
    trip = [[0], [1], [2], [3], [2], [1], [0]]
    pts = trip + trip[1:] + trip[1:] + [[1], [2], [3]]
    assert excursion_count([_path(pts)], D, U) == 4
    # three round trips, then back in D: a fourth excursion has started
    short = trip + trip[1:] + trip[1:]
    assert excursion_count([_path(short)], D, U) == 4
    assert excursion_count([_path(short)], D, U, count_partial=False) == 3


# -- local operators ------------------------------------------------------------------------

def _delta(frame, x):
    v = np.zeros(frame.dims)
    v[frame.local(x)] = 1.0
    return ScalarField.on_frame(frame, v)


def test_laplacian_examples():
    fr = frame_box(3, 3)
    assert discrete_laplacian(_delta(fr, (0, 0, 0)), (0, 0, 0)) == pytest.approx(-1.0)
    lin = ScalarField.on_frame(fr, fr.coordinates()[0] + 0 * fr.coordinates()[1] + 0 * fr.coordinates()[2])
    assert discrete_laplacian(lin, (1, 1, 0)) == pytest.approx(0.0)


def test_dirichlet_form_examples():
    fr = frame_box(3, 3)
    e0, e1 = _delta(fr, (0, 0, 0)), _delta(fr, (1, 0, 0))
    assert dirichlet_form(e0, e0) == pytest.approx(1.0)
    assert dirichlet_form(e0, e1) == pytest.approx(-1 / 6)


@given(st.lists(st.floats(-5, 5), min_size=27, max_size=27))
def test_dirichlet_form_nonnegative(vals):
    fr = frame_box(3, 3)
    v = np.zeros(fr.dims)
    v[2:5, 2:5, 2:5] = np.asarray(vals).reshape(3, 3, 3)
    f = ScalarField.on_frame(fr, v)
    assert dirichlet_form(f, f) >= -1e-12


# -- harmonic functions and Green function --------------------------------------------------

def test_dirichlet_constant_and_maximum_principle():
    fr = frame_box(6, 3)
    inner = box((0, 0, 0), 5, frame=fr)
    const = dirichlet_solve(inner, ScalarField.on_frame(fr, np.full(fr.dims, 2.5)))
    assert np.allclose(const.values[inner.bits], 2.5)
    rng = np.random.default_rng(0)
    b = ScalarField.on_frame(fr, rng.random(fr.dims))
    u = dirichlet_solve(inner, b)
    edge = fr.with_bits(~inner.bits)
    lo, hi = b.values[edge.bits].min(), b.values[edge.bits].max()
    assert lo - 1e-9 <= u.values[inner.bits].min() and u.values[inner.bits].max() <= hi + 1e-9


def test_annulus_bracketed_by_continuum_potentials():
    fr = frame_box(13, 3)
    outer = box((0, 0, 0), 12, frame=fr)
    core = box((0, 0, 0), 4, frame=fr)
    bnd = ScalarField.on_frame(fr, core.bits.astype(float))
    u = dirichlet_solve(outer - core, bnd)

    def pot(z, rho, r):
        return (1 / z - 1 / r) / (1 / rho - 1 / r)

    for x in [(6, 0, 0), (8, 8, 0), (10, 3, 2), (6, 6, 6)]:
        z = math.sqrt(sum(c * c for c in x))
        # inner ball of the core with the inscribed outer ball, and the circumscribed pair
        lo = max(pot(z, 4, 13), 0.0)
        hi = min(pot(z, 4 * math.sqrt(3), 13 * math.sqrt(3)), 1.0)
        assert lo - 0.02 <= u(x) <= hi + 0.02


def test_green_dual_oracle():
    a = green_solve(None, 24)
    b = green_mc(None, 16, walks=20000, seed=1)
    assert a.value == pytest.approx(1.5164, abs=2e-3)
    assert abs(a.value - b.value) < 3 * math.hypot(a.stderr, b.stderr)


def test_green_translation_and_decay():
    here, there = green((0, 0, 0), (0, 0, 0)), green((3, -1, 2), (3, -1, 2))
    assert there.value == pytest.approx(here.value, rel=1e-12)
    assert abs(there.value - g00()) < 3 * there.stderr
    vals = [green((0, 0, 0), (k, 0, 0), {"R": 24}).value for k in range(0, 9, 2)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(float(green_asymptotic(np.array([[8, 0, 0]]))[0]), rel=0.01)


def test_single_site_and_pair_capacity():
    g = g00()
    assert capacity(box((0, 0, 0), 0)).value == pytest.approx(1 / g, rel=1e-4)
    gx = green((0, 0, 0), (32, 0, 0), {"R": 48}).value
    pair = SiteSet.from_sites([(0, 0, 0), (32, 0, 0)], (0, 0, 0), (33, 1, 1))
    c = capacity(pair).value
    assert c == pytest.approx(2 / (g + gx), rel=2e-3)
    assert c == pytest.approx(2 / g, rel=0.02)


def test_capacity_monotone_on_nested_boxes():
    caps = [capacity(box((0, 0, 0), r)).value for r in range(1, 7)]
    assert all(a < b for a, b in zip(caps, caps[1:]))


def test_last_exit_identity():
    A = SiteSet.from_sites([(0, 0, 0), (1, 0, 0), (0, 2, 0)], (0, 0, 0), (2, 3, 1))
    e, cap = equilibrium(A)
    sites = A.sites()
    for y in sites:
        tot = sum(e(tuple(x)) * green(tuple(x), tuple(y), {"R": 24}).value for x in sites)
        assert tot == pytest.approx(1.0, abs=2e-3)
    assert cap.value == pytest.approx(sum(e(tuple(x)) for x in sites), rel=1e-6)
