import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from macroholes import gff, interlacements as ri
from macroholes.lattice import BoundsError, box, clip
from macroholes.potential import ScalarField, g00, killed_green, laplacian_array
from macroholes.rng import derive_seed


# -- interlacements ---------------------------------------------------------------------------

def test_spec_validation():
    with pytest.raises(ValueError):
        ri.RiSpec(0.0, box((0, 0, 0), 2))
    with pytest.raises(ValueError):
        ri.RiSpec(1.0, box((0, 0, 0), 2), stop_radius_factor=1.5)
    s = ri.RiSpec(1.0, box((0, 0, 0), 3))
    assert s.entrance_radius == 3 and s.stop_radius == 12


def test_entrance_table_single_site():
    t = ri.entrance_table(box((0, 0, 0), 0))
    assert t.capacity == pytest.approx(1 / g00(), rel=1e-4)
    assert t.weights.sum() == pytest.approx(t.capacity, rel=1e-8)
    assert t.prob.sum() == pytest.approx(1.0)


def test_return_law_decays_with_distance():
    t = ri.entrance_table(box((0, 0, 0), 2))
    ps = [t.return_law(np.array([k, 0, 0]))[0] for k in (12, 24, 48)]
    assert all(0 < p < 1 for p in ps)
    assert ps[0] > ps[1] > ps[2]
    # far away P[H_K < ∞] ~ cap(K) g(x)
    assert ps[2] * 48 / t.capacity == pytest.approx(3 / (2 * math.pi), rel=0.05)


def test_sample_is_deterministic_and_in_window():
    spec = ri.RiSpec(1.0, box((0, 0, 0), 3))
    a, b = ri.sample(spec, 7), ri.sample(spec, 7)
    assert a.trace == b.trace and np.array_equal(a.entries, b.entries)
    assert a.trace.issubset(spec.window)
    for x in a.entries:
        assert tuple(int(v) for v in x) in a.trace
    assert ri.vacant(a) == spec.window - a.trace
    assert not a.flagged


def test_union_adds_levels():
    w = box((0, 0, 0), 2)
    a, b = ri.sample(ri.RiSpec(0.5, w), 1), ri.sample(ri.RiSpec(0.7, w), 2)
    c = a.union(b)
    assert c.u == pytest.approx(1.2)
    assert c.trace == (a.trace | b.trace)
    assert c.n_trajectories == a.n_trajectories + b.n_trajectories


def test_origin_occupation_small_window():
    u, n = 0.6, 300
    spec = ri.RiSpec(u, box((0, 0, 0), 1))
    hits = sum((0, 0, 0) in ri.sample(spec, derive_seed(11, i)).trace for i in range(n))
    p = ri.occupation_density(u, g00())
    assert abs(hits / n - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_weighted_kernel_constant_field_is_uniform():
    f = ScalarField.on_frame(box((0, 0, 0), 3), np.full((7, 7, 7), 2.5))
    k = ri.weighted_kernel(f, (0, 0, 0))
    assert len(k) == 6 and all(v == pytest.approx(1 / 6) for v in k.values())


def test_weighted_kernel_prefers_heavier_neighbor():
    vals = np.ones((7, 7, 7))
    vals[4, 3, 3] = 3.0
    f = ScalarField.on_frame(box((0, 0, 0), 3), vals)
    k = ri.weighted_kernel(f, (0, 0, 0))
    assert k[(1, 0, 0)] == pytest.approx(3 / 8)
    assert sum(k.values()) == pytest.approx(1.0)


# -- Gaussian free field --------------------------------------------------------------------

def test_eigenvalues_positive_and_bounded():
    mu = gff.dirichlet_eigenvalues((5, 6, 7))
    assert mu.min() > 0 and mu.max() < 2


def test_spectral_covariance_matches_killed_green_exhaustive():
    dims = (5, 5, 5)
    for x in np.ndindex(*dims):
        assert np.allclose(gff.spectral_covariance(dims, x), killed_green(dims, x), atol=1e-10)


def test_spectral_covariance_spot_checks_large_box():
    dims = (17, 17, 17)
    rng = np.random.default_rng(3)
    for x in [(8, 8, 8), (0, 0, 0), (16, 3, 9)] + [tuple(rng.integers(0, 17, 3)) for _ in range(3)]:
        assert np.allclose(gff.spectral_covariance(dims, x), killed_green(dims, x), atol=1e-9)


def test_dense_and_spectral_samplers_share_the_law():
    # empirical covariance of both samplers against the killed Green function at two entries
    dims, n = (4, 4, 4), 3000
    G = killed_green(dims, (1, 1, 1))
    for m in (gff.Method.SPECTRAL, gff.Method.DENSE):
        s = np.array([gff.sample_zero_boundary(dims, derive_seed(5, i), m).values.values for i in range(n)])
        for y in [(1, 1, 1), (2, 1, 1)]:
            prod = s[:, 1, 1, 1] * s[(slice(None),) + y]
            assert abs(prod.mean() - G[y]) < 4 * prod.std() / math.sqrt(n)


def test_window_sample_metadata():
    spec = gff.GffSpec(box((0, 0, 0), 4), 2.0)
    s = gff.sample_window(spec, 3)
    assert s.window_values().shape == (9, 9, 9)
    assert s.values.domain.dims == (17, 17, 17)
    assert 0 < s.bias_bound < 0.1
    t = gff.sample_window(spec, 3)
    assert np.array_equal(s.values.values, t.values.values)
    with pytest.raises(ValueError):
        gff.GffSpec(box((0, 0, 0), 4), 0.5)


def test_excursion_set_extremes():
    s = gff.sample_window(gff.GffSpec(box((0, 0, 0), 3)), 1)
    assert gff.excursion_set(s, -math.inf) == s.window
    assert gff.excursion_set(s, math.inf).count == 0
    a, b = gff.excursion_set(s, 0.0), gff.excursion_set(s, 0.5)
    assert b.issubset(a)


@given(st.integers(0, 2 ** 31), st.integers(1, 3))
def test_markov_decomposition(seed, r):
    s = gff.sample_window(gff.GffSpec(box((0, 0, 0), 4)), seed)
    U = box((0, 0, 0), r)
    h, psi = gff.markov_decompose(s, U)
    assert np.allclose(h.values + psi.values, s.values.values, atol=1e-9)
    inside = clip(U, h.domain).bits
    assert np.all(psi.values[~inside] == 0)
    assert np.abs(laplacian_array(h.values)[inside]).max() < 1e-8


def test_markov_decompose_rejects_edge_sets():
    s = gff.sample_window(gff.GffSpec(box((0, 0, 0), 2), 1.0), 0)
    with pytest.raises(BoundsError):
        gff.markov_decompose(s, box((0, 0, 0), 3))


def test_tilt_sample_is_a_shift():
    spec = gff.GffSpec(box((0, 0, 0), 3))
    f = ScalarField.on_frame(box((0, 0, 0), 1), np.full((3, 3, 3), 2.0))
    a, b = gff.sample_window(spec, 9), gff.tilt_sample(spec, f, 9)
    diff = b.values.values - a.values.values
    core = clip(box((0, 0, 0), 1), a.values.domain).bits
    assert np.allclose(diff[core], 2.0) and np.allclose(diff[~core], 0.0)
    big = ScalarField.on_frame(box((0, 0, 0), 5), np.ones((11, 11, 11)))
    with pytest.raises(ValueError):
        gff.tilt_sample(spec, big, 9)
