import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from macroholes.lattice import (BoundsError, Connectivity, SiteSet, box, boundary_cluster, clip, dilate,
                                filling, frame_box, hole, seeded_component, sphere, sup_distance_transform)
from oracles import bfs_component


def test_box_and_sphere_sizes():
    assert box((0, 0, 0), 2).count == 125
    assert sphere(3, 3).count == 7 ** 3 - 5 ** 3
    assert box((1, -2), 0).sites().tolist() == [[1, -2]]


def test_box_on_frame_and_bounds():
    fr = frame_box(4, 3)
    b = box((0, 0, 0), 2, frame=fr)
    assert b.same_frame(fr) and b.count == 125
    with pytest.raises(BoundsError):
        box((3, 0, 0), 2, frame=fr)


def test_dilate_is_sup_neighborhood():
    S = SiteSet.from_sites([(0, 0, 0)], (-3,) * 3, (7,) * 3)
    assert dilate(S, 2) == box((0, 0, 0), 2, frame=S)
    with pytest.raises(BoundsError):
        dilate(S, 4)


@given(arrays(bool, st.tuples(st.integers(2, 7), st.integers(2, 7), st.integers(2, 7))),
       st.integers(0, 2))
def test_dilate_matches_distance_transform(bits, L):
    S = SiteSet((0, 0, 0), bits).padded(L)
    D = dilate(S, L)
    if S.count:
        assert np.array_equal(D.bits, sup_distance_transform(S) <= L)
    else:
        assert D.count == 0


@given(arrays(bool, st.tuples(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8)), elements=st.booleans()),
       st.integers(0, 2 ** 32 - 1), st.booleans())
def test_seeded_component_matches_bfs(occ, seed, star):
    rng = np.random.default_rng(seed)
    seeds = rng.random(occ.shape) < 0.05
    seeds.flat[rng.integers(occ.size)] = True
    conn = Connectivity.STAR if star else Connectivity.NEAREST
    got = seeded_component(SiteSet((0, 0, 0), occ), SiteSet((0, 0, 0), seeds), conn)
    assert np.array_equal(got.bits, bfs_component(occ, seeds, star))


def test_boundary_cluster_contains_sphere_and_blocks_interior():
    N = 5
    medium = box((0, 0, 0), N) - sphere(3, 3, frame=box((0, 0, 0), N))
    C = boundary_cluster(medium, N)
    assert sphere(N, 3).like(C).issubset(C)
    assert (0, 0, 0) not in C
    assert (4, 0, 0) in C


def test_hole_and_filling():
    N = 6
    C = sphere(N, 3)
    W = hole(dilate(C.padded(1), 1), N)
    assert W == box((0, 0, 0), 4, frame=W)
    F = filling(W, N)
    assert F.count == 10 ** 3
    assert F.contains_points(W.sites() / N).all()


def test_empty_filling_and_clip():
    W = SiteSet.empty((0, 0, 0), (3, 3, 3))
    assert filling(W, 4).count == 0
    S = box((0, 0, 0), 3)
    assert clip(S, SiteSet.empty((2, 2, 2), (4, 4, 4))).count == 8


@given(arrays(bool, (5, 5, 5)), arrays(bool, (5, 5, 5)))
def test_set_algebra(a, b):
    A, B = SiteSet((0, 0, 0), a), SiteSet((0, 0, 0), b)
    assert (A | B).count == A.count + B.count - (A & B).count
    assert (A ^ B) == ((A - B) | (B - A))
    assert (A - B).issubset(A)
    assert A.complement().complement() == A
