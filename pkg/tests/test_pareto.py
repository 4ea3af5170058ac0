import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conedp.cones import ConePair, OrderingCone, lipschitz_constant
from conedp.pareto import (
    PointCloud,
    antichain_witness,
    check_sandwich_lemma,
    directed_distance,
    dominated_mask,
    epsilon_archive,
    hausdorff,
    in_k_class,
    is_externally_stable,
    lipschitz_certificate,
    minimal_elements,
    project_to_k_class,
    sandwich_hypotheses,
    upset_distance,
)

QUADRANT = OrderingCone.orthant(2)
SKEW = OrderingCone([[2.0, 1.0], [1.0, 2.0]])
WIDE = OrderingCone([[1.0, -1.0], [1.0, 1.0]])
CONES = [QUADRANT, SKEW, WIDE, OrderingCone([[1.0, 0.0], [1.0, 3.0]])]

# integer-valued coordinates keep dominance decisions away from the tolerance band
clouds = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(2)),
                elements=st.integers(-20, 20).map(float))


def as_set(points):
    return {tuple(np.round(p, 12)) for p in np.asarray(points)}


def brute_minimal(points, cone):
    """Quadratic scan written independently of the package."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    keep = []
    for i, y in enumerate(pts):
        dominated = any(j != i and cone.contains(y - pts[j]) for j in range(len(pts)))
        if not dominated:
            keep.append(y)
    return np.array(keep)


def test_minimal_elements_examples():
    s = [(0, 1), (1, 0), (1, 1), (0.5, 0.5)]
    assert as_set(minimal_elements(s, QUADRANT).points) == {(0.0, 1.0), (1.0, 0.0), (0.5, 0.5)}
    assert as_set(minimal_elements([(0, 0), (1, 0)], WIDE).points) == {(0.0, 0.0)}


def test_empty_cloud_rejected():
    with pytest.raises(ValueError):
        minimal_elements(np.empty((0, 2)), QUADRANT)
    with pytest.raises(ValueError):
        hausdorff(np.empty((0, 2)), [[0.0, 0.0]])


def test_pointcloud_dedupes_and_sorts():
    cloud = PointCloud([[1.0, 0.0], [0.0, 1.0], [1.0, 1e-14]])
    assert len(cloud) == 2
    np.testing.assert_array_equal(cloud.points, [[0.0, 1.0], [1.0, 0.0]])


def test_scan_matches_pairwise_on_random_cube(rng):
    pts = rng.uniform(size=(200, 3))
    cone = OrderingCone.orthant(3)
    scan = minimal_elements(pts, cone).points
    pair = minimal_elements(pts, cone, method="pairwise").points
    np.testing.assert_array_equal(scan, pair)
    assert as_set(scan) == as_set(brute_minimal(pts, cone))


@given(clouds, st.sampled_from(CONES))
@settings(max_examples=150, deadline=None)
def test_scan_equals_pairwise(points, cone):
    a = minimal_elements(points, cone).points
    b = minimal_elements(points, cone, method="pairwise").points
    np.testing.assert_array_equal(a, b)
    assert as_set(a) == as_set(brute_minimal(points, cone))


@given(clouds, st.sampled_from(CONES))
@settings(max_examples=100, deadline=None)
def test_front_is_idempotent_antichain_and_stable(points, cone):
    front = minimal_elements(points, cone)
    assert front.is_antichain()
    assert antichain_witness(front.points, cone) is None
    np.testing.assert_array_equal(minimal_elements(front.points, cone).points, front.points)
    assert is_externally_stable(points, front.points, cone)


@given(clouds)
@settings(max_examples=100, deadline=None)
def test_larger_cone_keeps_fewer_points(points):
    # in each pair the narrow cone's generators lie in the wide cone
    big = OrderingCone([[1.0, -0.5], [-0.5, 1.0]])
    small = OrderingCone([[2.0, 1.0], [1.0, 2.0]])
    for narrow, wide in ((small, QUADRANT), (QUADRANT, big), (small, big)):
        assert as_set(minimal_elements(points, wide).points) <= as_set(minimal_elements(points, narrow).points)


@given(clouds, st.integers(-50, 50), st.integers(-50, 50), st.sampled_from([0.25, 0.5, 2.0, 8.0]))
@settings(max_examples=100, deadline=None)
def test_translation_and_scaling_equivariance(points, cx, cy, lam):
    c = np.array([cx, cy], dtype=float)
    base = minimal_elements(points, SKEW).points
    np.testing.assert_array_equal(minimal_elements(points + c, SKEW).points, base + c)
    np.testing.assert_array_equal(minimal_elements(lam * points, SKEW).points, lam * base)


@given(clouds, st.sampled_from(CONES))
@settings(max_examples=60, deadline=None)
def test_upper_set_equals_front_upper_set(points, cone):
    probes = np.random.default_rng(0).uniform(-25, 25, size=(300, 2))
    front = minimal_elements(points, cone).points
    via_cloud = upset_distance(probes, points, cone) <= 1e-9
    via_front = upset_distance(probes, front, cone) <= 1e-9
    np.testing.assert_array_equal(via_cloud, via_front)


def test_dominated_mask_marks_complement_of_front(rng):
    pts = np.unique(rng.integers(0, 10, size=(60, 2)).astype(float), axis=0)
    mask = dominated_mask(pts, QUADRANT)
    assert as_set(pts[~mask]) == as_set(minimal_elements(pts, QUADRANT).points)


def test_external_stability_examples(rng):
    assert is_externally_stable([(0, 1), (1, 0), (1, 1)], [(0, 1), (1, 0)], QUADRANT)
    pts = rng.normal(size=(500, 2))
    assert is_externally_stable(pts, minimal_elements(pts, SKEW).points, SKEW)
    assert not is_externally_stable([(0, 0), (-1, -1)], [(0, 0)], QUADRANT)


@pytest.mark.parametrize(
    "a, b, expected",
    [
        ([(1, 2), (3, 4)], [(1, 2), (3, 4)], 0.0),
        ([(0, 0)], [(3, 4)], 5.0),
        ([(0, 0), (1, 0)], [(0, 1)], math.sqrt(2)),
    ],
)
def test_hausdorff_examples(a, b, expected):
    assert hausdorff(a, b) == pytest.approx(expected, abs=1e-15)
    assert hausdorff(b, a) == pytest.approx(expected, abs=1e-15)


def test_directed_distance_is_one_sided():
    assert directed_distance([(0, 0)], [(0, 0), (5, 0)]) == 0.0
    assert directed_distance([(0, 0), (5, 0)], [(0, 0)]) == 5.0


@given(clouds, clouds, clouds)
@settings(max_examples=80, deadline=None)
def test_hausdorff_metric_axioms(a, b, c):
    ab, ba = hausdorff(a, b), hausdorff(b, a)
    assert ab == ba
    assert hausdorff(a, a) == 0.0
    assert hausdorff(a, c) <= ab + hausdorff(b, c) + 1e-12
    assert (ab == 0.0) == (as_set(a) == as_set(b))


def test_sandwich_examples():
    assert check_sandwich_lemma([(0, 0)], [(0, 0), (1, 1)], QUADRANT)
    assert not sandwich_hypotheses([(0, 0)], [(0, 0), (-1, -1)], QUADRANT)
    assert not check_sandwich_lemma([(0, 0)], [(0, 0), (-1, -1)], QUADRANT)


@given(clouds, st.sampled_from(CONES), st.integers(0, 2**31 - 1))
@settings(max_examples=80, deadline=None)
def test_sandwich_on_constructed_instances(k1, cone, seed):
    rng = np.random.default_rng(seed)
    w = rng.exponential(size=(len(k1), len(cone.generators)))
    k2 = np.vstack([k1, k1 + w @ cone.generators])
    assert sandwich_hypotheses(k1, k2, cone)
    assert check_sandwich_lemma(k1, k2, cone)


def test_k_class_projection(rng):
    pair = ConePair(SKEW, QUADRANT)
    for _ in range(50):
        k = project_to_k_class(rng.uniform(size=(30, 2)), pair)
        assert in_k_class(k, pair)
    # (0,1) and (1,0) are P-minimal under SKEW but (1,0.6) is not C-minimal
    assert not in_k_class([(0.0, 1.0), (1.0, 0.0), (1.0, 0.6)], pair)


def test_lipschitz_certificate_examples(rng):
    pair = ConePair(SKEW, QUADRANT)
    k1 = project_to_k_class(rng.uniform(size=(50, 2)), pair)
    same = lipschitz_certificate(k1, k1, pair)
    assert same.h_fronts == 0.0 and same.h_inputs == 0.0 and same.satisfied
    shift = np.array([0.3, -0.4])
    moved = lipschitz_certificate(k1, k1 + shift, pair)
    assert moved.h_inputs == pytest.approx(0.5)
    assert moved.h_fronts == pytest.approx(0.5)
    assert moved.satisfied and moved.bound == pytest.approx(lipschitz_constant(pair) * 0.5)
    with pytest.raises(ValueError, match="K\\(C, P\\)"):
        lipschitz_certificate([(0.0, 1.0), (1.0, 0.0), (1.0, 0.6)], k1, pair)


def test_lipschitz_certificate_random_pairs(rng):
    pair = ConePair(SKEW, QUADRANT)
    worst = 0.0
    for _ in range(100):
        k1 = project_to_k_class(rng.uniform(size=(50, 2)), pair)
        k2 = project_to_k_class(k1 + rng.normal(scale=0.05, size=k1.shape), pair)
        rep = lipschitz_certificate(k1, k2, pair)
        assert rep.satisfied
        worst = max(worst, rep.ratio)
    assert worst < lipschitz_constant(pair)


def test_epsilon_archive_covers_dropped_points(rng):
    front = minimal_elements(rng.uniform(size=(400, 2)), QUADRANT).points
    assert len(epsilon_archive(front, QUADRANT, 0.0)) == len(front)
    kept = epsilon_archive(front, QUADRANT, 0.05)
    assert len(kept) < len(front)
    e = np.array([1.0, 1.0]) / math.sqrt(2)
    for y in front:
        assert np.any(QUADRANT.contains(y + 0.05 * e - kept))
