"""Probability-map thresholding, PCA, and constraint composition."""

import math

import numpy as np
import pytest

import oracles as orc
from servobench.composer import (
    CandidateSet,
    IllDefinedLine,
    IsotropicDistribution,
    TooFewCandidates,
    compose_constraint,
    compose_from_map,
    effector_center_line,
    effector_point,
    pca_analyze,
    threshold_candidates,
)
from servobench.geometry import ConstraintKind, ImageLine, ImagePoint, stack_residuals
from servobench.probmap import ProbabilityMap


def test_threshold_is_strictly_above_half():
    pm = ProbabilityMap(np.array([[0.4, 0.6], [0.5, 1.0]], dtype=np.float32))
    cs = threshold_candidates(pm)
    assert cs.count == 2
    # (u, v) pairs in row-major scan order; 0.5 itself is excluded
    assert cs.points.tolist() == [[1.0, 0.0], [1.0, 1.0]]
    assert cs.scores.tolist() == pytest.approx([0.6, 1.0], abs=1e-7)


def test_threshold_on_all_zeros_is_empty():
    cs = threshold_candidates(ProbabilityMap.zeros(4, 4))
    assert cs.count == 0


def test_threshold_on_all_ones_takes_every_cell():
    cs = threshold_candidates(ProbabilityMap(np.ones((2, 3), dtype=np.float32)))
    assert cs.count == 6


def test_pca_of_diagonal_ridge():
    pts = np.array([[t, t] for t in range(100)], dtype=np.float64)
    d = pca_analyze(CandidateSet(points=pts, scores=np.ones(100)))
    assert d.centroid == pytest.approx((49.5, 49.5))
    assert d.major_axis_direction == pytest.approx(
        [math.sqrt(0.5), math.sqrt(0.5)], abs=1e-9
    )


def test_pca_of_axis_aligned_rectangle():
    pts = np.array([[x, y] for y in range(10) for x in range(40)], dtype=np.float64)
    d = pca_analyze(CandidateSet(points=pts, scores=np.ones(len(pts))))
    assert d.centroid == pytest.approx((19.5, 4.5))
    assert d.major_axis_direction == pytest.approx([1.0, 0.0], abs=1e-12)
    # analytic variances of uniform integer grids: (n^2 - 1) / 12
    assert d.eigenvalues[0] == pytest.approx((40.0**2 - 1) / 12.0)
    assert d.eigenvalues[1] == pytest.approx((10.0**2 - 1) / 12.0)


def test_pca_of_square_is_isotropic_but_keeps_centroid():
    pts = np.array([[x, y] for y in range(8) for x in range(8)], dtype=np.float64)
    d = pca_analyze(CandidateSet(points=pts, scores=np.ones(64)))
    assert d.isotropic
    assert d.centroid == pytest.approx((3.5, 3.5))
    with pytest.raises(IsotropicDistribution):
        d.require_line()
    with pytest.raises(IsotropicDistribution):
        pca_analyze(CandidateSet(points=pts, scores=np.ones(64)), require_line=True)


def test_pca_needs_three_candidates():
    pts = np.array([[0, 0], [1, 1]], dtype=np.float64)
    with pytest.raises(TooFewCandidates):
        pca_analyze(CandidateSet(points=pts, scores=np.ones(2)))


def test_pca_matches_accumulation_reference():
    rng = np.random.default_rng(31)
    for _ in range(200):
        n = int(rng.integers(3, 80))
        pts = rng.uniform(0, 100, size=(n, 2))
        scores = rng.uniform(0.5001, 1.0, size=n)
        for weighted in (False, True):
            d = pca_analyze(
                CandidateSet(points=pts, scores=scores), score_weighted=weighted
            )
            (cx, cy), (l1, l2), dirn = orc.pca_ref(
                pts, weights=scores if weighted else None
            )
            assert d.centroid == pytest.approx((cx, cy), abs=1e-9)
            assert d.eigenvalues == pytest.approx((l1, l2), abs=1e-9)
            if not d.isotropic:
                assert d.major_axis_direction == pytest.approx(list(dirn), abs=1e-9)


def test_pca_recovers_rotated_bar_angles():
    for angle_deg in (0.0, 30.0, 75.0, 120.0):
        theta = math.radians(angle_deg)
        c, s = math.cos(theta), math.sin(theta)
        pts = []
        for t in np.linspace(-30, 30, 61):
            for r in np.linspace(-2, 2, 5):
                pts.append([50 + t * c - r * s, 50 + t * s + r * c])
        d = pca_analyze(CandidateSet(points=np.array(pts), scores=np.ones(len(pts))))
        got = math.degrees(math.atan2(d.major_axis_direction[1], d.major_axis_direction[0]))
        err = abs((got - angle_deg + 90.0) % 180.0 - 90.0)
        assert err < 0.5


def test_effector_anchor_position():
    p = effector_point(352, 352)
    assert (p.u, p.v, p.w) == (176.0, 281.6, 1.0)
    line = effector_center_line(352)
    assert line.signed_distance(ImagePoint(176.0, 50.0)) == pytest.approx(0.0)


def test_compose_p2p_binds_anchor_to_principal_point():
    pts = np.array([[100 + dx, 100 + dy] for dx in (-1, 0, 1) for dy in (-2, 0, 2)])
    d = pca_analyze(CandidateSet(points=pts.astype(float), scores=np.ones(9)))
    c = compose_constraint(ConstraintKind.POINT_TO_POINT, d, 352, 352)
    assert c.points[0] == ImagePoint(176.0, 281.6, 1.0)
    assert c.points[1].u == pytest.approx(100.0)
    assert c.points[1].v == pytest.approx(100.0)


def test_compose_parallel_verticals_has_zero_residual():
    pts = np.array([[100, y] for y in range(0, 40)], dtype=np.float64)
    d = pca_analyze(CandidateSet(points=pts, scores=np.ones(len(pts))))
    c = compose_constraint(ConstraintKind.PARALLEL_LINES, d, 352, 352)
    assert c.evaluate()[0] == pytest.approx(0.0, abs=1e-12)


def test_compose_p2l_zero_residual_when_anchor_on_line():
    # principal line v = 281.6 passes through the effector anchor
    pts = np.array([[x, 281.6] for x in range(50, 90)], dtype=np.float64)
    d = pca_analyze(CandidateSet(points=pts, scores=np.ones(len(pts))))
    c = compose_constraint(ConstraintKind.POINT_TO_LINE, d, 352, 352)
    assert c.evaluate()[0] == pytest.approx(0.0, abs=1e-9)


def test_compose_line_kinds_refuse_isotropic_distributions():
    pts = np.array([[x, y] for y in range(8) for x in range(8)], dtype=np.float64)
    d = pca_analyze(CandidateSet(points=pts, scores=np.ones(64)))
    for kind in (ConstraintKind.POINT_TO_LINE, ConstraintKind.LINE_TO_LINE,
                 ConstraintKind.PARALLEL_LINES):
        with pytest.raises(IllDefinedLine):
            compose_constraint(kind, d, 352, 352)
    # the centroid stays usable for the point kind
    c = compose_constraint(ConstraintKind.POINT_TO_POINT, d, 352, 352)
    assert c.points[1].u == pytest.approx(3.5)


def test_compose_accepts_kind_names():
    pts = np.array([[100 + t, 50 + 2 * t] for t in range(20)], dtype=np.float64)
    d = pca_analyze(CandidateSet(points=pts, scores=np.ones(20)))
    c = compose_constraint("p2l", d, 352, 352)
    assert c.kind is ConstraintKind.POINT_TO_LINE


def test_l2l_default_uses_image_frame_endpoints():
    pts = np.array([[100 + t, 50 + t] for t in range(30)], dtype=np.float64)
    d = pca_analyze(CandidateSet(points=pts, scores=np.ones(30)))
    c = compose_constraint(ConstraintKind.LINE_TO_LINE, d, 352, 352)
    assert c.points[0] == ImagePoint(176.0, 0.0, 1.0)
    assert c.points[1] == ImagePoint(176.0, 351.0, 1.0)
    assert c.lines[0] == d.principal_line


def test_l2l_projected_endpoints_lie_on_principal_line():
    pts = np.array([[100 + t, 50 + t] for t in range(30)], dtype=np.float64)
    d = pca_analyze(CandidateSet(points=pts, scores=np.ones(30)))
    c = compose_constraint(
        ConstraintKind.LINE_TO_LINE, d, 352, 352, projected_extreme_endpoints=True
    )
    line = d.principal_line
    for p in c.points:
        assert abs(line.a * p.u + line.b * p.v + line.c) < 1e-9
    assert c.lines[0] == effector_center_line(352)


def test_compose_from_map_runs_full_pipeline_in_kind_order():
    data = np.zeros((352, 352), dtype=np.float32)
    data[100:110, 60:180] = 0.9  # wide horizontal bar
    pm = ProbabilityMap(data)
    constraints = compose_from_map(pm, ["p2p", "par"])
    assert [c.kind for c in constraints] == [
        ConstraintKind.POINT_TO_POINT,
        ConstraintKind.PARALLEL_LINES,
    ]
    e = stack_residuals(constraints)
    assert e.shape == (3,)


def test_compose_from_map_propagates_too_few_candidates():
    with pytest.raises(TooFewCandidates):
        compose_from_map(ProbabilityMap.zeros(32, 32), ["p2p"])


def test_pipeline_is_deterministic_for_identical_maps():
    rng = np.random.default_rng(9)
    data = (rng.random((64, 64)) * 0.4 + 0.4).astype(np.float32)
    a = compose_from_map(ProbabilityMap(data), ["p2p", "p2l", "l2l", "par"])
    b = compose_from_map(ProbabilityMap(data.copy()), ["p2p", "p2l", "l2l", "par"])
    assert a == b
    ea, eb = stack_residuals(a), stack_residuals(b)
    assert ea.tobytes() == eb.tobytes()
