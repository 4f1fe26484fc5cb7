"""Homogeneous point/line algebra and the four task-function residuals."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as orc
from servobench.geometry import (
    ArityMismatch,
    CoincidentPoints,
    ConstraintKind,
    DegenerateLine,
    DegeneratePoint,
    EmptyConstraintList,
    GeometricConstraint,
    ImageLine,
    ImagePoint,
    evaluate_constraint,
    line_from_points,
    stack_residuals,
)

coord = st.floats(min_value=-1000.0, max_value=1000.0, allow_nan=False)


def test_point_normalization_scales_w_to_one():
    p = ImagePoint(4.0, 6.0, 2.0).normalized()
    assert (p.u, p.v, p.w) == (2.0, 3.0, 1.0)


def test_point_with_tiny_w_cannot_dehomogenize():
    with pytest.raises(DegeneratePoint):
        ImagePoint(1.0, 2.0, 1e-15).normalized()


def test_line_through_horizontal_axis_points():
    line = line_from_points(ImagePoint(0, 0), ImagePoint(1, 0))
    assert np.allclose(line.array(), [0.0, 1.0, 0.0])  # v = 0


def test_line_through_vertical_axis_points():
    line = line_from_points(ImagePoint(0, 0), ImagePoint(0, 1))
    assert np.allclose(np.abs(line.array()), [1.0, 0.0, 0.0])  # u = 0
    assert line.a > 0  # canonical sign


def test_line_through_generic_points_contains_both():
    p, q = ImagePoint(1, 2), ImagePoint(3, 5)
    line = line_from_points(p, q)
    assert abs(line.a * 1 + line.b * 2 + line.c) < 1e-9
    assert abs(line.a * 3 + line.b * 5 + line.c) < 1e-9
    assert abs(math.hypot(line.a, line.b) - 1.0) < 1e-12


def test_line_matches_cross_product_reference():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        p = rng.uniform(-500, 500, 2)
        q = rng.uniform(-500, 500, 2)
        if np.hypot(*(p - q)) < 1e-6:
            continue
        got = line_from_points(ImagePoint(*p), ImagePoint(*q)).array()
        want = orc.line_through(tuple(p), tuple(q))
        assert np.abs(got - want).max() < 1e-9


def test_coincident_points_rejected():
    with pytest.raises(CoincidentPoints):
        line_from_points(ImagePoint(5, 5), ImagePoint(5, 5))
    with pytest.raises(CoincidentPoints):
        line_from_points(ImagePoint(5, 5), ImagePoint(5 + 1e-12, 5))


def test_degenerate_line_has_no_unit_form():
    with pytest.raises(DegenerateLine):
        ImageLine(0.0, 0.0, 3.0).unit_normalized()


def test_unit_normalization_is_idempotent_and_canonical():
    line = ImageLine(-2.0, 0.0, 4.0).unit_normalized()
    assert line.a > 0
    assert line.unit_normalized() == line
    assert line.is_unit_normalized


def test_signed_distance_matches_reference():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        a, b = rng.uniform(-5, 5, 2)
        if math.hypot(a, b) < 1e-3:
            continue
        c = float(rng.uniform(-100, 100))
        p = rng.uniform(-200, 200, 2)
        got = ImageLine(a, b, c).signed_distance(ImagePoint(*p))
        want = orc.point_line_distance(tuple(p), (a, b, c))
        # unit normalization can flip the canonical sign
        assert min(abs(got - want), abs(got + want)) < 1e-9


def test_p2p_residual_zero_when_aligned():
    c = GeometricConstraint(
        ConstraintKind.POINT_TO_POINT,
        points=(ImagePoint(10, 20), ImagePoint(10, 20)),
    )
    assert np.array_equal(evaluate_constraint(c), [0.0, 0.0])


def test_p2p_residual_is_signed_pixel_offset():
    c = GeometricConstraint(
        ConstraintKind.POINT_TO_POINT,
        points=(ImagePoint(1, 2), ImagePoint(4, 6)),
    )
    assert np.array_equal(evaluate_constraint(c), [3.0, 4.0])


def test_p2l_residual_is_signed_distance():
    c = GeometricConstraint(
        ConstraintKind.POINT_TO_LINE,
        points=(ImagePoint(0, 5),),
        lines=(ImageLine(0, 1, 0),),
    )
    assert evaluate_constraint(c)[0] == pytest.approx(5.0, abs=1e-12)


def test_parallel_residual_zero_for_parallel_lines():
    c = GeometricConstraint(
        ConstraintKind.PARALLEL_LINES,
        lines=(ImageLine(0, 1, 0), ImageLine(0, 1, -5)),
    )
    assert evaluate_constraint(c)[0] == pytest.approx(0.0, abs=1e-12)


def test_l2l_sum_cancels_for_symmetric_opposite_points():
    c = GeometricConstraint(
        ConstraintKind.LINE_TO_LINE,
        points=(ImagePoint(0, 2), ImagePoint(0, -2)),
        lines=(ImageLine(0, 1, 0),),
    )
    assert evaluate_constraint(c)[0] == pytest.approx(0.0, abs=1e-12)


def test_l2l_stacked_form_keeps_both_distances():
    c = GeometricConstraint(
        ConstraintKind.LINE_TO_LINE,
        points=(ImagePoint(0, 2), ImagePoint(0, -2)),
        lines=(ImageLine(0, 1, 0),),
        stack_line_terms=True,
    )
    assert np.allclose(evaluate_constraint(c), [2.0, -2.0])
    assert c.residual_dim == 2


def test_residuals_match_direct_formula_references():
    rng = np.random.default_rng(17)
    for _ in range(1000):
        f1 = rng.uniform(0, 352, 2)
        f2 = rng.uniform(0, 352, 2)
        p3 = rng.uniform(0, 352, 2)
        p4 = rng.uniform(0, 352, 2)
        if np.hypot(*(p3 - p4)) < 1.0 or np.hypot(*(f1 - f2)) < 1.0:
            continue
        l34 = line_from_points(ImagePoint(*p3), ImagePoint(*p4))
        l12 = line_from_points(ImagePoint(*f1), ImagePoint(*f2))

        got = evaluate_constraint(
            GeometricConstraint(
                ConstraintKind.POINT_TO_POINT,
                points=(ImagePoint(*f1), ImagePoint(*f2)),
            )
        )
        assert np.abs(got - orc.p2p_residual(f1, f2)).max() < 1e-9

        got = evaluate_constraint(
            GeometricConstraint(
                ConstraintKind.POINT_TO_LINE, points=(ImagePoint(*f1),), lines=(l34,)
            )
        )[0]
        assert abs(got - orc.p2l_residual(f1, l34.array())) < 1e-9

        got = evaluate_constraint(
            GeometricConstraint(
                ConstraintKind.LINE_TO_LINE,
                points=(ImagePoint(*f1), ImagePoint(*f2)),
                lines=(l34,),
            )
        )[0]
        assert abs(got - orc.l2l_residual(f1, f2, l34.array())) < 1e-9

        got = evaluate_constraint(
            GeometricConstraint(ConstraintKind.PARALLEL_LINES, lines=(l12, l34))
        )[0]
        assert abs(got - orc.parallel_residual(l12.array(), l34.array())) < 1e-9


def test_parallel_residual_vanishes_exactly_iff_parallel():
    rng = np.random.default_rng(5)
    for _ in range(300):
        theta = rng.uniform(0, np.pi)
        base = ImageLine(math.cos(theta), math.sin(theta), rng.uniform(-50, 50))
        shifted = ImageLine(base.a, base.b, base.c + 10.0)
        c = GeometricConstraint(ConstraintKind.PARALLEL_LINES, lines=(base, shifted))
        assert abs(evaluate_constraint(c)[0]) < 1e-9
        # rotating by >= 1e-4 rad leaves |sin| >= ~1e-4, far above tolerance
        phi = theta + rng.uniform(1e-4, np.pi / 2)
        other = ImageLine(math.cos(phi), math.sin(phi), 0.0)
        c = GeometricConstraint(ConstraintKind.PARALLEL_LINES, lines=(base, other))
        assert abs(evaluate_constraint(c)[0]) > 1e-9


def test_residuals_invariant_under_common_translation():
    rng = np.random.default_rng(23)
    for _ in range(300):
        f1, f2, p3, p4 = (rng.uniform(0, 352, 2) for _ in range(4))
        if np.hypot(*(p3 - p4)) < 1.0:
            continue
        t = rng.uniform(-100, 100, 2)
        r0 = evaluate_constraint(
            GeometricConstraint(
                ConstraintKind.POINT_TO_POINT,
                points=(ImagePoint(*f1), ImagePoint(*f2)),
            )
        )
        r1 = evaluate_constraint(
            GeometricConstraint(
                ConstraintKind.POINT_TO_POINT,
                points=(ImagePoint(*(f1 + t)), ImagePoint(*(f2 + t))),
            )
        )
        assert np.abs(r0 - r1).max() < 1e-9

        line = line_from_points(ImagePoint(*p3), ImagePoint(*p4))
        moved = line_from_points(ImagePoint(*(p3 + t)), ImagePoint(*(p4 + t)))
        r0 = evaluate_constraint(
            GeometricConstraint(
                ConstraintKind.POINT_TO_LINE, points=(ImagePoint(*f1),), lines=(line,)
            )
        )
        r1 = evaluate_constraint(
            GeometricConstraint(
                ConstraintKind.POINT_TO_LINE,
                points=(ImagePoint(*(f1 + t)),),
                lines=(moved,),
            )
        )
        assert np.abs(r0 - r1).max() < 1e-9


def test_constraint_arity_is_enforced():
    with pytest.raises(ArityMismatch):
        GeometricConstraint(ConstraintKind.POINT_TO_POINT, points=(ImagePoint(1, 1),))
    with pytest.raises(ArityMismatch):
        GeometricConstraint(
            ConstraintKind.PARALLEL_LINES, lines=(ImageLine(1, 0, 0),)
        )


def test_construction_canonicalizes_scales():
    c = GeometricConstraint(
        ConstraintKind.POINT_TO_LINE,
        points=(ImagePoint(2, 10, 2),),
        lines=(ImageLine(0, 4, -8),),
    )
    assert c.points[0] == ImagePoint(1.0, 5.0, 1.0)
    assert c.lines[0] == ImageLine(0.0, 1.0, -2.0)
    assert evaluate_constraint(c)[0] == pytest.approx(3.0)


def test_stack_residuals_concatenates_in_input_order():
    sat_p2p = GeometricConstraint(
        ConstraintKind.POINT_TO_POINT,
        points=(ImagePoint(10, 20), ImagePoint(10, 20)),
    )
    sat_p2l = GeometricConstraint(
        ConstraintKind.POINT_TO_LINE,
        points=(ImagePoint(0, 0),),
        lines=(ImageLine(0, 1, 0),),
    )
    e = stack_residuals([sat_p2p, sat_p2l])
    assert np.array_equal(e, [0.0, 0.0, 0.0])

    off_p2p = GeometricConstraint(
        ConstraintKind.POINT_TO_POINT,
        points=(ImagePoint(0, 0), ImagePoint(3, 4)),
    )
    assert np.array_equal(stack_residuals([off_p2p]), [3.0, 4.0])

    # par residual 0.2 = sin of the angle between the lines
    phi = math.asin(0.2)
    par = GeometricConstraint(
        ConstraintKind.PARALLEL_LINES,
        lines=(ImageLine(1, 0, 0), ImageLine(math.cos(phi), math.sin(phi), 0)),
    )
    p2l = GeometricConstraint(
        ConstraintKind.POINT_TO_LINE,
        points=(ImagePoint(0, -1.5),),
        lines=(ImageLine(0, 1, 0),),
    )
    e = stack_residuals([par, p2l])
    assert e == pytest.approx([0.2, -1.5], abs=1e-12)


def test_stack_residuals_rejects_empty_list():
    with pytest.raises(EmptyConstraintList):
        stack_residuals([])


def test_kind_parse_accepts_short_and_long_names():
    assert ConstraintKind.parse("p2p") is ConstraintKind.POINT_TO_POINT
    assert ConstraintKind.parse(" PARALLEL_LINES ") is ConstraintKind.PARALLEL_LINES
    with pytest.raises(ValueError):
        ConstraintKind.parse("p2x")


@settings(max_examples=200, deadline=None)
@given(u1=coord, v1=coord, u2=coord, v2=coord)
def test_line_contains_its_defining_points(u1, v1, u2, v2):
    if math.hypot(u1 - u2, v1 - v2) < 1e-6:
        return
    line = line_from_points(ImagePoint(u1, v1), ImagePoint(u2, v2))
    assert abs(line.a * u1 + line.b * v1 + line.c) < 1e-6
    assert abs(line.a * u2 + line.b * v2 + line.c) < 1e-6
    assert abs(math.hypot(line.a, line.b) - 1.0) < 1e-12
