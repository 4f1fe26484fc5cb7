"""Homogeneous 2D point/line algebra and the four geometric task functions.

Points and lines live in the projective image plane. A residual of a
constraint is zero exactly when the alignment it describes holds, which is
what makes it usable as a servo error signal.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

COINCIDENT_TOL = 1e-9
HOMOGENEOUS_W_TOL = 1e-12


class GeometryError(ValueError):
    """Base class for geometry failures."""


class CoincidentPoints(GeometryError):
    """Two points expected to be distinct are (numerically) the same."""


class DegenerateLine(GeometryError):
    """Line has (a, b) = (0, 0) and cannot be unit-normalized."""


class DegeneratePoint(GeometryError):
    """Point has |w| too small to dehomogenize."""


class ArityMismatch(GeometryError):
    """Constraint does not carry the number of points/lines its kind needs."""


class EmptyConstraintList(GeometryError):
    """stack_residuals called with no constraints."""


@dataclass(frozen=True)
class ImagePoint:
    """Homogeneous image point (u, v, w); a normalized point has w = 1."""

    u: float
    v: float
    w: float = 1.0

    def __post_init__(self):
        if not all(math.isfinite(x) for x in (self.u, self.v, self.w)):
            raise GeometryError(f"non-finite point ({self.u}, {self.v}, {self.w})")

    def normalized(self) -> "ImagePoint":
        """Scale so w = 1. Defined only when |w| exceeds the homogeneous tolerance."""
        if abs(self.w) <= HOMOGENEOUS_W_TOL:
            raise DegeneratePoint(f"cannot dehomogenize point with w={self.w}")
        if self.w == 1.0:
            return self
        return ImagePoint(self.u / self.w, self.v / self.w, 1.0)

    def array(self) -> np.ndarray:
        return np.array([self.u, self.v, self.w], dtype=float)


@dataclass(frozen=True)
class ImageLine:
    """Line {(u, v): a*u + b*v + c = 0} in homogeneous coefficients.

    A unit-normalized line has a^2 + b^2 = 1, so ``point . line`` is a signed
    distance in pixels. The canonical sign has a > 0, or b > 0 when a = 0.
    """

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not all(math.isfinite(x) for x in (self.a, self.b, self.c)):
            raise GeometryError(f"non-finite line ({self.a}, {self.b}, {self.c})")

    def unit_normalized(self) -> "ImageLine":
        norm = math.hypot(self.a, self.b)
        if norm < HOMOGENEOUS_W_TOL:
            raise DegenerateLine(f"line ({self.a}, {self.b}, {self.c}) has no direction")
        a, b, c = self.a / norm, self.b / norm, self.c / norm
        if a < 0.0 or (a == 0.0 and b < 0.0):
            a, b, c = -a, -b, -c
        return ImageLine(a, b, c)

    @property
    def is_unit_normalized(self) -> bool:
        return abs(math.hypot(self.a, self.b) - 1.0) < 1e-12 and (
            self.a > 0.0 or (self.a == 0.0 and self.b > 0.0)
        )

    def direction(self) -> np.ndarray:
        """Unit direction vector of the line (perpendicular to its normal)."""
        n = self.unit_normalized()
        return np.array([-n.b, n.a])

    def signed_distance(self, p: ImagePoint) -> float:
        """Signed pixel distance from a point; requires unit normalization."""
        n = self.unit_normalized()
        q = p.normalized()
        return n.a * q.u + n.b * q.v + n.c

    def array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c], dtype=float)


def line_from_points(p: ImagePoint, q: ImagePoint) -> ImageLine:
    """Join of two points: their cross product, unit-normalized.

    Raises CoincidentPoints when the dehomogenized points are closer than
    the coincidence tolerance.
    """
    pn, qn = p.normalized(), q.normalized()
    if math.hypot(pn.u - qn.u, pn.v - qn.v) < COINCIDENT_TOL:
        raise CoincidentPoints(f"points {p} and {q} coincide")
    cross = np.cross(pn.array(), qn.array())
    return ImageLine(cross[0], cross[1], cross[2]).unit_normalized()


class ConstraintKind(enum.Enum):
    POINT_TO_POINT = "p2p"
    POINT_TO_LINE = "p2l"
    LINE_TO_LINE = "l2l"
    PARALLEL_LINES = "par"

    @classmethod
    def parse(cls, name: str) -> "ConstraintKind":
        key = name.strip().lower()
        for kind in cls:
            if key == kind.value or key == kind.name.lower():
                return kind
        raise ValueError(f"unknown constraint kind {name!r}")


# (points, lines) each kind carries
_ARITY = {
    ConstraintKind.POINT_TO_POINT: (2, 0),
    ConstraintKind.POINT_TO_LINE: (1, 1),
    ConstraintKind.LINE_TO_LINE: (2, 1),
    ConstraintKind.PARALLEL_LINES: (0, 2),
}


@dataclass(frozen=True)
class GeometricConstraint:
    """One alignment task over image keypoints/lines.

    Construction canonicalizes: points are dehomogenized to w = 1 and lines
    are unit-normalized, so residuals are in pixel units regardless of the
    homogeneous scale the caller used.

    ``stack_line_terms`` switches the line-to-line residual from the scalar
    sum of the two point-line distances (which cancels for symmetric
    opposite-side points) to the two distances stacked as separate entries.
    """

    kind: ConstraintKind
    points: tuple = field(default=())
    lines: tuple = field(default=())
    stack_line_terms: bool = False

    def __post_init__(self):
        n_pts, n_lines = _ARITY[self.kind]
        if len(self.points) != n_pts or len(self.lines) != n_lines:
            raise ArityMismatch(
                f"{self.kind.value} needs {n_pts} points and {n_lines} lines, "
                f"got {len(self.points)} and {len(self.lines)}"
            )
        object.__setattr__(self, "points", tuple(p.normalized() for p in self.points))
        object.__setattr__(self, "lines", tuple(l.unit_normalized() for l in self.lines))

    @property
    def residual_dim(self) -> int:
        if self.kind is ConstraintKind.POINT_TO_POINT:
            return 2
        if self.kind is ConstraintKind.LINE_TO_LINE and self.stack_line_terms:
            return 2
        return 1

    def evaluate(self) -> np.ndarray:
        return evaluate_constraint(self)


def evaluate_constraint(c: GeometricConstraint) -> np.ndarray:
    """Residual vector of a constraint; zero exactly at alignment.

    point-to-point: (u2 - u1, v2 - v1).
    point-to-line:  signed distance f1 . l.
    line-to-line:   f1 . l + f2 . l (or the two terms stacked).
    parallel:       third homogeneous component of l12 x l34, zero iff the
                    lines meet at infinity.
    """
    if c.kind is ConstraintKind.POINT_TO_POINT:
        f1, f2 = c.points
        return np.array([f2.u - f1.u, f2.v - f1.v])
    if c.kind is ConstraintKind.POINT_TO_LINE:
        (f1,), (l,) = c.points, c.lines
        return np.array([l.a * f1.u + l.b * f1.v + l.c])
    if c.kind is ConstraintKind.LINE_TO_LINE:
        (f1, f2), (l,) = c.points, c.lines
        d1 = l.a * f1.u + l.b * f1.v + l.c
        d2 = l.a * f2.u + l.b * f2.v + l.c
        if c.stack_line_terms:
            return np.array([d1, d2])
        return np.array([d1 + d2])
    if c.kind is ConstraintKind.PARALLEL_LINES:
        l12, l34 = c.lines
        return np.array([l12.a * l34.b - l12.b * l34.a])
    raise ArityMismatch(f"unhandled kind {c.kind}")


def stack_residuals(constraints) -> np.ndarray:
    """Concatenate residuals in input order into one error vector."""
    constraints = list(constraints)
    if not constraints:
        raise EmptyConstraintList("no constraints to stack")
    return np.concatenate([evaluate_constraint(c) for c in constraints])
