"""Compose geometric constraints from a probability map.

Pipeline: threshold the map at 0.5 (strict), run PCA over the candidate
pixel coordinates, then place constraint anchors heuristically: the
end-effector point sits at (W/2, 4H/5) and the end-effector line is the
vertical line through the image center, while the target point/line come
from the candidate centroid and dominant-variance axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import ConstraintKind, GeometricConstraint, ImageLine, ImagePoint
from .probmap import ProbabilityMap

CANDIDATE_THRESHOLD = 0.5
MIN_CANDIDATES = 3
ISOTROPY_REL_TOL = 1e-6


class ComposerError(ValueError):
    """Base class for constraint-composition failures."""


class TooFewCandidates(ComposerError):
    """Fewer than MIN_CANDIDATES pixels exceed the threshold."""


class IsotropicDistribution(ComposerError):
    """Candidate variance has no dominant axis; principal line undefined."""


class IllDefinedLine(ComposerError):
    """A line-based constraint was requested from an isotropic candidate set."""


@dataclass(frozen=True)
class CandidateSet:
    """Pixel coordinates (u, v) whose score strictly exceeds the threshold."""

    points: np.ndarray  # (N, 2) float64, row-major scan order
    scores: np.ndarray  # (N,) float64, matching points

    @property
    def count(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class PrincipalDecomposition:
    """Centroid and dominant axis of a candidate set.

    ``principal_line`` is None when the distribution is isotropic
    (|eig1 - eig2| relatively below tolerance); the centroid remains usable
    for point constraints. ``extent_points`` are the two extreme candidates
    projected onto the principal line.
    """

    centroid: tuple
    major_axis_direction: Optional[np.ndarray]
    eigenvalues: tuple
    principal_point: ImagePoint
    principal_line: Optional[ImageLine]
    extent_points: Optional[tuple] = None

    @property
    def isotropic(self) -> bool:
        return self.principal_line is None

    def require_line(self) -> ImageLine:
        if self.principal_line is None:
            lam1, lam2 = self.eigenvalues
            raise IsotropicDistribution(
                f"principal direction ill-defined (eigenvalues {lam1:.6g}, {lam2:.6g})"
            )
        return self.principal_line


def threshold_candidates(pm: ProbabilityMap) -> CandidateSet:
    """Cells with score strictly above 0.5, in stable row-major order."""
    ys, xs = np.nonzero(pm.data > np.float32(CANDIDATE_THRESHOLD))
    points = np.column_stack([xs, ys]).astype(np.float64)
    scores = pm.data[ys, xs].astype(np.float64)
    return CandidateSet(points=points, scores=scores)


def pca_analyze(
    candidates: CandidateSet,
    score_weighted: bool = False,
    require_line: bool = False,
) -> PrincipalDecomposition:
    """Centroid + eigendecomposition of the 2x2 candidate covariance.

    Unweighted by default (the threshold already selected the pixels);
    ``score_weighted`` weights each candidate by its score instead.
    """
    if candidates.count < MIN_CANDIDATES:
        raise TooFewCandidates(
            f"{candidates.count} candidates, need at least {MIN_CANDIDATES}"
        )
    pts = candidates.points
    if score_weighted:
        w = candidates.scores / candidates.scores.sum()
    else:
        w = np.full(candidates.count, 1.0 / candidates.count)
    centroid = w @ pts
    centered = pts - centroid
    sxx = float(w @ (centered[:, 0] * centered[:, 0]))
    syy = float(w @ (centered[:, 1] * centered[:, 1]))
    sxy = float(w @ (centered[:, 0] * centered[:, 1]))

    # closed-form symmetric 2x2 eigendecomposition, deterministic
    half_trace = 0.5 * (sxx + syy)
    half_diff = 0.5 * (sxx - syy)
    disc = math.hypot(half_diff, sxy)
    lam1 = half_trace + disc
    lam2 = max(half_trace - disc, 0.0)

    cx, cy = float(centroid[0]), float(centroid[1])
    point = ImagePoint(cx, cy, 1.0)

    if abs(lam1 - lam2) / max(lam1, 1e-9) < ISOTROPY_REL_TOL:
        decomp = PrincipalDecomposition(
            centroid=(cx, cy),
            major_axis_direction=None,
            eigenvalues=(lam1, lam2),
            principal_point=point,
            principal_line=None,
        )
        if require_line:
            decomp.require_line()
        return decomp

    if sxy == 0.0:
        direction = np.array([1.0, 0.0]) if sxx >= syy else np.array([0.0, 1.0])
    else:
        # (C - lam1 I) v = 0; pick the better-conditioned eigenvector form
        v1 = np.array([lam1 - syy, sxy])
        v2 = np.array([sxy, lam1 - sxx])
        v = v1 if np.dot(v1, v1) >= np.dot(v2, v2) else v2
        direction = v / np.linalg.norm(v)
    if direction[0] < 0.0 or (direction[0] == 0.0 and direction[1] < 0.0):
        direction = -direction

    # line through the centroid along the major axis
    normal = np.array([-direction[1], direction[0]])
    line = ImageLine(normal[0], normal[1], -(normal[0] * cx + normal[1] * cy))
    line = line.unit_normalized()

    t = centered @ direction
    lo, hi = pts[int(np.argmin(t))], pts[int(np.argmax(t))]
    extents = tuple(
        ImagePoint(cx + float((p - centroid) @ direction) * direction[0],
                   cy + float((p - centroid) @ direction) * direction[1], 1.0)
        for p in (lo, hi)
    )

    return PrincipalDecomposition(
        centroid=(cx, cy),
        major_axis_direction=direction,
        eigenvalues=(lam1, lam2),
        principal_point=point,
        principal_line=line,
        extent_points=extents,
    )


def effector_point(width: float, height: float) -> ImagePoint:
    """Heuristic image position of the end effector: (W/2, 4H/5, 1)."""
    return ImagePoint(width / 2.0, 4.0 * height / 5.0, 1.0)


def effector_center_line(width: float) -> ImageLine:
    """Vertical line through the image center: u = W/2."""
    return ImageLine(1.0, 0.0, -width / 2.0).unit_normalized()


def compose_constraint(
    kind: ConstraintKind,
    decomp: PrincipalDecomposition,
    width: int,
    height: int,
    projected_extreme_endpoints: bool = False,
    stack_line_terms: bool = False,
) -> GeometricConstraint:
    """Bind a constraint kind to concrete anchors from a decomposition.

    Line-to-line moving points default to the effector's vertical center
    line clipped to the image (top and bottom rows); with
    ``projected_extreme_endpoints`` the moving points are instead the
    candidate extremes projected on the principal line, measured against
    the effector center line.
    """
    if not isinstance(kind, ConstraintKind):
        kind = ConstraintKind.parse(kind)
    f1 = effector_point(width, height)
    if kind is ConstraintKind.POINT_TO_POINT:
        return GeometricConstraint(kind, points=(f1, decomp.principal_point))
    try:
        target_line = decomp.require_line()
    except IsotropicDistribution as exc:
        raise IllDefinedLine(f"{kind.value} needs a principal line: {exc}") from exc
    if kind is ConstraintKind.POINT_TO_LINE:
        return GeometricConstraint(kind, points=(f1,), lines=(target_line,))
    if kind is ConstraintKind.LINE_TO_LINE:
        if projected_extreme_endpoints:
            points = decomp.extent_points
            line = effector_center_line(width)
        else:
            points = (
                ImagePoint(width / 2.0, 0.0, 1.0),
                ImagePoint(width / 2.0, height - 1.0, 1.0),
            )
            line = target_line
        return GeometricConstraint(
            kind, points=points, lines=(line,), stack_line_terms=stack_line_terms
        )
    if kind is ConstraintKind.PARALLEL_LINES:
        return GeometricConstraint(
            kind, lines=(effector_center_line(width), target_line)
        )
    raise ComposerError(f"unhandled kind {kind}")


def compose_from_map(
    pm: ProbabilityMap,
    kinds,
    score_weighted: bool = False,
    projected_extreme_endpoints: bool = False,
    stack_line_terms: bool = False,
):
    """threshold -> pca -> compose for each requested kind, in order."""
    candidates = threshold_candidates(pm)
    decomp = pca_analyze(candidates, score_weighted=score_weighted)
    return [
        compose_constraint(
            kind,
            decomp,
            pm.width,
            pm.height,
            projected_extreme_endpoints=projected_extreme_endpoints,
            stack_line_terms=stack_line_terms,
        )
        for kind in kinds
    ]
