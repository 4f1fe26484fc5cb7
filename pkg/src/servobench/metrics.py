"""Mask-quality scoring: MAE, S-measure, weighted F, max F, and hybrid-loss terms.

All scores take a prediction map with values in [0, 1] and a binary ground
truth and return values in [0, 1]. The measures follow the salient-object
-detection definitions: max-F uses beta^2 = 0.3 over a 256-threshold sweep,
weighted-F uses beta = 1 with a 7x7 sigma-5 dependency kernel, S-measure
splits its region term at the foreground centroid with alpha = 0.5.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve as _ndconvolve
from scipy.signal import convolve2d as _convolve2d

from .geometry import ArityMismatch
from .probmap import DimensionMismatch, ProbabilityMap, read_map

_EPS = float(np.spacing(1))

MAX_F_BETA_SQ = 0.3
WEIGHTED_F_BETA_SQ = 1.0
S_MEASURE_ALPHA = 0.5
BCE_CLAMP = 1e-7
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


class EmptyGroundTruthWarning(UserWarning):
    """Ground truth has no foreground; recall is undefined and 0 is returned."""


def _as_arrays(pred, gt):
    p = pred.data if isinstance(pred, ProbabilityMap) else np.asarray(pred)
    g = gt.data if isinstance(gt, ProbabilityMap) else np.asarray(gt)
    p = p.astype(np.float64)
    if p.shape != g.shape:
        raise DimensionMismatch(f"pred {p.shape} vs gt {g.shape}")
    return p, g > 0.5


def mae(pred, gt) -> float:
    """Mean absolute error over pixels."""
    p, g = _as_arrays(pred, gt)
    return float(np.mean(np.abs(p - g.astype(np.float64))))


def max_f(pred, gt) -> float:
    """Max F-measure over 256 evenly spaced thresholds (8-bit convention).

    At threshold t the prediction binarizes as pred > t; F is 0 whenever
    precision + recall is 0. Empty ground truth warns and scores 0.
    """
    p, g = _as_arrays(pred, gt)
    n_fg = int(np.count_nonzero(g))
    if n_fg == 0:
        warnings.warn("ground truth has no foreground", EmptyGroundTruthWarning)
        return 0.0
    thresholds = np.arange(256, dtype=np.float64) / 255.0
    fg_sorted = np.sort(p[g], kind="stable")
    all_sorted = np.sort(p.ravel(), kind="stable")
    tp = n_fg - np.searchsorted(fg_sorted, thresholds, side="right")
    positives = p.size - np.searchsorted(all_sorted, thresholds, side="right")
    best = 0.0
    for k in range(256):
        if positives[k] == 0:
            continue
        precision = tp[k] / positives[k]
        recall = tp[k] / n_fg
        if precision + recall == 0.0:
            continue
        f = (1.0 + MAX_F_BETA_SQ) * precision * recall / (
            MAX_F_BETA_SQ * precision + recall
        )
        best = max(best, f)
    return float(best)


def s_measure(pred, gt) -> float:
    """Structure measure: 0.5 * object-aware + 0.5 * region-aware similarity.

    Degenerate ground truths use the measure's limit conventions: all
    background scores 1 - mean(pred), all foreground scores mean(pred).
    """
    p, g = _as_arrays(pred, gt)
    y = float(np.mean(g))
    if y == 0.0:
        return float(1.0 - np.mean(p))
    if y == 1.0:
        return float(np.mean(p))
    score = S_MEASURE_ALPHA * _s_object(p, g) + (1.0 - S_MEASURE_ALPHA) * _s_region(p, g)
    return float(max(0.0, score))


def _s_object_term(values: np.ndarray) -> float:
    x = float(np.mean(values))
    sigma = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    # denominator >= 1, so no regularizer: a perfect prediction scores 1 exactly
    return 2.0 * x / (x * x + 1.0 + sigma)


def _s_object(p: np.ndarray, g: np.ndarray) -> float:
    u = float(np.mean(g))
    fg_score = _s_object_term(p[g])
    bg_score = _s_object_term(1.0 - p[~g])
    return u * fg_score + (1.0 - u) * bg_score


def _region_ssim(x: np.ndarray, y: np.ndarray) -> float:
    n = x.size
    if n == 0:
        return 0.0
    mx, my = float(np.mean(x)), float(np.mean(y))
    if n > 1:
        vx = float(np.sum((x - mx) ** 2) / (n - 1))
        vy = float(np.sum((y - my) ** 2) / (n - 1))
        vxy = float(np.sum((x - mx) * (y - my)) / (n - 1))
    else:
        vx = vy = vxy = 0.0
    alpha = 4.0 * mx * my * vxy
    beta = (mx * mx + my * my) * (vx + vy)
    # vx + vy >= 2|vxy|, so alpha != 0 implies beta > 0: no regularizer needed
    if alpha != 0.0:
        return alpha / beta
    if beta == 0.0:
        return 1.0
    return 0.0


def _gt_centroid_split(g: np.ndarray):
    h, w = g.shape
    if np.count_nonzero(g) == 0:
        return int(round(w / 2)) + 1, int(round(h / 2)) + 1
    rows, cols = np.nonzero(g)
    # one-past rounding keeps every quadrant at least one pixel wide
    return int(np.round(cols.mean())) + 1, int(np.round(rows.mean())) + 1


def _s_region(p: np.ndarray, g: np.ndarray) -> float:
    h, w = g.shape
    x, y = _gt_centroid_split(g)
    area = h * w
    quads = [
        (p[0:y, 0:x], g[0:y, 0:x], x * y / area),
        (p[0:y, x:w], g[0:y, x:w], y * (w - x) / area),
        (p[y:h, 0:x], g[y:h, 0:x], (h - y) * x / area),
    ]
    w4 = 1.0 - sum(wt for _, _, wt in quads)
    quads.append((p[y:h, x:w], g[y:h, x:w], w4))
    return sum(
        wt * _region_ssim(pq, gq.astype(np.float64)) for pq, gq, wt in quads
    )


def _dependency_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    half = (size - 1) / 2.0
    ax = np.arange(-half, half + 1.0)
    xx, yy = np.meshgrid(ax, ax)
    k = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))
    return k / k.sum()


def _nearest_foreground(e: np.ndarray, g: np.ndarray):
    """Distance to the closest foreground pixel and the mean error there.

    Several foreground pixels can tie at the minimal distance; averaging
    their errors keeps the result independent of scan order and symmetric
    under image flips. Exact integer squared distances, chunked to bound
    memory.
    """
    h, w = g.shape
    fr, fc = np.nonzero(g)
    e_fg = e[fr, fc]
    rows, cols = np.indices(g.shape)
    pr = rows.ravel().astype(np.int64)
    pc = cols.ravel().astype(np.int64)
    dist = np.zeros(h * w, dtype=np.float64)
    nearest_e = np.zeros(h * w, dtype=np.float64)
    chunk = max(1, (1 << 22) // max(1, fr.size))
    for start in range(0, h * w, chunk):
        sl = slice(start, start + chunk)
        d2 = (pr[sl, None] - fr[None, :]) ** 2 + (pc[sl, None] - fc[None, :]) ** 2
        dmin = d2.min(axis=1, keepdims=True)
        ties = d2 == dmin
        dist[sl] = np.sqrt(dmin[:, 0].astype(np.float64))
        nearest_e[sl] = (ties @ e_fg) / ties.sum(axis=1)
    return dist.reshape(g.shape), nearest_e.reshape(g.shape)


def weighted_f(pred, gt) -> float:
    """Weighted F-measure (beta = 1).

    Foreground errors are smoothed by a Gaussian dependency kernel; each
    background error is scaled by nu = 2 - exp(ln(0.5)/5 * dist-to-foreground).
    Empty ground truth warns and scores 0.
    """
    p, g = _as_arrays(pred, gt)
    if not g.any():
        warnings.warn("ground truth has no foreground", EmptyGroundTruthWarning)
        return 0.0
    e = np.abs(p - g.astype(np.float64))
    dist, nearest_e = _nearest_foreground(e, g)
    et = e.copy()
    et[~g] = nearest_e[~g]
    ea = _ndconvolve(et, _dependency_kernel(), mode="constant", cval=0.0)
    min_e_ea = np.where(g & (ea < e), ea, e)
    nu = np.where(~g, 2.0 - np.exp(np.log(0.5) / 5.0 * dist), 1.0)
    ew = min_e_ea * nu
    tp_w = float(np.sum(g)) - float(np.sum(ew[g]))
    fp_w = float(np.sum(ew[~g]))
    recall = 1.0 - float(np.mean(ew[g]))
    precision = tp_w / (tp_w + fp_w + _EPS)
    beta_sq = WEIGHTED_F_BETA_SQ
    return float(
        (1.0 + beta_sq) * precision * recall / (beta_sq * precision + recall + _EPS)
    )


def _ssim_window(h: int, w: int):
    size = min(SSIM_WINDOW, h, w)
    if size % 2 == 0:
        size -= 1
    half = (size - 1) / 2.0
    ax = np.arange(-half, half + 1.0)
    xx, yy = np.meshgrid(ax, ax)
    k = np.exp(-(xx * xx + yy * yy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return k / k.sum()


def ssim_index(pred, gt) -> float:
    """Mean SSIM over valid Gaussian windows, value range [0, 1]."""
    p, g = _as_arrays(pred, gt)
    g = g.astype(np.float64)
    win = _ssim_window(*p.shape)
    mu_p = _convolve2d(p, win, mode="valid")
    mu_g = _convolve2d(g, win, mode="valid")
    pp = _convolve2d(p * p, win, mode="valid")
    gg = _convolve2d(g * g, win, mode="valid")
    pg = _convolve2d(p * g, win, mode="valid")
    var_p = pp - mu_p * mu_p
    var_g = gg - mu_g * mu_g
    cov = pg - mu_p * mu_g
    num = (2.0 * mu_p * mu_g + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_p * mu_p + mu_g * mu_g + SSIM_C1) * (var_p + var_g + SSIM_C2)
    return float(np.mean(num / den))


def hybrid_loss_terms(pred, gt):
    """(bce, ssim-loss, iou-loss) for one prediction/target pair."""
    p, g = _as_arrays(pred, gt)
    gf = g.astype(np.float64)
    pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    l_bce = float(-np.mean(gf * np.log(pc) + (1.0 - gf) * np.log(1.0 - pc)))
    l_ssim = 1.0 - ssim_index(p, gf)
    inter = float(np.sum(p * gf))
    union = float(np.sum(p) + np.sum(gf) - inter)
    l_iou = 0.0 if union == 0.0 else 1.0 - inter / union
    return l_bce, float(l_ssim), float(l_iou)


@dataclass(frozen=True)
class HybridLossConfig:
    alpha_fuse: float = 1.0
    alpha_side: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if len(self.alpha_side) != 5:
            raise ArityMismatch(f"need 5 side weights, got {len(self.alpha_side)}")
        if self.alpha_fuse < 0 or any(a < 0 for a in self.alpha_side):
            raise ValueError("loss weights must be >= 0")


def total_loss(fuse_term: float, side_terms, cfg: HybridLossConfig) -> float:
    """Weighted sum: alpha_fuse * fuse + sum_k alpha_side[k] * side[k]."""
    side_terms = list(side_terms)
    if len(side_terms) != 5:
        raise ArityMismatch(f"need 5 side terms, got {len(side_terms)}")
    return float(
        cfg.alpha_fuse * fuse_term
        + sum(a * t for a, t in zip(cfg.alpha_side, side_terms))
    )


@dataclass(frozen=True)
class MetricReport:
    mae: float
    s_measure: float
    weighted_f: float
    max_f: float

    def as_dict(self) -> dict:
        return {
            "mae": self.mae,
            "s_measure": self.s_measure,
            "weighted_f": self.weighted_f,
            "max_f": self.max_f,
        }


def evaluate_pair(pred, gt) -> MetricReport:
    return MetricReport(
        mae=mae(pred, gt),
        s_measure=s_measure(pred, gt),
        weighted_f=weighted_f(pred, gt),
        max_f=max_f(pred, gt),
    )


CSV_HEADER = "name,mae,s_measure,weighted_f,max_f"

_MAP_SUFFIXES = (".pfm", ".pgm")


def _index_maps(directory: Path) -> dict:
    files = {}
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() in _MAP_SUFFIXES:
            files[path.stem] = path
    return files


def score_corpus(pred_dir, gt_dir):
    """Score every prediction against the ground truth sharing its stem.

    Returns (rows, means): rows are (name, MetricReport) sorted by name,
    means average each metric over the corpus.
    """
    pred_files = _index_maps(Path(pred_dir))
    gt_files = _index_maps(Path(gt_dir))
    missing = sorted(set(pred_files) - set(gt_files))
    if missing:
        raise FileNotFoundError(f"no ground truth for: {', '.join(missing)}")
    if not pred_files:
        raise FileNotFoundError(f"no .pfm/.pgm maps in {pred_dir}")
    rows = []
    for name in sorted(pred_files):
        report = evaluate_pair(read_map(pred_files[name]), read_map(gt_files[name]))
        rows.append((name, report))
    means = {
        key: float(np.mean([getattr(rep, key) for _, rep in rows]))
        for key in ("mae", "s_measure", "weighted_f", "max_f")
    }
    means["count"] = len(rows)
    return rows, means


def corpus_csv(rows) -> str:
    lines = [CSV_HEADER]
    for name, rep in rows:
        lines.append(
            f"{name},{rep.mae:.6f},{rep.s_measure:.6f},{rep.weighted_f:.6f},{rep.max_f:.6f}"
        )
    return "\n".join(lines) + "\n"


def corpus_summary_json(means: dict) -> str:
    return json.dumps(means, indent=2) + "\n"
