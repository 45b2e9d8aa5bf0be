"""Disparity evaluation: bad-N, RMS, density, sparsification AUC, and
error-vs-invalid curves, with CSV/SVG emitters.

All metrics operate on pixels that are mask-selected and valid in the
ground truth; predicted-invalid pixels are excluded from error statistics
(the sparse-submission convention) but counted by the density metrics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParameterError, UndefinedMetricError
from .evalnet import ConfidenceMap, filter_disparity
from .imageio import DisparityMap

CSV_COLUMNS = ("scene", "bad1", "bad2", "mpe", "rms", "density", "invalid_rate", "auc")


@dataclass(frozen=True)
class EvalReport:
    """Per-scene metric bundle."""

    scene: str
    bad1: float
    bad2: float
    mpe: float
    rms: float
    density: float
    invalid_rate: float
    evaluated: int
    total: int
    auc: Optional[float] = None


@dataclass(frozen=True)
class SparsificationCurve:
    """Error-vs-removal curve on a 1/N grid plus its area."""

    fraction_removed: np.ndarray
    error_rate: np.ndarray
    auc: float

    def __post_init__(self):
        f = np.asarray(self.fraction_removed, dtype=np.float64)
        e = np.asarray(self.error_rate, dtype=np.float64)
        if f.shape != e.shape or f.ndim != 1:
            raise ParameterError("curve arrays must be congruent 1-D")
        if len(f) < 2 or f[0] != 0.0 or f[-1] != 1.0 or np.any(np.diff(f) <= 0):
            raise ParameterError("fraction_removed must increase strictly from 0 to 1")
        object.__setattr__(self, "fraction_removed", f)
        object.__setattr__(self, "error_rate", e)


def _domain(d: DisparityMap, d_t: DisparityMap, mask: Optional[np.ndarray]):
    if d.data.shape != d_t.data.shape:
        raise ParameterError("disparity map dimensions differ")
    dom = d_t.valid_mask()
    if mask is not None:
        mask = np.asarray(mask) != 0
        if mask.shape != dom.shape:
            raise ParameterError("mask dimensions differ")
        dom &= mask
    return dom


def bad_n(d: DisparityMap, d_t: DisparityMap, mask: Optional[np.ndarray], n: float):
    """Fraction of evaluable pixels with |D - D_t| strictly above n.

    Evaluable = mask-selected, GT-valid, and valid in ``d``.  Returns
    (fraction, evaluated_count, domain_count) where the domain counts all
    mask-selected GT-valid pixels regardless of ``d``'s validity.
    """
    dom = _domain(d, d_t, mask)
    evaluable = dom & d.valid_mask()
    count = int(evaluable.sum())
    if count == 0:
        raise UndefinedMetricError("bad-n has no evaluable pixels")
    err = np.abs(d.data[evaluable] - d_t.data[evaluable])
    return float(np.mean(err > n)), count, int(dom.sum())


def rms(d: DisparityMap, d_t: DisparityMap, mask: Optional[np.ndarray] = None) -> float:
    """Root-mean-square disparity error over evaluable pixels."""
    dom = _domain(d, d_t, mask)
    evaluable = dom & d.valid_mask()
    if not evaluable.any():
        raise UndefinedMetricError("rms has no evaluable pixels")
    err = d.data[evaluable].astype(np.float64) - d_t.data[evaluable]
    return float(np.sqrt(np.mean(err * err)))


def density_and_invalid(d: DisparityMap, mask: Optional[np.ndarray] = None):
    """(valid fraction, invalid fraction) over mask-selected pixels."""
    if mask is None:
        sel = np.ones(d.data.shape, dtype=bool)
    else:
        sel = np.asarray(mask) != 0
        if sel.shape != d.data.shape:
            raise ParameterError("mask dimensions differ")
    total = int(sel.sum())
    if total == 0:
        raise UndefinedMetricError("density has an empty evaluation domain")
    density = float(d.valid_mask()[sel].mean())
    return density, 1.0 - density


def sparsification_auc(
    conf: ConfidenceMap,
    errors: np.ndarray,
    mask: Optional[np.ndarray] = None,
) -> SparsificationCurve:
    """Sparsify by ascending confidence and integrate the error rate.

    ``errors`` is a binary raster flagging bad pixels.  Pixels are sorted
    by confidence descending (ties keep row-major order); for each removal
    count k on the 1/N grid the error rate of the retained prefix is
    recorded, with the fully-removed endpoint defined as 0.  The AUC is the
    trapezoidal integral over fraction_removed in [0, 1].
    """
    errors = np.asarray(errors) != 0
    if errors.shape != conf.values.shape:
        raise ParameterError("errors raster dimensions differ from confidence map")
    sel = conf.valid.copy()
    if mask is not None:
        mask = np.asarray(mask) != 0
        if mask.shape != sel.shape:
            raise ParameterError("mask dimensions differ")
        sel &= mask
    idx = np.flatnonzero(sel.ravel())
    n = len(idx)
    if n == 0:
        raise UndefinedMetricError("sparsification has no evaluable pixels")
    order = idx[np.argsort(-conf.values.ravel()[idx], kind="stable")]
    bad_sorted = errors.ravel()[order]
    # removing k lowest-confidence pixels keeps the first n-k of the
    # descending order; rate[k] = bad count in that prefix / (n-k)
    prefix_bad = np.concatenate([[0], np.cumsum(bad_sorted)])
    rate = prefix_bad[1:][::-1] / np.arange(n, 0, -1)
    rate = np.concatenate([rate, [0.0]])  # empty retained set counts as 0
    frac = np.arange(n + 1) / n
    auc = float(np.trapezoid(rate, frac))
    return SparsificationCurve(frac, rate, auc)


def error_vs_invalid_curve(
    raw: DisparityMap,
    conf: ConfidenceMap,
    d_t: DisparityMap,
    mask: Optional[np.ndarray] = None,
    grid: Optional[np.ndarray] = None,
    n: float = 2.0,
) -> np.ndarray:
    """(R, invalid_rate, bad-n) for each confidence threshold on a grid.

    The evaluation domain is the conf-valid mask-selected pixels, so the
    R = 0 point reproduces the raw map's error over conf-valid pixels.
    Defaults to a 21-point grid with 0.05 steps.
    """
    if grid is None:
        grid = np.linspace(0.0, 1.0, 21)
    dom = conf.valid.copy()
    if mask is not None:
        m = np.asarray(mask) != 0
        if m.shape != dom.shape:
            raise ParameterError("mask dimensions differ")
        dom &= m
    points = []
    for r in grid:
        filtered = filter_disparity(raw, conf, float(r))
        invalid_rate = density_and_invalid(filtered, dom)[1]
        try:
            err = bad_n(filtered, d_t, dom, n)[0]
        except UndefinedMetricError:
            err = 0.0
        points.append((float(r), invalid_rate, err))
    return np.array(points)


def scene_report(
    scene: str,
    d: DisparityMap,
    d_t: DisparityMap,
    mask: Optional[np.ndarray] = None,
    auc: Optional[float] = None,
) -> EvalReport:
    """Bundle the standard metrics for one scene."""
    bad1, evaluated, total = bad_n(d, d_t, mask, 1.0)
    bad2 = bad_n(d, d_t, mask, 2.0)[0]
    dens_mask = _domain(d, d_t, mask)
    density, invalid_rate = density_and_invalid(d, dens_mask)
    return EvalReport(
        scene=scene,
        bad1=bad1,
        bad2=bad2,
        mpe=bad1,
        rms=rms(d, d_t, mask),
        density=density,
        invalid_rate=invalid_rate,
        evaluated=evaluated,
        total=total,
        auc=auc,
    )


def aggregate_report(reports: list[EvalReport]) -> EvalReport:
    """Unweighted per-scene means (mean percentage error convention)."""
    if not reports:
        raise UndefinedMetricError("no reports to aggregate")

    def mean(field):
        return float(np.mean([getattr(r, field) for r in reports]))

    aucs = [r.auc for r in reports if r.auc is not None]
    return EvalReport(
        scene="aggregate",
        bad1=mean("bad1"),
        bad2=mean("bad2"),
        mpe=mean("mpe"),
        rms=mean("rms"),
        density=mean("density"),
        invalid_rate=mean("invalid_rate"),
        evaluated=sum(r.evaluated for r in reports),
        total=sum(r.total for r in reports),
        auc=float(np.mean(aucs)) if aucs else None,
    )


def reports_csv(reports: list[EvalReport], include_aggregate: bool = True) -> str:
    """One row per scene plus an aggregate row, fixed column order."""
    rows = [",".join(CSV_COLUMNS)]
    items = list(reports)
    if include_aggregate and reports:
        items.append(aggregate_report(reports))
    for r in items:
        auc = "" if r.auc is None else f"{r.auc:.6f}"
        rows.append(
            f"{r.scene},{r.bad1:.6f},{r.bad2:.6f},{r.mpe:.6f},{r.rms:.4f},"
            f"{r.density:.6f},{r.invalid_rate:.6f},{auc}"
        )
    return "\n".join(rows) + "\n"


def curve_csv(points: np.ndarray, columns=("r", "invalid_rate", "error_rate")) -> str:
    rows = [",".join(columns)]
    for p in points:
        rows.append(",".join(f"{v:.6f}" for v in p))
    return "\n".join(rows) + "\n"


def curve_svg(
    points: np.ndarray,
    x_label: str = "invalid rate",
    y_label: str = "error rate",
    width: int = 480,
    height: int = 360,
) -> str:
    """Minimal deterministic SVG line plot of (x, y) pairs.

    ``points`` may be (n, 2) or (n, 3); the last two columns are plotted.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ParameterError("need a (n, >=2) point array")
    xs, ys = pts[:, -2], pts[:, -1]
    pad = 40
    x_lo, x_hi = 0.0, max(1e-9, float(xs.max()))
    y_lo, y_hi = 0.0, max(1e-9, float(ys.max()))

    def sx(v):
        return pad + (v - x_lo) / (x_hi - x_lo) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y_lo) / (y_hi - y_lo) * (height - 2 * pad)

    poly = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 8}" font-size="12" text-anchor="middle">{x_label}</text>',
        f'<text x="12" y="{height // 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 12 {height // 2})">{y_label}</text>',
        f'<text x="{pad - 4}" y="{height - pad + 12}" font-size="10" text-anchor="end">0</text>',
        f'<text x="{width - pad}" y="{height - pad + 12}" font-size="10" text-anchor="middle">{x_hi:.3f}</text>',
        f'<text x="{pad - 4}" y="{pad}" font-size="10" text-anchor="end">{y_hi:.3f}</text>',
        f'<polyline points="{poly}" fill="none" stroke="#1f6fb2" stroke-width="1.5"/>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"
