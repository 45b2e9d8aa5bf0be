"""Disparity confidence: mismatch labeling, the evaluation network, and
semi-dense filtering.

The evaluator sees a 101x101 patch of the left grayscale image stacked
with the raw disparity map (normalized by the scene's disparity range) and
scores how likely the center disparity is correct.  Thresholding the score
turns a dense raw map into a semi-dense one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import IncompatibleArchitectureError, ParameterError, ShapeError
from .imageio import INVALID, DisparityMap, GrayImage, StereoPairRecord
from .tensornet import LayerSpec, NetworkParams, forward
from .tensornet.network import fingerprint
from .matchnet import _softmax_class1

log = logging.getLogger(__name__)

PATCH = 101
RADIUS = PATCH // 2
INPUT_SHAPE = (1, 2, PATCH, PATCH)


def evaluation_net_spec() -> tuple[LayerSpec, ...]:
    """Layer stack of the confidence network (101x101x2 input)."""
    return (
        LayerSpec("conv2d", filters=16, kernel=(3, 3, 1), stride=(1, 1, 1)),
        LayerSpec("relu"),
        LayerSpec("maxpool", kernel=(2, 2, 1), stride=(2, 2, 1)),
        LayerSpec("conv2d", filters=32, kernel=(3, 3, 1), stride=(1, 1, 1)),
        LayerSpec("relu"),
        LayerSpec("maxpool", kernel=(2, 2, 1), stride=(2, 2, 1)),
        LayerSpec("conv2d", filters=64, kernel=(3, 3, 1), stride=(1, 1, 1)),
        LayerSpec("relu"),
        LayerSpec("maxpool", kernel=(2, 2, 1), stride=(2, 2, 1)),
        LayerSpec("conv3d", filters=128, kernel=(3, 3, 2), stride=(1, 1, 1)),
        LayerSpec("relu"),
        LayerSpec("maxpool", kernel=(2, 2, 1), stride=(2, 2, 1)),
        LayerSpec("fc", width=128),
        LayerSpec("relu"),
        LayerSpec("fc", width=2),
    )


def evaluation_net_fingerprint() -> str:
    return fingerprint(evaluation_net_spec(), INPUT_SHAPE)


@dataclass(frozen=True)
class ConfidenceMap:
    """Correctness scores in [0, 1]; invalid where the patch does not fit or
    the center disparity is missing."""

    values: np.ndarray  # (h, w) float32
    valid: np.ndarray  # (h, w) bool

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape:
            raise ShapeError("confidence values and validity mask must be 2-D and congruent")
        v = values[valid]
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ParameterError("valid confidence values must lie in [0, 1]")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class EvalSampleSet:
    """Balanced evaluator training samples (gray + disparity planes)."""

    samples: np.ndarray  # (n, 1, 2, 101, 101) float32
    labels: np.ndarray  # (n,) uint8; 1 = correct disparity, 0 = mismatch
    provenance: tuple  # (scene, x, y) per sample
    seed: int

    def __post_init__(self):
        if len(self.samples) != len(self.labels) or len(self.labels) != len(self.provenance):
            raise ShapeError("samples, labels and provenance must align")
        if int(np.sum(self.labels == 0)) != int(np.sum(self.labels == 1)):
            raise ParameterError("classes must balance exactly")


def label_mismatches(d_e: DisparityMap, d_t: DisparityMap, t_e: float = 1.0):
    """Split pixels into mismatches (|D_e - D_t| > t_e, strict) and ignored.

    Returns (mismatch, ignore) boolean rasters; pixels invalid in either
    map land in the ignore raster and in neither class.
    """
    if d_e.data.shape != d_t.data.shape:
        raise ParameterError("disparity map dimensions differ")
    if t_e <= 0:
        raise ParameterError(f"mismatch threshold must be positive, got {t_e}")
    both = d_e.valid_mask() & d_t.valid_mask()
    diff = np.zeros(d_e.data.shape)
    diff[both] = np.abs(d_e.data[both] - d_t.data[both])
    mismatch = both & (diff > t_e)
    return mismatch, ~both


def _disparity_plane(d_e: DisparityMap, ndisp: int) -> np.ndarray:
    """Raw map scaled into [0, 1]; invalid cells become 0."""
    plane = np.where(d_e.valid_mask(), d_e.data, 0.0) / float(ndisp)
    return np.clip(plane, 0.0, 1.0)


def _cut_eval(gray: np.ndarray, plane: np.ndarray, x: int, y: int, out: np.ndarray):
    out[0, 0] = gray[y - RADIUS : y + RADIUS + 1, x - RADIUS : x + RADIUS + 1]
    out[0, 1] = plane[y - RADIUS : y + RADIUS + 1, x - RADIUS : x + RADIUS + 1]


def sample_eval_patches(
    pairs: list[tuple[StereoPairRecord, DisparityMap]],
    t_e: float,
    rng,
    max_per_class: int | None = None,
) -> EvalSampleSet:
    """Collect all in-bounds mismatch samples plus equally many matches.

    Matches are drawn uniformly without replacement when abundant (with
    replacement otherwise).  ``max_per_class`` optionally caps the
    mismatch count for large runs.  With zero mismatches anywhere a
    degenerate-training warning is logged and an empty set returned.
    """
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    else:
        seed = -1

    neg = []  # (pair_index, y, x)
    pos_pools = []
    for idx, (record, d_e) in enumerate(pairs):
        if record.gt is None:
            raise ParameterError(f"record {record.name!r} lacks ground truth")
        mismatch, ignore = label_mismatches(d_e, record.gt, t_e)
        h, w = mismatch.shape
        fits = np.zeros((h, w), dtype=bool)
        if h >= PATCH and w >= PATCH:
            fits[RADIUS : h - RADIUS, RADIUS : w - RADIUS] = True
        usable = fits & ~ignore
        for y, x in np.argwhere(mismatch & usable):
            neg.append((idx, int(y), int(x)))
        pos_pools.append(np.argwhere(~mismatch & usable))

    if not neg:
        log.warning("no mismatch pixels anywhere; evaluator training set is empty")
        return EvalSampleSet(
            np.empty((0, 1, 2, PATCH, PATCH), np.float32), np.empty(0, np.uint8), (), seed
        )
    if max_per_class is not None and len(neg) > max_per_class:
        picks = rng.choice(len(neg), size=max_per_class, replace=False)
        neg = [neg[i] for i in sorted(picks)]

    n_per_class = len(neg)
    pos_all = [
        (idx, int(y), int(x))
        for idx, pool in enumerate(pos_pools)
        for y, x in pool
    ]
    if not pos_all:
        log.warning("no correct pixels anywhere; evaluator training set is empty")
        return EvalSampleSet(
            np.empty((0, 1, 2, PATCH, PATCH), np.float32), np.empty(0, np.uint8), (), seed
        )
    replace = len(pos_all) < n_per_class
    picks = rng.choice(len(pos_all), size=n_per_class, replace=replace)
    pos = [pos_all[i] for i in picks]

    planes = [
        (record.left.data, _disparity_plane(d_e, record.calib.ndisp))
        for record, d_e in pairs
    ]
    n = 2 * n_per_class
    samples = np.empty((n, 1, 2, PATCH, PATCH), dtype=np.float32)
    labels = np.concatenate([np.ones(n_per_class, np.uint8), np.zeros(n_per_class, np.uint8)])
    provenance = []
    for row, (idx, y, x) in enumerate(pos + neg):
        gray, plane = planes[idx]
        _cut_eval(gray, plane, x, y, samples[row])
        provenance.append((pairs[idx][0].name, x, y))
    return EvalSampleSet(samples, labels, tuple(provenance), seed)


def _check_evaluator(params: NetworkParams):
    if params.fingerprint != evaluation_net_fingerprint():
        raise IncompatibleArchitectureError(
            "weights were not trained for the evaluation network"
        )


def confidence_map(
    left: GrayImage,
    d_e: DisparityMap,
    params: NetworkParams,
    batch: int = 32,
) -> ConfidenceMap:
    """Per-pixel probability that the raw disparity is correct.

    Pixels whose 101x101 patch leaves the frame, or whose own disparity is
    invalid, are invalid in the result.
    """
    _check_evaluator(params)
    if left.data.shape != d_e.data.shape:
        raise ParameterError("image and disparity dimensions differ")
    if d_e.ndisp is None:
        raise ParameterError("raw disparity map must carry ndisp for normalization")
    h, w = left.data.shape
    values = np.zeros((h, w), dtype=np.float32)
    valid = np.zeros((h, w), dtype=bool)
    if h < PATCH or w < PATCH:
        return ConfidenceMap(values, valid)

    plane = _disparity_plane(d_e, d_e.ndisp)
    stack = np.stack([left.data, plane])  # (2, h, w)
    windows = np.lib.stride_tricks.sliding_window_view(stack, (PATCH, PATCH), axis=(1, 2))
    center_ok = d_e.valid_mask()[RADIUS : h - RADIUS, RADIUS : w - RADIUS]
    ys, xs = np.nonzero(center_ok)
    dtype = params.dtype
    for start in range(0, len(ys), batch):
        yy = ys[start : start + batch]
        xx = xs[start : start + batch]
        patches = windows[:, yy, xx].transpose(1, 0, 2, 3)[:, None].astype(dtype)
        logits, _ = forward(params, patches)
        values[yy + RADIUS, xx + RADIUS] = _softmax_class1(logits, axis=1)
        valid[yy + RADIUS, xx + RADIUS] = True
    np.clip(values, 0.0, 1.0, out=values)
    return ConfidenceMap(values, valid)


def filter_disparity(d_e: DisparityMap, conf: ConfidenceMap, r: float) -> DisparityMap:
    """Keep pixels scoring at least ``r``; everything else becomes invalid."""
    if d_e.data.shape != conf.values.shape:
        raise ParameterError("disparity and confidence dimensions differ")
    if not 0.0 <= r <= 1.0:
        raise ParameterError(f"confidence threshold must lie in [0, 1], got {r}")
    keep = conf.valid & (conf.values >= r) & d_e.valid_mask()
    out = np.where(keep, d_e.data, INVALID)
    return DisparityMap(out, ndisp=d_e.ndisp)
