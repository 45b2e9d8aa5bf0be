"""Patch-matching network, cost-volume inference, WTA, and classical baselines.

The matcher scores how well an 11x11 patch pair (six interleaved transform
channels) matches; scores near 1 mean mismatch.  Whole-image inference
recasts the fully connected layers as 1x1 convolutions so the network
slides over the frame, which must agree with literal per-patch evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import IncompatibleArchitectureError, ParameterError, SamplingError, ShapeError
from .imageio import INVALID, CalibInfo, DisparityMap, GrayImage, StereoPairRecord
from .tensornet import LayerSpec, NetworkParams, forward
from .tensornet.network import fingerprint, trace_shapes
from .transforms import TransformConfig, build_stack, interleave

PATCH = 11
RADIUS = PATCH // 2
INPUT_SHAPE = (1, 2 * 3, PATCH, PATCH)  # (channels, depth=2l, height, width)

BASELINE_METHODS = ("sad", "ssd", "ncc", "census")


def matching_net_spec() -> tuple[LayerSpec, ...]:
    """Layer stack of the patch matcher (11x11x6 input, two output units)."""
    return (
        LayerSpec("conv2d", filters=32, kernel=(3, 3, 1), stride=(1, 1, 1)),
        LayerSpec("relu"),
        LayerSpec("conv3d", filters=128, kernel=(3, 3, 2), stride=(1, 1, 2)),
        LayerSpec("relu"),
        LayerSpec("conv3d", filters=64, kernel=(3, 3, 3), stride=(1, 1, 1)),
        LayerSpec("relu"),
        LayerSpec("fc", width=1600),
        LayerSpec("relu"),
        LayerSpec("fc", width=128),
        LayerSpec("relu"),
        LayerSpec("fc", width=2),
    )


def matching_net_fingerprint() -> str:
    return fingerprint(matching_net_spec(), INPUT_SHAPE)


@dataclass(frozen=True)
class CostVolume:
    """Mismatch scores over (disparity, y, x) with a per-cell validity mask.

    Cells whose patch would leave the image on either view are invalid;
    their data values are meaningless.
    """

    data: np.ndarray  # (ndisp, height, width) float32 or float64
    valid: np.ndarray  # same shape, bool
    ndisp: int

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float32)
        valid = np.asarray(self.valid, dtype=bool)
        if data.ndim != 3 or data.shape != valid.shape or data.shape[0] != self.ndisp:
            raise ShapeError(
                f"cost volume dims inconsistent: data {data.shape}, valid {valid.shape}, "
                f"ndisp {self.ndisp}"
            )
        v = data[valid]
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ParameterError("valid cost values must lie in [0, 1]")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "valid", valid)

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def height(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class PatchSampleSet:
    """Balanced matcher training samples with per-sample provenance."""

    samples: np.ndarray  # (n, 1, 2l, w, w) float32
    labels: np.ndarray  # (n,) uint8; 0 = match, 1 = mismatch
    provenance: tuple  # (scene, x, y, d) per sample
    seed: int

    def __post_init__(self):
        if len(self.samples) != len(self.labels) or len(self.labels) != len(self.provenance):
            raise ShapeError("samples, labels and provenance must align")
        n0 = int(np.sum(self.labels == 0))
        n1 = int(np.sum(self.labels == 1))
        if n0 != n1:
            raise ParameterError(f"classes must balance exactly, got {n0} vs {n1}")


def save_cost_volume(volume: CostVolume) -> bytes:
    """Debug export: text header then float32 LE planes, NaN marking invalid."""
    header = f"ssvol 1\n{volume.ndisp} {volume.height} {volume.width}\n".encode("ascii")
    data = volume.data.astype("<f4").copy()
    data[~volume.valid] = np.nan
    return header + data.tobytes()


def load_cost_volume(data: bytes) -> CostVolume:
    nl1 = data.find(b"\n")
    nl2 = data.find(b"\n", nl1 + 1)
    if nl1 < 0 or nl2 < 0 or data[:nl1] != b"ssvol 1":
        raise ParameterError("not a cost volume stream")
    ndisp, height, width = (int(v) for v in data[nl1 + 1 : nl2].split())
    payload = np.frombuffer(data[nl2 + 1 :], dtype="<f4")
    if payload.size != ndisp * height * width:
        raise ParameterError("cost volume payload size mismatch")
    cube = payload.reshape(ndisp, height, width)
    valid = np.isfinite(cube)
    clean = np.where(valid, cube, 0.0).astype(np.float32)
    return CostVolume(clean, valid, ndisp)


# ---------------------------------------------------------------------------
# training data


def _eligible_positive_mask(record: StereoPairRecord) -> np.ndarray:
    """Pixels usable as match samples: valid GT, both patches in bounds."""
    gt = record.gt
    h, w = gt.data.shape
    ys, xs = np.mgrid[0:h, 0:w]
    finite = gt.valid_mask()
    d = np.where(finite, np.rint(gt.data), 0).astype(np.int64)
    ok = (
        finite
        & (ys >= RADIUS)
        & (ys <= h - 1 - RADIUS)
        & (xs >= RADIUS)
        & (xs <= w - 1 - RADIUS)
        & (xs - d >= RADIUS)
        & (xs - d <= w - 1 - RADIUS)
    )
    return ok


def _proportional_quotas(counts: list[int], total: int) -> list[int]:
    """Largest-remainder split of ``total`` proportional to ``counts``."""
    weight = sum(counts)
    if weight == 0:
        return [0] * len(counts)
    raw = [total * c / weight for c in counts]
    quotas = [int(q) for q in raw]
    remainders = sorted(range(len(raw)), key=lambda i: (raw[i] - quotas[i], -counts[i]), reverse=True)
    for i in remainders[: total - sum(quotas)]:
        quotas[i] += 1
    return quotas


def _cut_pair(left_stack, right_stack, x, y, d, out):
    out[0, 0::2] = left_stack[:, y - RADIUS : y + RADIUS + 1, x - RADIUS : x + RADIUS + 1]
    out[0, 1::2] = right_stack[:, y - RADIUS : y + RADIUS + 1, x - d - RADIUS : x - d + RADIUS + 1]


def sample_matching_patches(
    records: list[StereoPairRecord],
    cfg: TransformConfig,
    per_class: int,
    rng,
    stacks: Optional[dict] = None,
) -> PatchSampleSet:
    """Draw a balanced set of match/mismatch patch pairs.

    Matches use the rounded ground-truth disparity; mismatches redraw a
    disparity uniformly over [0, ndisp) at least 2 pixels away from the
    truth.  Scene quotas are proportional to each scene's eligible-pixel
    count.  ``stacks`` may carry precomputed (left, right) channel stacks
    keyed by scene name.
    """
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    else:
        seed = -1
    usable = [r for r in records if r.gt is not None]
    eligible = [np.flatnonzero(_eligible_positive_mask(r).ravel()) for r in usable]
    counts = [len(e) for e in eligible]
    if sum(counts) == 0:
        raise SamplingError("no eligible pixels with ground truth in any record")
    quotas = _proportional_quotas(counts, per_class)

    n = 2 * per_class
    samples = np.empty((n, 1, 6, PATCH, PATCH), dtype=np.float32)
    labels = np.concatenate([np.zeros(per_class, np.uint8), np.ones(per_class, np.uint8)])
    pos_prov = []
    neg_prov = []
    pos_row = 0
    neg_row = per_class

    for record, pool, quota in zip(usable, eligible, quotas):
        if quota == 0:
            continue
        if stacks is not None and record.name in stacks:
            left_stack, right_stack = stacks[record.name]
        else:
            left_stack = build_stack(record.left, cfg).channels
            right_stack = build_stack(record.right, cfg).channels
            if stacks is not None:
                stacks[record.name] = (left_stack, right_stack)
        gt = record.gt.data
        h, w = gt.shape
        ndisp = record.calib.ndisp

        picks = rng.choice(pool, size=quota, replace=quota > len(pool))
        for flat in picks:
            y, x = divmod(int(flat), w)
            d = int(np.rint(gt[y, x]))
            _cut_pair(left_stack, right_stack, x, y, d, samples[pos_row])
            pos_prov.append((record.name, x, y, d))
            pos_row += 1

        got = 0
        attempts = 0
        while got < quota:
            attempts += 1
            if attempts > 1000 * quota:
                raise SamplingError(
                    f"scene {record.name!r}: cannot find mismatch disparities"
                )
            flat = int(rng.choice(pool))
            y, x = divmod(flat, w)
            d_true = gt[y, x]
            lo = max(0, x - (w - 1 - RADIUS))
            hi = min(ndisp - 1, x - RADIUS)
            if hi < lo:
                continue
            d_neg = int(rng.integers(lo, hi + 1))
            if abs(d_neg - d_true) <= 1.0:
                continue
            _cut_pair(left_stack, right_stack, x, y, d_neg, samples[neg_row])
            neg_prov.append((record.name, x, y, d_neg))
            neg_row += 1
            got += 1

    if pos_row != per_class or neg_row != 2 * per_class:
        raise SamplingError("failed to fill sample quotas")
    return PatchSampleSet(samples, labels, tuple(pos_prov + neg_prov), seed)


# ---------------------------------------------------------------------------
# inference


def _check_matcher(params: NetworkParams):
    if params.fingerprint != matching_net_fingerprint():
        raise IncompatibleArchitectureError(
            "weights were not trained for the matching network"
        )


def _shift_right(stack: np.ndarray, d: int) -> np.ndarray:
    """View of the right stack as seen from left coordinates at disparity d."""
    out = np.zeros_like(stack)
    if d == 0:
        return stack
    out[:, :, d:] = stack[:, :, : stack.shape[2] - d]
    return out


def _convified_params(params: NetworkParams) -> NetworkParams:
    """Recast trailing fc layers as 1x1 (or kxk on the first) convolutions."""
    specs = []
    tensors = []
    shape = params.input_shape
    for spec, t, traced in zip(
        params.specs, params.tensors, trace_shapes(params.specs, params.input_shape)
    ):
        if spec.kind == "fc":
            if isinstance(shape, int):
                c, d, h, w = shape, 1, 1, 1
            else:
                c, d, h, w = shape
            kind = "conv3d" if d > 1 else "conv2d"
            specs.append(LayerSpec(kind, filters=spec.width, kernel=(h, w, d), stride=(1, 1, 1)))
            tensors.append((t[0].reshape(spec.width, c, d, h, w), t[1]))
            shape = spec.width
        else:
            specs.append(spec)
            tensors.append(t)
            shape = traced
    return NetworkParams(tuple(specs), params.input_shape, tensors, params.rng_seed)


def _softmax_class1(logits: np.ndarray, axis: int) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return np.take(e, 1, axis=axis) / e.sum(axis=axis)


def _infer_conv(left_stack, right_stack, ndisp, params, band_rows):
    h, w = left_stack.shape[1:]
    conv = _convified_params(params)
    dtype = params.dtype
    cost = np.ones((ndisp, h, w), dtype=np.float32)
    if h < PATCH or w < PATCH:
        return cost
    out_w = w - 2 * RADIUS
    if band_rows is None:
        # keep transient conv buffers around 60 MB
        band_rows = max(1, min(h - 2 * RADIUS, int(6e7 / (6912 * w))))
    for d in range(ndisp):
        planes = interleave_arrays(left_stack, _shift_right(right_stack, d)).astype(dtype)
        for r0 in range(RADIUS, h - RADIUS, band_rows):
            r1 = min(r0 + band_rows, h - RADIUS)
            slab = planes[None, None, :, r0 - RADIUS : r1 + RADIUS, :]
            logits = _forward_slab(conv, slab)
            cost[d, r0:r1, RADIUS : RADIUS + out_w] = _softmax_class1(logits, axis=1)[0, 0]
    return cost


def _forward_slab(conv: NetworkParams, slab: np.ndarray) -> np.ndarray:
    from .tensornet import ops

    cur = slab
    for spec, t in zip(conv.specs, conv.tensors):
        if spec.kind in ("conv2d", "conv3d"):
            cur = ops.conv_forward(cur, t[0], t[1], spec._dhw_stride())
        elif spec.kind == "relu":
            cur = ops.relu_forward(cur)
        else:
            raise ShapeError(f"slab inference cannot handle {spec.kind} layers")
    return cur


def interleave_arrays(left_stack: np.ndarray, right_stack: np.ndarray) -> np.ndarray:
    out = np.empty((left_stack.shape[0] * 2,) + left_stack.shape[1:], dtype=left_stack.dtype)
    out[0::2] = left_stack
    out[1::2] = right_stack
    return out


def _infer_patch(left_stack, right_stack, ndisp, params, batch=256):
    h, w = left_stack.shape[1:]
    dtype = params.dtype
    cost = np.ones((ndisp, h, w), dtype=np.float32)
    if h < PATCH or w < PATCH:
        return cost
    for d in range(ndisp):
        planes = interleave_arrays(left_stack, _shift_right(right_stack, d))
        windows = np.lib.stride_tricks.sliding_window_view(planes, (PATCH, PATCH), axis=(1, 2))
        ys, xs = np.mgrid[RADIUS : h - RADIUS, max(RADIUS, d + RADIUS) : w - RADIUS]
        ys, xs = ys.ravel(), xs.ravel()
        for start in range(0, len(ys), batch):
            yy = ys[start : start + batch]
            xx = xs[start : start + batch]
            patches = windows[:, yy - RADIUS, xx - RADIUS].transpose(1, 0, 2, 3)
            logits, _ = forward(params, patches[:, None].astype(dtype))
            cost[d, yy, xx] = _softmax_class1(logits, axis=1)
    return cost


def volume_validity(height: int, width: int, ndisp: int, radius: int) -> np.ndarray:
    """Cells whose patch fits the frame on both views."""
    valid = np.zeros((ndisp, height, width), dtype=bool)
    if height < 2 * radius + 1 or width < 2 * radius + 1:
        return valid
    ys, xs = np.mgrid[0:height, 0:width]
    in_left = (
        (ys >= radius) & (ys <= height - 1 - radius) & (xs >= radius) & (xs <= width - 1 - radius)
    )
    for d in range(ndisp):
        valid[d] = in_left & (xs - d >= radius)
    return valid


def infer_cost_volume(
    left: GrayImage,
    right: GrayImage,
    calib: CalibInfo,
    cfg: TransformConfig,
    params: NetworkParams,
    method: str = "conv",
    band_rows: Optional[int] = None,
    stacks: Optional[tuple] = None,
) -> CostVolume:
    """Score every (x, y, d) cell with the matching network.

    ``method="conv"`` slides the whole network over the frame (fully
    connected layers recast as convolutions); ``method="patch"`` evaluates
    every patch pair literally and serves as the reference path.
    """
    _check_matcher(params)
    if left.data.shape != right.data.shape:
        raise ParameterError("left/right dimensions differ")
    if stacks is None:
        left_stack = build_stack(left, cfg).channels
        right_stack = build_stack(right, cfg).channels
    else:
        left_stack, right_stack = stacks
    ndisp = calib.ndisp
    if method == "conv":
        data = _infer_conv(left_stack, right_stack, ndisp, params, band_rows)
    elif method == "patch":
        data = _infer_patch(left_stack, right_stack, ndisp, params)
    else:
        raise ParameterError(f"unknown inference method {method!r}")
    valid = volume_validity(left.height, left.width, ndisp, RADIUS)
    data[~valid] = 1.0
    np.clip(data, 0.0, 1.0, out=data)
    return CostVolume(data, valid, ndisp)


def wta(volume: CostVolume) -> DisparityMap:
    """Per-pixel argmin over valid cells; ties break toward the smaller
    disparity; pixels with no valid cell become invalid."""
    masked = np.where(volume.valid, volume.data, np.inf)
    best = masked.argmin(axis=0).astype(np.float32)
    best[~volume.valid.any(axis=0)] = INVALID
    return DisparityMap(best, ndisp=volume.ndisp)


# ---------------------------------------------------------------------------
# classical baselines


def _box_sum_valid(a: np.ndarray, w: int) -> np.ndarray:
    """Sums over all w-by-w windows fully inside ``a``; (H-w+1, W-w+1)."""
    c = np.cumsum(np.cumsum(a, axis=0, dtype=np.float64), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    return c[w:, w:] - c[:-w, w:] - c[w:, :-w] + c[:-w, :-w]


def _census_bits(levels: np.ndarray, w: int) -> np.ndarray:
    """Comparison bit planes (neighbour > center) for all full windows."""
    r = w // 2
    h, wd = levels.shape
    ch, cw = h - 2 * r, wd - 2 * r
    center = levels[r : r + ch, r : r + cw]
    bits = np.empty((w * w - 1, ch, cw), dtype=bool)
    i = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            bits[i] = levels[r + dy : r + dy + ch, r + dx : r + dx + cw] > center
            i += 1
    return bits


def baseline_cost(
    left: GrayImage,
    right: GrayImage,
    calib: CalibInfo,
    method: str = "census",
    window: int = 7,
) -> CostVolume:
    """Window-aggregated classical matching costs, lower = better, in [0, 1].

    SAD/SSD are window means of absolute/squared intensity differences; NCC
    is stored as (1 - ncc) / 2; census is the normalized Hamming distance
    between comparison bit-strings of the 8-bit views.
    """
    method = method.lower()
    if method not in BASELINE_METHODS:
        raise ParameterError(f"method must be one of {BASELINE_METHODS}, got {method!r}")
    if window < 3 or window % 2 == 0:
        raise ParameterError(f"window must be odd and >= 3, got {window}")
    if left.data.shape != right.data.shape:
        raise ParameterError("left/right dimensions differ")
    h, w = left.data.shape
    r = window // 2
    ndisp = calib.ndisp
    data = np.ones((ndisp, h, w), dtype=np.float64)
    valid = volume_validity(h, w, ndisp, r)
    if h < window or w < window:
        return CostVolume(data, valid, ndisp)

    area = float(window * window)
    li = left.data
    if method == "census":
        lbits = _census_bits(left.levels(), window)
        rbits = _census_bits(right.levels(), window)
    elif method == "ncc":
        lsum = _box_sum_valid(li, window)
        lsq = _box_sum_valid(li * li, window)

    for d in range(ndisp):
        ri = _shift_right(right.data[None], d)[0]
        if method == "sad":
            win = _box_sum_valid(np.abs(li - ri), window) / area
        elif method == "ssd":
            win = _box_sum_valid((li - ri) ** 2, window) / area
        elif method == "ncc":
            rsum = _box_sum_valid(ri, window)
            rsq = _box_sum_valid(ri * ri, window)
            cross = _box_sum_valid(li * ri, window)
            lvar = lsq / area - (lsum / area) ** 2
            rvar = rsq / area - (rsum / area) ** 2
            cov = cross / area - (lsum / area) * (rsum / area)
            denom = np.sqrt(np.maximum(lvar, 0.0) * np.maximum(rvar, 0.0))
            ncc = np.where(denom > 1e-12, cov / np.maximum(denom, 1e-300), 0.0)
            win = (1.0 - np.clip(ncc, -1.0, 1.0)) / 2.0
        else:  # census
            rb = np.zeros_like(lbits)
            if d == 0:
                rb = rbits
            elif d < rbits.shape[2]:
                rb[:, :, d:] = rbits[:, :, : rbits.shape[2] - d]
            win = (lbits ^ rb).sum(axis=0) / (window * window - 1)
        data[d, r : h - r, r : w - r] = np.clip(win, 0.0, 1.0)
    data[~valid] = 1.0
    return CostVolume(data, valid, ndisp)
