"""Raster and dataset I/O.

Handles 8-bit grayscale/RGB PNG and PGM images, PFM float maps for
disparities, ``calib.txt`` metadata, and Middlebury-2014-style dataset
directories.  Grayscale intensities are stored as floats in [0, 1] with an
exact 8-bit quantized view; disparity maps use ``+inf`` as the invalid
marker.
"""

from __future__ import annotations

import io
import logging
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CalibError, DatasetError, ImageFormatError, ParameterError

log = logging.getLogger(__name__)

#: Marker stored in DisparityMap cells that carry no disparity.
INVALID = np.float32(np.inf)

_LUMA = np.array([0.299, 0.587, 0.114])

_RESOLUTION_FACTORS = {"full": 1, "half": 2, "quarter": 4}


@dataclass(frozen=True)
class GrayImage:
    """Single-channel raster with intensities in [0, 1].

    ``data`` is a row-major (height, width) float64 array.  Every value is
    an exact multiple of 1/255, so :meth:`levels` recovers the 8-bit view
    losslessly.
    """

    data: np.ndarray

    def __post_init__(self):
        d = np.array(self.data, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise ParameterError(f"image data must be 2-D and non-empty, got shape {d.shape}")
        if np.any(d < 0.0) or np.any(d > 1.0):
            raise ParameterError("image intensities must lie in [0, 1]")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def levels(self) -> np.ndarray:
        """8-bit quantized view (np.uint8, same shape)."""
        return np.rint(self.data * 255.0).astype(np.uint8)

    @classmethod
    def from_levels(cls, levels: np.ndarray) -> "GrayImage":
        levels = np.asarray(levels)
        if levels.dtype != np.uint8:
            if np.any((levels < 0) | (levels > 255)):
                raise ParameterError("levels must lie in 0..255")
            levels = levels.astype(np.uint8)
        return cls(levels.astype(np.float64) / 255.0)


@dataclass(frozen=True)
class DisparityMap:
    """Per-pixel disparity in pixels; invalid cells hold ``+inf``.

    ``ndisp``, when attached, is the exclusive upper bound of the valid
    disparity range and every finite value must lie below it.
    """

    data: np.ndarray
    ndisp: Optional[int] = None

    def __post_init__(self):
        d = np.array(self.data, dtype=np.float32)
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise ParameterError(f"disparity data must be 2-D and non-empty, got shape {d.shape}")
        d[~np.isfinite(d)] = INVALID
        finite = np.isfinite(d)
        if np.any(d[finite] < 0.0):
            raise ParameterError("finite disparities must be >= 0")
        if self.ndisp is not None:
            if self.ndisp < 1:
                raise ParameterError("ndisp must be >= 1")
            if np.any(d[finite] >= self.ndisp):
                raise ParameterError(f"finite disparities must be < ndisp={self.ndisp}")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.data)


@dataclass(frozen=True)
class CalibInfo:
    """Scene metadata needed to size cost volumes.

    ``width``/``height`` may be None when the calibration text omits them;
    the dataset loader fills them in from the images.
    """

    ndisp: int
    width: Optional[int] = None
    height: Optional[int] = None
    dataset_name: str = ""

    def __post_init__(self):
        if self.ndisp < 1:
            raise CalibError(f"ndisp must be >= 1, got {self.ndisp}")
        for name in ("width", "height"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise CalibError(f"{name} must be >= 1, got {v}")


@dataclass(frozen=True)
class StereoPairRecord:
    """One rectified stereo scene: left/right views plus optional ground truth."""

    left: GrayImage
    right: GrayImage
    calib: CalibInfo
    gt: Optional[DisparityMap] = None
    nonocc_mask: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        shape = self.left.data.shape
        if self.right.data.shape != shape:
            raise ParameterError("left/right dimensions differ")
        if self.gt is not None and self.gt.data.shape != shape:
            raise ParameterError("ground-truth dimensions differ from images")
        if self.nonocc_mask is not None:
            m = np.asarray(self.nonocc_mask) != 0
            if m.shape != shape:
                raise ParameterError("mask dimensions differ from images")
            m.flags.writeable = False
            object.__setattr__(self, "nonocc_mask", m)


# ---------------------------------------------------------------------------
# image decoding


def _luminance_levels(rgb: np.ndarray) -> np.ndarray:
    # Nearest-level rounding, ties away from zero (np.rint would round half
    # to even and e.g. map 127.5 to 128 anyway, but 140.5-style ties must not
    # land on the even neighbour).
    lum = rgb.astype(np.float64) @ _LUMA
    return np.floor(lum + 0.5).astype(np.uint8)


def _parse_pgm(data: bytes) -> np.ndarray:
    """Parse PGM P5 (binary) or P2 (ASCII) into a uint8 level array."""
    if len(data) < 2:
        raise ImageFormatError("truncated PGM header at offset 0")
    magic = data[:2]
    if magic not in (b"P5", b"P2"):
        raise ImageFormatError(f"not a PGM file (bad magic at offset 0: {magic!r})")

    pos = 2
    tokens = []
    while len(tokens) < 3:
        if pos >= len(data):
            raise ImageFormatError(f"truncated PGM header at offset {pos}")
        c = data[pos : pos + 1]
        if c == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise ImageFormatError(f"unterminated PGM comment at offset {pos}")
            pos = nl + 1
        elif c.isspace():
            pos += 1
        else:
            m = re.match(rb"[0-9]+", data[pos:])
            if not m:
                raise ImageFormatError(f"expected integer in PGM header at offset {pos}")
            tokens.append(int(m.group()))
            pos += m.end()
    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise ImageFormatError(f"bad PGM dimensions {width}x{height} in header")
    if not 1 <= maxval <= 255:
        raise ImageFormatError(f"unsupported PGM maxval {maxval} (only 8-bit supported)")

    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        need = width * height
        payload = data[pos : pos + need]
        if len(payload) < need:
            raise ImageFormatError(
                f"PGM payload truncated at offset {pos + len(payload)}: "
                f"expected {need} bytes"
            )
        values = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
    else:
        text = data[pos:].split()
        if len(text) < width * height:
            raise ImageFormatError(f"PGM P2 payload has {len(text)} samples, expected {width * height}")
        try:
            values = np.array([int(t) for t in text[: width * height]], dtype=np.int64)
        except ValueError as exc:
            raise ImageFormatError(f"non-numeric sample in PGM P2 payload: {exc}") from exc
    if np.any(values > maxval):
        raise ImageFormatError("PGM sample exceeds declared maxval")
    if maxval != 255:
        values = np.rint(values * (255.0 / maxval)).astype(np.int64)
    return values.reshape(height, width).astype(np.uint8)


def decode_image(data: bytes) -> GrayImage:
    """Decode PNG (8-bit gray/RGB) or PGM (P5/P2) bytes to a grayscale image.

    RGB input is converted via luminance 0.299R + 0.587G + 0.114B, rounded
    to the nearest 8-bit level before scaling to [0, 1].
    """
    if data[:2] in (b"P5", b"P2"):
        return GrayImage.from_levels(_parse_pgm(data))
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            img = Image.open(io.BytesIO(data))
            img.load()
        except (UnidentifiedImageError, OSError) as exc:
            raise ImageFormatError(f"malformed PNG stream: {exc}") from exc
        if img.mode == "L":
            return GrayImage.from_levels(np.asarray(img, dtype=np.uint8))
        if img.mode == "RGB":
            return GrayImage.from_levels(_luminance_levels(np.asarray(img, dtype=np.uint8)))
        raise ImageFormatError(f"unsupported PNG mode {img.mode!r} (need 8-bit gray or RGB)")
    raise ImageFormatError(f"unrecognized image magic at offset 0: {data[:8]!r}")


def write_pgm(img: GrayImage) -> bytes:
    """Encode a grayscale image as binary PGM (P5, maxval 255)."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.levels().tobytes()


# ---------------------------------------------------------------------------
# PFM float maps


def read_pfm(data: bytes) -> DisparityMap:
    """Read a single-channel PFM ("Pf") byte stream into a DisparityMap.

    Rows are flipped from the file's bottom-to-top order; non-finite samples
    become the invalid marker.  The scale line's sign selects endianness.
    """
    pos = 0

    def next_line():
        nonlocal pos
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise ImageFormatError(f"truncated PFM header at offset {pos}")
        line = data[pos:nl]
        pos = nl + 1
        return line

    magic = next_line().strip()
    if magic != b"Pf":
        raise ImageFormatError(f"not a single-channel PFM (magic {magic!r}, need b'Pf')")
    dims = next_line().split()
    if len(dims) != 2:
        raise ImageFormatError("PFM dimension line must hold two integers")
    try:
        width, height = int(dims[0]), int(dims[1])
    except ValueError as exc:
        raise ImageFormatError(f"bad PFM dimensions: {exc}") from exc
    if width < 1 or height < 1:
        raise ImageFormatError(f"bad PFM dimensions {width}x{height}")
    try:
        scale = float(next_line().strip())
    except ValueError as exc:
        raise ImageFormatError(f"bad PFM scale line: {exc}") from exc

    need = width * height * 4
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise ImageFormatError(
            f"PFM payload holds {len(payload)} bytes, expected {need}"
        )
    dtype = "<f4" if scale < 0 else ">f4"
    samples = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return DisparityMap(np.flipud(samples.astype(np.float32)))


def write_pfm(dmap: DisparityMap) -> bytes:
    """Encode a DisparityMap as little-endian PFM, invalid cells as +inf."""
    header = f"Pf\n{dmap.width} {dmap.height}\n-1.0\n".encode("ascii")
    rows = np.flipud(dmap.data).astype("<f4")
    return header + rows.tobytes()


# ---------------------------------------------------------------------------
# calibration and dataset layout


def parse_calib(text: str, dataset_name: str = "") -> CalibInfo:
    """Parse line-oriented ``key=value`` calibration text.

    ``ndisp`` is required; ``width``/``height`` are picked up when present
    and unknown keys are ignored.
    """
    values = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or "=" not in line:
            continue
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    if "ndisp" not in values:
        raise CalibError("calibration text lacks required key 'ndisp'")

    def to_int(key):
        if key not in values:
            return None
        try:
            return int(round(float(values[key])))
        except ValueError as exc:
            raise CalibError(f"calibration key {key!r} is not numeric: {values[key]!r}") from exc

    return CalibInfo(
        ndisp=to_int("ndisp"),
        width=to_int("width"),
        height=to_int("height"),
        dataset_name=dataset_name,
    )


def box_downsample(img: GrayImage, factor: int) -> GrayImage:
    """Downsample by k-by-k box averaging; ragged edge blocks average the
    in-bounds pixels only.  The result is re-quantized to 8-bit levels."""
    if factor == 1:
        return img
    d = img.data
    h, w = d.shape
    row_idx = np.arange(0, h, factor)
    col_idx = np.arange(0, w, factor)
    sums = np.add.reduceat(np.add.reduceat(d, row_idx, axis=0), col_idx, axis=1)
    row_counts = np.minimum(row_idx + factor, h) - row_idx
    col_counts = np.minimum(col_idx + factor, w) - col_idx
    means = sums / np.outer(row_counts, col_counts)
    return GrayImage.from_levels(np.rint(means * 255.0).astype(np.uint8))


def scale_disparity(dmap: DisparityMap, factor: int) -> DisparityMap:
    """Subsample ground truth by taking each block's top-left cell divided by
    the factor; invalid cells stay invalid."""
    if factor == 1:
        return dmap
    data = dmap.data[::factor, ::factor] / factor
    ndisp = None if dmap.ndisp is None else math.ceil(dmap.ndisp / factor)
    return DisparityMap(data, ndisp=ndisp)


def _find_image(scene_dir: Path, stem: str) -> Optional[Path]:
    for ext in (".png", ".pgm"):
        p = scene_dir / (stem + ext)
        if p.is_file():
            return p
    return None


def load_scene(scene_dir: Path, resolution: str = "half", right_variant: str = "") -> StereoPairRecord:
    """Load one scene directory (im0/im1 [+ disp0GT.pfm, mask0nocc, calib.txt])."""
    scene_dir = Path(scene_dir)
    if resolution not in _RESOLUTION_FACTORS:
        raise ParameterError(f"resolution must be one of {sorted(_RESOLUTION_FACTORS)}")
    factor = _RESOLUTION_FACTORS[resolution]

    left_path = _find_image(scene_dir, "im0")
    right_path = _find_image(scene_dir, "im1" + right_variant)
    if left_path is None or right_path is None:
        raise DatasetError(f"scene {scene_dir.name!r}: missing im0/im1 image")
    left = decode_image(left_path.read_bytes())
    right = decode_image(right_path.read_bytes())

    calib_path = scene_dir / "calib.txt"
    if calib_path.is_file():
        calib = parse_calib(calib_path.read_text(), dataset_name=scene_dir.name)
    else:
        raise DatasetError(f"scene {scene_dir.name!r}: missing calib.txt")

    gt = None
    gt_path = scene_dir / "disp0GT.pfm"
    if gt_path.is_file():
        gt = read_pfm(gt_path.read_bytes())

    mask = None
    mask_path = _find_image(scene_dir, "mask0nocc")
    if mask_path is not None:
        mask = decode_image(mask_path.read_bytes()).levels() != 0

    left = box_downsample(left, factor)
    right = box_downsample(right, factor)
    if gt is not None:
        gt = scale_disparity(gt, factor)
    if mask is not None:
        mask = mask[::factor, ::factor]

    calib = replace(
        calib,
        ndisp=math.ceil(calib.ndisp / factor),
        width=left.width,
        height=left.height,
    )
    return StereoPairRecord(
        left=left, right=right, calib=calib, gt=gt, nonocc_mask=mask, name=scene_dir.name
    )


def load_dataset(root, resolution: str = "half", right_variant: str = "") -> list[StereoPairRecord]:
    """Load every scene subdirectory of ``root`` in lexicographic name order.

    Scenes that fail to load are skipped with a logged report; an empty or
    missing root yields an empty list.
    """
    root = Path(root)
    if not root.is_dir():
        return []
    records = []
    for scene_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        try:
            records.append(load_scene(scene_dir, resolution, right_variant))
        except (DatasetError, ImageFormatError, CalibError) as exc:
            log.warning("skipping scene %r: %s", scene_dir.name, exc)
    return records
