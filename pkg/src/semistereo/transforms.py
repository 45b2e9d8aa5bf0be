"""Non-parametric image transforms feeding the matcher.

The rank transform scores each pixel by the fraction of window neighbours
strictly brighter than it (robust to monotone lighting changes); the
companion transform scores the fraction of equal-intensity pixels along
rays from the pixel (adds long-range structure to textureless regions).
Both operate on the 8-bit quantized view, clip their windows at image
borders and renormalize by the in-bounds count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .imageio import GrayImage, write_pgm

# Ray direction sets, (dy, dx) unit steps.  4 = axis-aligned, 8 adds the
# diagonals, 16 adds the knight-move half-diagonals.
_COMPASS_4 = [(0, 1), (0, -1), (-1, 0), (1, 0)]
_DIAGONAL_4 = [(-1, 1), (-1, -1), (1, 1), (1, -1)]
_KNIGHT_8 = [(-1, 2), (-2, 1), (-2, -1), (-1, -2), (1, -2), (2, -1), (2, 1), (1, 2)]
RAY_SETS = {
    4: _COMPASS_4,
    8: _COMPASS_4 + _DIAGONAL_4,
    16: _COMPASS_4 + _DIAGONAL_4 + _KNIGHT_8,
}


@dataclass(frozen=True)
class TransformConfig:
    """Window sizes and ray layout for the channel stack."""

    rank_window: int = 31
    companion_window: int = 61
    ray_directions: int = 8

    def __post_init__(self):
        _check_window(self.rank_window)
        _check_window(self.companion_window)
        if self.ray_directions not in RAY_SETS:
            raise ParameterError(
                f"ray_directions must be one of {sorted(RAY_SETS)}, got {self.ray_directions}"
            )


@dataclass(frozen=True)
class ChannelStack:
    """Ordered same-size channels for one view, values in [0, 1]."""

    channels: np.ndarray  # (n_channels, height, width)
    labels: tuple[str, ...]

    def __post_init__(self):
        c = np.asarray(self.channels, dtype=np.float64)
        if c.ndim != 3:
            raise ParameterError(f"channels must be (n, h, w), got shape {c.shape}")
        if c.shape[0] != len(self.labels):
            raise ParameterError("one label per channel required")
        if np.any(c < 0.0) or np.any(c > 1.0):
            raise ParameterError("channel values must lie in [0, 1]")
        c.flags.writeable = False
        object.__setattr__(self, "channels", c)

    @property
    def width(self) -> int:
        return self.channels.shape[2]

    @property
    def height(self) -> int:
        return self.channels.shape[1]

    def __len__(self) -> int:
        return self.channels.shape[0]


def _check_window(w: int):
    if w < 3 or w % 2 == 0:
        raise ParameterError(f"window size must be odd and >= 3, got {w}")


def _offset_region(shape, dy, dx):
    """Slices of the center/neighbour arrays for which pixel+offset is in bounds."""
    h, w = shape
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    yn = slice(max(0, dy), min(h, h + dy))
    xn = slice(max(0, dx), min(w, w + dx))
    return (ys, xs), (yn, xn)


def rank_transform(img: GrayImage, w: int) -> np.ndarray:
    """Fraction of the w-by-w window strictly brighter than the center pixel.

    The window (center included, contributing zero) is clipped at borders
    and the count normalized by the in-bounds window size, so values lie in
    [0, (|N|-1)/|N|].

    Parameters
    ----------
    img : GrayImage
    w : int
        Odd window size >= 3.

    Returns
    -------
    np.ndarray
        (height, width) float64 raster in [0, 1).
    """
    _check_window(w)
    levels = img.levels().astype(np.int16)
    r = w // 2
    counts = np.zeros(levels.shape, dtype=np.int64)
    denom = np.zeros(levels.shape, dtype=np.int64)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            center, neigh = _offset_region(levels.shape, dy, dx)
            denom[center] += 1
            if dy == 0 and dx == 0:
                continue
            counts[center] += levels[neigh] > levels[center]
    return counts / denom


def _ray_offsets(w: int, directions: int):
    """All (dy, dx) offsets on the rays, deduplicated, within the w-window."""
    r = w // 2
    offsets = []
    for dy, dx in RAY_SETS[directions]:
        tmax = r // max(abs(dy), abs(dx))
        for t in range(1, tmax + 1):
            offsets.append((t * dy, t * dx))
    return offsets


def companion_transform(img: GrayImage, w: int, directions: int = 8) -> np.ndarray:
    """Fraction of same-level pixels along rays from each pixel.

    Rays start at the pixel (excluded), step in `directions` unit
    directions, and are clipped to the w-by-w window and image bounds.
    Equality is tested on 8-bit levels.  Pixels with an empty ray set
    (possible only for degenerate single-pixel images) map to 0.

    Parameters
    ----------
    img : GrayImage
    w : int
        Odd window size >= 3.
    directions : int
        4, 8 or 16 ray directions.

    Returns
    -------
    np.ndarray
        (height, width) float64 raster in [0, 1].
    """
    _check_window(w)
    if directions not in RAY_SETS:
        raise ParameterError(f"directions must be one of {sorted(RAY_SETS)}, got {directions}")
    levels = img.levels()
    counts = np.zeros(levels.shape, dtype=np.int64)
    denom = np.zeros(levels.shape, dtype=np.int64)
    for dy, dx in _ray_offsets(w, directions):
        center, neigh = _offset_region(levels.shape, dy, dx)
        denom[center] += 1
        counts[center] += levels[neigh] == levels[center]
    out = np.zeros(levels.shape, dtype=np.float64)
    np.divide(counts, denom, out=out, where=denom > 0)
    return out


def build_stack(img: GrayImage, cfg: TransformConfig) -> ChannelStack:
    """Assemble the per-view 3-channel stack [gray, rank, companion]."""
    return ChannelStack(
        channels=np.stack(
            [
                img.data,
                rank_transform(img, cfg.rank_window),
                companion_transform(img, cfg.companion_window, cfg.ray_directions),
            ]
        ),
        labels=("gray", "rank", "companion"),
    )


def interleave(left: ChannelStack, right: ChannelStack) -> np.ndarray:
    """Interleave two l-channel stacks into [L0, R0, L1, R1, ...].

    Adjacent left/right pairs let a depth-2, stride-2 convolution in the
    third dimension see matched channel pairs.
    """
    if left.channels.shape != right.channels.shape:
        raise ParameterError(
            f"stack shapes differ: {left.channels.shape} vs {right.channels.shape}"
        )
    l = len(left)
    out = np.empty((2 * l,) + left.channels.shape[1:], dtype=np.float64)
    out[0::2] = left.channels
    out[1::2] = right.channels
    return out


def dump_pgm(raster: np.ndarray, path) -> None:
    """Debug dump of a [0, 1] raster as an 8-bit PGM file."""
    img = GrayImage.from_levels(np.rint(np.clip(raster, 0.0, 1.0) * 255.0).astype(np.uint8))
    with open(path, "wb") as f:
        f.write(write_pgm(img))
