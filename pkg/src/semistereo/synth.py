"""Random-dot synthetic stereo scenes with exact ground truth.

A scene is a random-dot left image over a piecewise-constant disparity
field (a background plane plus a few fronto-parallel rectangles).  The
right view is synthesized by forward-warping with nearer-surface-wins
occlusion handling, fresh dots in disoccluded areas, and an optional
multiplicative lighting gain.  Optional constant-intensity rectangles
create textureless regions.  Ground truth and the occlusion mask are exact
by construction, which makes these scenes usable as test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .imageio import CalibInfo, DisparityMap, GrayImage, StereoPairRecord

BACKGROUND_LEVEL = 128


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Knobs for one generated scene."""

    width: int = 128
    height: int = 128
    ndisp: int = 16
    texture_density: float = 1.0
    textureless_fraction: float = 0.0
    lighting_gain: float = 1.0
    seed: int = 0
    n_rects: int = 3

    def __post_init__(self):
        if self.width < 64 or self.height < 64:
            raise ParameterError("scene dimensions must be >= 64")
        if self.ndisp < 2:
            raise ParameterError("ndisp must be >= 2")
        if self.ndisp >= self.width / 2:
            raise ParameterError(f"ndisp {self.ndisp} too large for width {self.width}")
        if not 0.0 < self.texture_density <= 1.0:
            raise ParameterError("texture_density must lie in (0, 1]")
        if not 0.0 <= self.textureless_fraction < 1.0:
            raise ParameterError("textureless_fraction must lie in [0, 1)")
        if self.lighting_gain <= 0.0:
            raise ParameterError("lighting_gain must be positive")
        if not 2 <= self.n_rects <= 4:
            raise ParameterError("n_rects must lie in 2..4")


def _random_dots(rng, shape, density) -> np.ndarray:
    levels = rng.integers(0, 256, size=shape)
    if density < 1.0:
        textured = rng.random(shape) < density
        levels = np.where(textured, levels, BACKGROUND_LEVEL)
    return levels.astype(np.int64)


def gen_synthetic(spec: SyntheticSceneSpec) -> StereoPairRecord:
    """Generate one reproducible scene from its spec."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width

    left = _random_dots(rng, (h, w), spec.texture_density)

    # disparity field: background plane plus nearer rectangles
    d_bg = int(rng.integers(1, min(4, spec.ndisp)))
    disp = np.full((h, w), d_bg, dtype=np.int64)
    for _ in range(spec.n_rects):
        rh = int(rng.integers(h // 6, h // 3 + 1))
        rw = int(rng.integers(w // 6, w // 3 + 1))
        y0 = int(rng.integers(0, h - rh + 1))
        x0 = int(rng.integers(0, w - rw + 1))
        d = int(rng.integers(d_bg + 1, spec.ndisp)) if spec.ndisp > d_bg + 1 else d_bg
        disp[y0 : y0 + rh, x0 : x0 + rw] = np.maximum(disp[y0 : y0 + rh, x0 : x0 + rw], d)

    # textureless rectangles painted onto the left view
    if spec.textureless_fraction > 0.0:
        target = spec.textureless_fraction * h * w
        covered = 0.0
        for _ in range(8):
            if covered >= target:
                break
            rh = int(rng.integers(h // 6, h // 3 + 1))
            rw = int(rng.integers(w // 6, w // 3 + 1))
            y0 = int(rng.integers(0, h - rh + 1))
            x0 = int(rng.integers(0, w - rw + 1))
            left[y0 : y0 + rh, x0 : x0 + rw] = int(rng.integers(0, 256))
            covered += rh * rw

    # forward warp left -> right; larger disparity (nearer) wins conflicts
    right = np.full((h, w), -1, dtype=np.int64)
    win_d = np.full((h, w), -1, dtype=np.int64)
    xs = np.arange(w)
    for y in range(h):
        targets = xs - disp[y]
        order = np.argsort(disp[y], kind="stable")  # nearer written last
        src = xs[order]
        tgt = targets[order]
        ok = tgt >= 0
        right[y, tgt[ok]] = left[y, src[ok]]
        win_d[y, tgt[ok]] = disp[y, order][ok]

    occluded = np.zeros((h, w), dtype=bool)
    for y in range(h):
        targets = xs - disp[y]
        off = targets < 0
        occluded[y, off] = True
        on = ~off
        occluded[y, on] = win_d[y, targets[on]] > disp[y, on]

    hole = right < 0
    right[hole] = _random_dots(rng, (h, w), spec.texture_density)[hole]

    if spec.lighting_gain != 1.0:
        right = np.clip(np.rint(right * spec.lighting_gain), 0, 255).astype(np.int64)

    name = f"synth{spec.seed:05d}"
    return StereoPairRecord(
        left=GrayImage.from_levels(left.astype(np.uint8)),
        right=GrayImage.from_levels(right.astype(np.uint8)),
        calib=CalibInfo(ndisp=spec.ndisp, width=w, height=h, dataset_name=name),
        gt=DisparityMap(disp.astype(np.float32)),
        nonocc_mask=~occluded,
        name=name,
    )
