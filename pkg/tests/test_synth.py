import numpy as np
import pytest

from semistereo.errors import ParameterError
from semistereo.matchnet import baseline_cost, wta
from semistereo.metrics import bad_n
from semistereo.synth import SyntheticSceneSpec, gen_synthetic


class TestSpecValidation:
    def test_ndisp_too_large(self):
        with pytest.raises(ParameterError, match="ndisp"):
            SyntheticSceneSpec(width=64, height=64, ndisp=32)

    def test_small_dims_rejected(self):
        with pytest.raises(ParameterError):
            SyntheticSceneSpec(width=32, height=64)

    def test_bad_density(self):
        with pytest.raises(ParameterError):
            SyntheticSceneSpec(texture_density=0.0)


class TestGeneration:
    def test_fixed_seed_reproducible(self):
        a = gen_synthetic(SyntheticSceneSpec(seed=9))
        b = gen_synthetic(SyntheticSceneSpec(seed=9))
        assert np.array_equal(a.left.data, b.left.data)
        assert np.array_equal(a.right.data, b.right.data)
        assert np.array_equal(a.gt.data, b.gt.data)
        assert np.array_equal(a.nonocc_mask, b.nonocc_mask)

    def test_dimensions_and_ranges(self):
        rec = gen_synthetic(SyntheticSceneSpec(width=96, height=80, ndisp=12, seed=1))
        assert rec.left.data.shape == (80, 96)
        assert rec.gt.data.shape == (80, 96)
        assert rec.gt.valid_mask().all()
        assert rec.gt.data.max() < 12
        assert rec.gt.data.min() >= 0

    def test_nonoccluded_pixels_warp_consistently(self):
        """Construction invariant: a non-occluded source wins its target."""
        rec = gen_synthetic(SyntheticSceneSpec(seed=3, lighting_gain=1.0))
        left = rec.left.levels()
        right = rec.right.levels()
        disp = rec.gt.data.astype(int)
        ys, xs = np.nonzero(rec.nonocc_mask)
        assert np.array_equal(right[ys, xs - disp[ys, xs]], left[ys, xs])

    def test_occlusion_marks_overwritten_sources(self):
        rec = gen_synthetic(SyntheticSceneSpec(seed=4, lighting_gain=1.0))
        disp = rec.gt.data.astype(int)
        h, w = disp.shape
        # recompute winners independently
        occluded = np.zeros((h, w), dtype=bool)
        for y in range(h):
            best = {}
            for x in range(w):
                t = x - disp[y, x]
                if t < 0:
                    occluded[y, x] = True
                    continue
                if t not in best or disp[y, x] > disp[y, best[t]]:
                    best[t] = x
            for x in range(w):
                t = x - disp[y, x]
                if t >= 0 and best[t] != x:
                    occluded[y, x] = True
        assert np.array_equal(~occluded, rec.nonocc_mask)

    def test_lighting_gain_brightens_right(self):
        dim = gen_synthetic(SyntheticSceneSpec(seed=5, lighting_gain=1.0))
        lit = gen_synthetic(SyntheticSceneSpec(seed=5, lighting_gain=1.3))
        assert lit.right.data.mean() > dim.right.data.mean()
        assert np.array_equal(dim.left.data, lit.left.data)

    def test_textureless_fraction_creates_flat_regions(self):
        rec = gen_synthetic(SyntheticSceneSpec(seed=6, textureless_fraction=0.3))
        # local variance collapses somewhere
        lv = rec.left.levels().astype(float)
        patch_sd = [lv[y : y + 8, x : x + 8].std() for y in range(0, 120, 8) for x in range(0, 120, 8)]
        assert min(patch_sd) == 0.0

    def test_census_wta_accuracy_on_clean_scene(self):
        rec = gen_synthetic(SyntheticSceneSpec(seed=7, lighting_gain=1.0))
        vol = baseline_cost(rec.left, rec.right, rec.calib, "census", 7)
        frac, _, _ = bad_n(wta(vol), rec.gt, rec.nonocc_mask, 1.0)
        assert frac < 0.05
