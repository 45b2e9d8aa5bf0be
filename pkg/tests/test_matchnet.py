import numpy as np
import pytest

from semistereo import matchnet
from semistereo.errors import (
    IncompatibleArchitectureError,
    ParameterError,
    SamplingError,
)
from semistereo.imageio import CalibInfo, GrayImage
from semistereo.matchnet import (
    CostVolume,
    baseline_cost,
    infer_cost_volume,
    load_cost_volume,
    matching_net_spec,
    sample_matching_patches,
    save_cost_volume,
    wta,
)
from semistereo.synth import SyntheticSceneSpec, gen_synthetic
from semistereo.tensornet import init_params
from semistereo.tensornet.network import flatten_width, trace_shapes
from semistereo.transforms import TransformConfig, build_stack

SMALL_CFG = TransformConfig(rank_window=5, companion_window=5)


def random_pair(rng, shape=(24, 24), ndisp=5):
    left = GrayImage.from_levels(rng.integers(0, 256, shape, dtype=np.uint8))
    right = GrayImage.from_levels(rng.integers(0, 256, shape, dtype=np.uint8))
    calib = CalibInfo(ndisp=ndisp, width=shape[1], height=shape[0])
    return left, right, calib


@pytest.fixture(scope="module")
def matcher_params():
    return init_params(matching_net_spec(), matchnet.INPUT_SHAPE, seed=11)


@pytest.fixture(scope="module")
def sampling_records():
    return [gen_synthetic(SyntheticSceneSpec(width=64, height=64, ndisp=8, seed=s)) for s in (1, 2)]


class TestSpec:
    def test_input_dims(self):
        assert matchnet.INPUT_SHAPE == (1, 6, 11, 11)

    def test_flatten_width_is_1600(self):
        assert flatten_width(matching_net_spec(), matchnet.INPUT_SHAPE) == 1600

    def test_output_width_two(self):
        assert trace_shapes(matching_net_spec(), matchnet.INPUT_SHAPE)[-1] == 2


class TestSampling:
    def test_balance_and_labels(self, sampling_records):
        batch = sample_matching_patches(sampling_records, SMALL_CFG, per_class=40, rng=0)
        assert np.sum(batch.labels == 0) == 40
        assert np.sum(batch.labels == 1) == 40
        assert batch.samples.shape == (80, 1, 6, 11, 11)

    def test_provenance_audit(self, sampling_records):
        by_name = {r.name: r for r in sampling_records}
        batch = sample_matching_patches(sampling_records, SMALL_CFG, per_class=50, rng=1)
        for (scene, x, y, d), label in zip(batch.provenance, batch.labels):
            rec = by_name[scene]
            w = rec.left.width
            assert 5 <= x <= w - 6 and 5 <= y <= rec.left.height - 6
            assert 5 <= x - d <= w - 6
            gt = rec.gt.data[y, x]
            assert np.isfinite(gt)
            if label == 0:
                assert d == int(np.rint(gt))
            else:
                assert abs(d - gt) > 1.0
                assert 0 <= d < rec.calib.ndisp

    def test_patches_match_manual_cut(self, sampling_records):
        batch = sample_matching_patches(sampling_records, SMALL_CFG, per_class=5, rng=2)
        rec = {r.name: r for r in sampling_records}[batch.provenance[0][0]]
        _, x, y, d = batch.provenance[0]
        left = build_stack(rec.left, SMALL_CFG).channels
        right = build_stack(rec.right, SMALL_CFG).channels
        expect_l = left[:, y - 5 : y + 6, x - 5 : x + 6]
        expect_r = right[:, y - 5 : y + 6, x - d - 5 : x - d + 6]
        assert np.allclose(batch.samples[0, 0, 0::2], expect_l, atol=1e-7)
        assert np.allclose(batch.samples[0, 0, 1::2], expect_r, atol=1e-7)

    def test_deterministic_given_seed(self, sampling_records):
        a = sample_matching_patches(sampling_records, SMALL_CFG, per_class=20, rng=3)
        b = sample_matching_patches(sampling_records, SMALL_CFG, per_class=20, rng=3)
        assert a.provenance == b.provenance
        assert np.array_equal(a.samples, b.samples)

    def test_records_without_gt_rejected(self):
        rec = gen_synthetic(SyntheticSceneSpec(width=64, height=64, ndisp=8, seed=3))
        from dataclasses import replace

        no_gt = replace(rec, gt=None)
        with pytest.raises(SamplingError):
            sample_matching_patches([no_gt], SMALL_CFG, per_class=4, rng=0)


class TestInference:
    def test_conv_equals_patch(self, matcher_params):
        rng = np.random.default_rng(7)
        left, right, calib = random_pair(rng)
        va = infer_cost_volume(left, right, calib, SMALL_CFG, matcher_params, method="conv")
        vb = infer_cost_volume(left, right, calib, SMALL_CFG, matcher_params, method="patch")
        assert np.array_equal(va.valid, vb.valid)
        assert np.abs(va.data[va.valid] - vb.data[vb.valid]).max() < 1e-5

    def test_banding_does_not_change_result(self, matcher_params):
        rng = np.random.default_rng(8)
        left, right, calib = random_pair(rng)
        va = infer_cost_volume(left, right, calib, SMALL_CFG, matcher_params, band_rows=3)
        vb = infer_cost_volume(left, right, calib, SMALL_CFG, matcher_params, band_rows=None)
        assert np.abs(va.data[va.valid] - vb.data[vb.valid]).max() < 1e-6

    def test_scores_in_unit_interval_and_borders_invalid(self, matcher_params):
        rng = np.random.default_rng(9)
        left, right, calib = random_pair(rng, ndisp=6)
        vol = infer_cost_volume(left, right, calib, SMALL_CFG, matcher_params)
        assert vol.data[vol.valid].min() >= 0.0
        assert vol.data[vol.valid].max() <= 1.0
        # x - d < 5 cells invalid
        for d in range(vol.ndisp):
            assert not vol.valid[d, :, : 5 + d].any()
        assert not vol.valid[:, :5, :].any()
        assert not vol.valid[:, -5:, :].any()

    def test_wrong_architecture_rejected(self):
        from semistereo.evalnet import evaluation_net_spec, INPUT_SHAPE as EVAL_SHAPE

        wrong = init_params(evaluation_net_spec(), EVAL_SHAPE, seed=0)
        rng = np.random.default_rng(0)
        left, right, calib = random_pair(rng)
        with pytest.raises(IncompatibleArchitectureError):
            infer_cost_volume(left, right, calib, SMALL_CFG, wrong)


class TestWta:
    def make_volume(self, data, valid=None):
        data = np.asarray(data, dtype=np.float32)
        if valid is None:
            valid = np.ones_like(data, dtype=bool)
        return CostVolume(data, valid, data.shape[0])

    def test_unique_minimum(self):
        vol = self.make_volume(np.array([0.9, 0.1, 0.5]).reshape(3, 1, 1))
        assert wta(vol).data[0, 0] == 1.0

    def test_tie_breaks_to_smaller_d(self):
        vol = self.make_volume(np.array([0.2, 0.2, 0.8]).reshape(3, 1, 1))
        assert wta(vol).data[0, 0] == 0.0

    def test_no_valid_cell_gives_invalid(self):
        data = np.zeros((2, 1, 1), dtype=np.float32)
        vol = self.make_volume(data, valid=np.zeros_like(data, dtype=bool))
        assert not wta(vol).valid_mask().any()

    def test_matches_brute_force(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            data = rng.random((4, 6, 5)).astype(np.float32)
            valid = rng.random((4, 6, 5)) < 0.8
            got = wta(self.make_volume(data, valid)).data
            for y in range(6):
                for x in range(5):
                    best, best_d = None, None
                    for d in range(4):
                        if valid[d, y, x] and (best is None or data[d, y, x] < best):
                            best, best_d = data[d, y, x], d
                    if best is None:
                        assert not np.isfinite(got[y, x])
                    else:
                        assert got[y, x] == best_d


class TestBaselines:
    def test_identical_pair_sad_zero_at_d0(self):
        rng = np.random.default_rng(11)
        img = GrayImage.from_levels(rng.integers(0, 256, (20, 20), dtype=np.uint8))
        calib = CalibInfo(ndisp=4, width=20, height=20)
        vol = baseline_cost(img, img, calib, "sad", 5)
        assert np.all(vol.data[0][vol.valid[0]] == 0.0)
        disp = wta(vol).data
        interior = disp[np.isfinite(disp)]
        assert np.all(interior == 0)

    def test_ncc_self_correlation_stored_zero(self):
        rng = np.random.default_rng(12)
        img = GrayImage.from_levels(rng.integers(0, 256, (16, 16), dtype=np.uint8))
        calib = CalibInfo(ndisp=2, width=16, height=16)
        vol = baseline_cost(img, img, calib, "ncc", 5)
        assert np.abs(vol.data[0][vol.valid[0]]).max() < 1e-6

    def test_sad_matches_triple_loop(self):
        rng = np.random.default_rng(13)
        left = GrayImage.from_levels(rng.integers(0, 256, (14, 15), dtype=np.uint8))
        right = GrayImage.from_levels(rng.integers(0, 256, (14, 15), dtype=np.uint8))
        calib = CalibInfo(ndisp=3, width=15, height=14)
        w, r = 5, 2
        vol = baseline_cost(left, right, calib, "sad", w)
        li, ri = left.data, right.data
        for d in range(3):
            for y in range(14):
                for x in range(15):
                    if not vol.valid[d, y, x]:
                        continue
                    acc = 0.0
                    for dy in range(-r, r + 1):
                        for dx in range(-r, r + 1):
                            acc += abs(li[y + dy, x + dx] - ri[y + dy, x + dx - d])
                    ref = acc / (w * w)
                    assert abs(vol.data[d, y, x] - ref) < 1e-10

    def test_census_range_and_validity(self):
        rng = np.random.default_rng(14)
        left = GrayImage.from_levels(rng.integers(0, 4, (18, 18), dtype=np.uint8) * 80)
        right = GrayImage.from_levels(rng.integers(0, 4, (18, 18), dtype=np.uint8) * 80)
        calib = CalibInfo(ndisp=3, width=18, height=18)
        vol = baseline_cost(left, right, calib, "census", 7)
        v = vol.data[vol.valid]
        assert v.min() >= 0.0 and v.max() <= 1.0

    def test_unknown_method(self):
        rng = np.random.default_rng(15)
        left, right, calib = random_pair(rng)
        with pytest.raises(ParameterError, match="method"):
            baseline_cost(left, right, calib, "zncc", 5)

    def test_even_window_rejected(self):
        rng = np.random.default_rng(16)
        left, right, calib = random_pair(rng)
        with pytest.raises(ParameterError, match="window"):
            baseline_cost(left, right, calib, "sad", 4)


class TestVolumeIO:
    def test_round_trip(self):
        rng = np.random.default_rng(17)
        data = rng.random((3, 5, 4)).astype(np.float32)
        valid = rng.random((3, 5, 4)) < 0.7
        vol = CostVolume(np.where(valid, data, 1.0).astype(np.float32), valid, 3)
        again = load_cost_volume(save_cost_volume(vol))
        assert np.array_equal(again.valid, vol.valid)
        assert np.array_equal(again.data[again.valid], vol.data[vol.valid])
        assert again.ndisp == 3
