import io
import struct

import numpy as np
import pytest
from PIL import Image

from semistereo.errors import CalibError, ImageFormatError, ParameterError
from semistereo.imageio import (
    INVALID,
    CalibInfo,
    DisparityMap,
    GrayImage,
    StereoPairRecord,
    box_downsample,
    decode_image,
    load_dataset,
    load_scene,
    parse_calib,
    read_pfm,
    scale_disparity,
    write_pfm,
    write_pgm,
)


def png_bytes(arr, mode=None):
    img = Image.fromarray(arr) if mode is None else Image.fromarray(arr).convert(mode)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


class TestDecodeImage:
    def test_pgm_p5_extremal_levels(self):
        img = decode_image(b"P5\n2 1\n255\n" + bytes([0, 255]))
        assert img.data.tolist() == [[0.0, 1.0]]

    def test_pgm_p2_ascii(self):
        img = decode_image(b"P2\n2 2\n255\n0 51 102 255\n")
        assert np.array_equal(img.levels(), [[0, 51], [102, 255]])

    def test_rgb_white_is_full_intensity(self):
        arr = np.full((1, 1, 3), 255, dtype=np.uint8)
        img = decode_image(png_bytes(arr, "RGB"))
        assert img.data[0, 0] == 1.0

    def test_rgb_luminance_rounding(self):
        # 0.299*100 + 0.587*150 + 0.114*200 = 140.75 -> level 141
        arr = np.array([[[100, 150, 200]]], dtype=np.uint8)
        img = decode_image(png_bytes(arr, "RGB"))
        assert img.levels()[0, 0] == 141
        assert img.data[0, 0] == 141 / 255

    def test_gray_png_passthrough(self):
        arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
        img = decode_image(png_bytes(arr, "L"))
        assert np.array_equal(img.levels(), arr)

    def test_gray_conversion_idempotent_on_gray_rgb(self):
        v = np.arange(0, 256, 7, dtype=np.uint8)
        arr = np.stack([v, v, v], axis=-1)[None]
        img = decode_image(png_bytes(arr, "RGB"))
        assert np.array_equal(img.levels()[0], v)

    def test_malformed_pgm_names_offset(self):
        with pytest.raises(ImageFormatError, match="offset"):
            decode_image(b"P5\n2 2\n255\n\x00")

    def test_unsupported_bit_depth(self):
        arr = np.zeros((2, 2), dtype=np.uint16)
        data = png_bytes(arr)
        with pytest.raises(ImageFormatError, match="unsupported"):
            decode_image(data)

    def test_unknown_magic(self):
        with pytest.raises(ImageFormatError, match="offset 0"):
            decode_image(b"GIF89a...")

    def test_pgm_maxval_out_of_range(self):
        with pytest.raises(ImageFormatError, match="maxval"):
            decode_image(b"P5\n1 1\n65535\n\x00\x00")


class TestPfm:
    def test_hand_encoded_single_cell(self):
        data = b"Pf\n1 1\n-1.0\n" + struct.pack("<f", 3.5)
        dmap = read_pfm(data)
        assert dmap.data.shape == (1, 1)
        assert dmap.data[0, 0] == np.float32(3.5)

    def test_big_endian_payload(self):
        data = b"Pf\n1 1\n1.0\n" + struct.pack(">f", 2.25)
        assert read_pfm(data).data[0, 0] == np.float32(2.25)

    def test_rows_flip_bottom_to_top(self):
        # bottom row written first: payload rows [3, 4] then [1, 2]
        payload = struct.pack("<4f", 3, 4, 1, 2)
        dmap = read_pfm(b"Pf\n2 2\n-1.0\n" + payload)
        assert dmap.data.tolist() == [[1, 2], [3, 4]]

    def test_nonfinite_becomes_invalid(self):
        data = b"Pf\n2 1\n-1.0\n" + struct.pack("<2f", np.inf, np.nan)
        dmap = read_pfm(data)
        assert not dmap.valid_mask().any()
        assert np.all(dmap.data == INVALID)

    def test_round_trip_value_identity(self):
        rng = np.random.default_rng(0)
        data = rng.uniform(0, 64, (5, 7)).astype(np.float32)
        data[rng.random((5, 7)) < 0.3] = INVALID
        m = DisparityMap(data)
        again = read_pfm(write_pfm(m))
        assert np.array_equal(again.data, m.data)

    def test_round_trip_byte_identity(self):
        rng = np.random.default_rng(1)
        m = DisparityMap(rng.uniform(0, 9, (4, 3)).astype(np.float32))
        encoded = write_pfm(m)
        assert write_pfm(read_pfm(encoded)) == encoded

    def test_all_invalid_payload_is_inf(self):
        m = DisparityMap(np.full((2, 2), INVALID, dtype=np.float32))
        payload = write_pfm(m).split(b"-1.0\n", 1)[1]
        assert payload == struct.pack("<4f", *([np.inf] * 4))

    def test_empty_map_unconstructible(self):
        with pytest.raises(ParameterError):
            DisparityMap(np.zeros((0, 0), dtype=np.float32))

    def test_bad_magic(self):
        with pytest.raises(ImageFormatError, match="Pf"):
            read_pfm(b"PF\n1 1\n-1.0\n" + b"\x00" * 12)

    def test_truncated_payload(self):
        with pytest.raises(ImageFormatError, match="bytes"):
            read_pfm(b"Pf\n2 2\n-1.0\n" + b"\x00" * 8)


class TestCalib:
    def test_middlebury_style(self):
        info = parse_calib("ndisp=270\nwidth=2960\nheight=2016")
        assert (info.ndisp, info.width, info.height) == (270, 2960, 2016)

    def test_minimum_range(self):
        assert parse_calib("ndisp=1").ndisp == 1

    def test_missing_ndisp(self):
        with pytest.raises(CalibError, match="ndisp"):
            parse_calib("width=10\nheight=10")

    def test_unknown_keys_ignored(self):
        info = parse_calib('cam0=[100 0 50]\nndisp=64\nwidth=100\nheight=80\nisint=0')
        assert info.ndisp == 64


class TestScaling:
    def test_box_downsample_dims_and_values(self):
        img = GrayImage.from_levels(np.array([[0, 0, 200], [100, 100, 200]], dtype=np.uint8))
        half = box_downsample(img, 2)
        # ceil(3/2) = 2 columns; ragged right block averages in-bounds pixels
        assert (half.height, half.width) == (1, 2)
        assert half.levels().tolist() == [[50, 200]]

    def test_gt_subsample_divides_and_keeps_invalid(self):
        data = np.array([[4.0, 6.0], [np.inf, 2.0]], dtype=np.float32)
        gt = DisparityMap(data, ndisp=8)
        half = scale_disparity(gt, 2)
        assert half.data.shape == (1, 1)
        assert half.data[0, 0] == 2.0
        assert half.ndisp == 4
        quarter = scale_disparity(DisparityMap(np.full((4, 4), np.inf, np.float32)), 4)
        assert not quarter.valid_mask().any()

    def test_disparity_below_attached_ndisp(self):
        with pytest.raises(ParameterError):
            DisparityMap(np.array([[5.0]]), ndisp=5)


def write_scene(root, name, with_gt=True, size=(16, 20), ndisp=4):
    scene = root / name
    scene.mkdir(parents=True)
    h, w = size
    rng = np.random.default_rng(hash(name) % 1000)
    left = GrayImage.from_levels(rng.integers(0, 256, (h, w), dtype=np.uint8))
    right = GrayImage.from_levels(rng.integers(0, 256, (h, w), dtype=np.uint8))
    (scene / "im0.pgm").write_bytes(write_pgm(left))
    (scene / "im1.pgm").write_bytes(write_pgm(right))
    if with_gt:
        gt = DisparityMap(rng.uniform(0, ndisp - 1, (h, w)).astype(np.float32))
        (scene / "disp0GT.pfm").write_bytes(write_pfm(gt))
    (scene / "calib.txt").write_text(f"ndisp={ndisp}\nwidth={w}\nheight={h}\n")
    return scene


class TestDataset:
    def test_load_order_and_fields(self, tmp_path):
        for name in ("bravo", "alpha", "charlie"):
            write_scene(tmp_path, name)
        records = load_dataset(tmp_path, "full")
        assert [r.name for r in records] == ["alpha", "bravo", "charlie"]
        assert all(r.gt is not None for r in records)

    def test_missing_image_skips_scene(self, tmp_path):
        write_scene(tmp_path, "good")
        bad = write_scene(tmp_path, "bad")
        (bad / "im1.pgm").unlink()
        records = load_dataset(tmp_path, "full")
        assert [r.name for r in records] == ["good"]

    def test_empty_root_is_empty_list(self, tmp_path):
        assert load_dataset(tmp_path / "nothing", "full") == []

    def test_half_resolution_scaling(self, tmp_path):
        write_scene(tmp_path, "scene", size=(16, 20), ndisp=5)
        rec = load_scene(tmp_path / "scene", "half")
        assert (rec.left.height, rec.left.width) == (8, 10)
        assert rec.calib.ndisp == 3  # ceil(5/2)
        assert rec.gt.data.shape == (8, 10)

    def test_without_gt(self, tmp_path):
        write_scene(tmp_path, "nogt", with_gt=False)
        rec = load_scene(tmp_path / "nogt", "full")
        assert rec.gt is None

    def test_record_dim_mismatch_rejected(self):
        a = GrayImage.from_levels(np.zeros((4, 4), np.uint8))
        b = GrayImage.from_levels(np.zeros((4, 5), np.uint8))
        with pytest.raises(ParameterError):
            StereoPairRecord(left=a, right=b, calib=CalibInfo(ndisp=2))
