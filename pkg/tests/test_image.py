from __future__ import annotations

import math

import numpy as np
import pytest
from PIL import Image as PILImage

from degsim.errors import DataError, ShapeError, UnsupportedImageError
from degsim.image import PSNR_CAP_DB, as_image, crop_patches, load_image, psnr, save_image


def psnr_direct(a, b):
    """Independent naive MSE/PSNR reimplementation (explicit summation)."""
    total = 0.0
    count = 0
    for x, y in zip(np.asarray(a).ravel(), np.asarray(b).ravel()):
        d = float(x) - float(y)
        total += d * d
        count += 1
    return 10.0 * math.log10(1.0 / (total / count))


class TestPsnr:
    def test_identical_images_hit_cap(self, rng):
        img = rng.random((32, 40, 3))
        assert psnr(img, img) == PSNR_CAP_DB

    def test_constant_offset_arithmetic(self):
        a = np.zeros((16, 16, 1))
        b = np.full((16, 16, 1), 0.1)
        assert abs(psnr(a, b) - 20.0) < 1e-9

    def test_matches_direct_summation_oracle(self, rng):
        a = rng.random((24, 36, 3))
        b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
        assert abs(psnr(a, b) - psnr_direct(as_image(a), as_image(b))) < 1e-9

    def test_symmetry(self, rng):
        a, b = rng.random((20, 20, 3)), rng.random((20, 20, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ShapeError):
            psnr(rng.random((8, 8, 3)), rng.random((8, 9, 3)))
        with pytest.raises(ShapeError):
            psnr(rng.random((8, 8, 3)), rng.random((8, 8, 1)))


class TestCropPatches:
    def test_exact_tiling(self, rng):
        img = rng.random((256, 256, 3))
        assert len(crop_patches(img, 64, 64)) == 16

    def test_identity_tiling(self, rng):
        img = rng.random((64, 64, 3))
        ps = crop_patches(img, 64, 64)
        assert len(ps) == 1
        assert np.array_equal(ps.patches[0], as_image(img))

    def test_hand_enumerated_grid(self, rng):
        # 100x100, patch 64, stride 32: corners (0,0),(0,32),(32,0),(32,32).
        img = as_image(rng.random((100, 100, 3)))
        ps = crop_patches(img, 64, 32)
        assert len(ps) == 4
        expected = [img[y : y + 64, x : x + 64] for y in (0, 32) for x in (0, 32)]
        for got, want in zip(ps.patches, expected):
            assert np.array_equal(got, want)

    def test_count_formula(self, rng):
        for h, w, p, s in [(70, 90, 16, 7), (64, 64, 64, 1), (128, 50, 33, 9)]:
            img = rng.random((h, w, 1))
            expected = ((h - p) // s + 1) * ((w - p) // s + 1)
            assert len(crop_patches(img, p, s)) == expected

    def test_patch_larger_than_image(self, rng):
        with pytest.raises(ShapeError):
            crop_patches(rng.random((32, 32, 3)), 64, 8)


class TestRasterIO:
    def test_round_trip_quantization_bound(self, tmp_path):
        ramp = np.linspace(0, 1, 64)
        img = as_image(np.stack(np.meshgrid(ramp, ramp, indexing="ij") + (np.outer(ramp, ramp),), axis=2))
        path = tmp_path / "grad.png"
        save_image(img, path)
        back = load_image(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 1.0 / 255.0 + 1e-12

    def test_quantized_values_round_trip_exactly(self, rng):
        img = np.round(rng.random((16, 16, 3)) * 255) / 255.0
        path_out = None
        import tempfile, os

        with tempfile.TemporaryDirectory() as d:
            path_out = os.path.join(d, "q.png")
            save_image(img, path_out)
            assert np.array_equal(load_image(path_out), as_image(img))

    def test_grayscale_round_trip(self, tmp_path, rng):
        img = rng.random((20, 20, 1))
        save_image(img, tmp_path / "g.png")
        back = load_image(tmp_path / "g.png")
        assert back.shape == (20, 20, 1)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "nope.png")

    def test_sixteen_bit_rejected(self, tmp_path):
        path = tmp_path / "deep.png"
        PILImage.fromarray(np.zeros((8, 8), dtype=np.uint16)).save(path)
        with pytest.raises(UnsupportedImageError):
            load_image(path)

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "bad.png"
        path.write_bytes(b"\x89PNG\r\n\x1a\nnot really a png")
        with pytest.raises(DataError):
            load_image(path)


class TestAsImage:
    def test_clamps_on_write(self):
        arr = np.array([[[1.5, -0.5, 0.25]]])
        out = as_image(arr)
        assert out.max() <= 1.0 and out.min() >= 0.0

    def test_rejects_bad_channel_count(self, rng):
        with pytest.raises(ShapeError):
            as_image(rng.random((8, 8, 2)))

    def test_rejects_non_finite(self):
        arr = np.full((4, 4, 1), np.nan)
        with pytest.raises(ShapeError):
            as_image(arr)
