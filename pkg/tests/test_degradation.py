import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rmm.degradation import (
    DEFAULT_RANGES,
    DegradationConfig,
    add_gaussian_noise,
    bicubic_resize,
    block_dct,
    cubic,
    degrade,
    gaussian_kernel,
    jpeg_like,
    motion_kernel,
    quality_table,
    substream,
)
from rmm.errors import ContractError
from rmm.metrics import psnr
from rmm.pipeline.dataset import synth_dataset


class TestKernels:
    @pytest.mark.parametrize("sigma", [0.1, 0.7, 1.0, 2.5, 5.0])
    def test_gaussian_normalized_symmetric(self, sigma):
        k = gaussian_kernel(sigma)
        assert k.shape == (2 * math.ceil(3 * sigma) + 1,) * 2
        assert abs(k.sum() - 1) < 1e-12
        np.testing.assert_array_equal(k, k.T)
        np.testing.assert_array_equal(k, k[::-1, ::-1])

    def test_gaussian_delta_limit(self):
        k = gaussian_kernel(0.1)
        assert k[k.shape[0] // 2, k.shape[1] // 2] > 0.99

    def test_gaussian_formula(self):
        k = gaussian_kernel(1.0)
        raw = np.array([[math.exp(-(x * x + y * y) / 2) for x in range(-3, 4)] for y in range(-3, 4)])
        np.testing.assert_allclose(k, raw / raw.sum(), atol=1e-15)

    def test_gaussian_bad_sigma(self):
        with pytest.raises(ContractError):
            gaussian_kernel(0.0)

    def test_motion_length_one(self):
        np.testing.assert_array_equal(motion_kernel(1, 0.3), [[1.0]])

    def test_motion_horizontal(self):
        k = motion_kernel(5, 0.0)
        want = np.zeros((5, 5))
        want[2] = 0.2
        np.testing.assert_allclose(k, want, atol=1e-15)

    def test_motion_diagonal(self):
        k = motion_kernel(7, math.pi / 4)
        assert abs(k.sum() - 1) < 1e-12
        rows, cols = np.nonzero(k)
        c = k.shape[0] // 2
        # rows grow downward, so a positive angle runs up and to the right
        np.testing.assert_array_equal(rows - c, -(cols - c))
        np.testing.assert_allclose(k, k[::-1, ::-1], atol=1e-15)
        # a 7-pixel segment at 45 degrees covers 7 cos 45 ~ 5 columns
        assert len(rows) == 5

    @given(st.integers(1, 11), st.floats(0, math.pi))
    def test_motion_sums_to_one(self, length, angle):
        assert abs(motion_kernel(length, angle).sum() - 1) < 1e-12


def direct_bicubic(img, ho, wo):
    """Kernel sum per output pixel, no matrices."""
    h, w = img.shape

    def taps(n_in, n_out, i):
        scale = n_out / n_in
        stretch = min(scale, 1.0)
        centre = (i + 0.5) / scale - 0.5
        weights = {}
        for t in range(-64, n_in + 64):
            wgt = float(cubic(np.array((t - centre) * stretch)))
            if wgt != 0:
                src = min(max(t, 0), n_in - 1)
                weights[src] = weights.get(src, 0.0) + wgt
        total = sum(weights.values())
        return {k: v / total for k, v in weights.items()}

    out = np.zeros((ho, wo))
    for i in range(ho):
        ti = taps(h, ho, i)
        for j in range(wo):
            tj = taps(w, wo, j)
            out[i, j] = sum(a * b * img[r, c] for r, a in ti.items() for c, b in tj.items())
    return out


class TestBicubic:
    @given(st.floats(0, 1), st.integers(1, 40), st.integers(1, 40))
    def test_constant_preserved(self, v, ho, wo):
        out = bicubic_resize(np.full((2, 12, 9), v), (ho, wo))
        np.testing.assert_allclose(out, v, atol=1e-13)

    def test_linear_ramp(self):
        ramp = np.tile(np.arange(64, dtype=float), (64, 1))[None]
        small = bicubic_resize(ramp, (16, 16))
        back = bicubic_resize(small, (64, 64))
        # border-clamped taps reach 14 output pixels in; the interior is exact
        np.testing.assert_allclose(back[0, 16:-16, 16:-16], ramp[0, 16:-16, 16:-16], atol=1e-6)

    @pytest.mark.parametrize("size", [(8, 8), (5, 11), (16, 16), (32, 24)])
    def test_direct_oracle(self, rng, size):
        img = rng.random((16, 16))
        np.testing.assert_allclose(bicubic_resize(img, size), direct_bicubic(img, *size), atol=1e-9)

    def test_factor(self, rng):
        assert bicubic_resize(rng.random((3, 8, 6)), 2).shape == (3, 16, 12)

    def test_zero_target(self, rng):
        with pytest.raises(ContractError):
            bicubic_resize(rng.random((3, 8, 8)), (0, 4))
        with pytest.raises(ContractError):
            bicubic_resize(rng.random((3, 8, 8)), 0)


class TestNoise:
    def test_zero_identity(self, rng):
        x = rng.random((3, 4, 4))
        np.testing.assert_array_equal(add_gaussian_noise(x, 0, rng), x)

    def test_empirical_std(self):
        gray = np.full((1, 1000, 1000), 0.5)
        out = add_gaussian_noise(gray, 15, np.random.default_rng(0))
        assert abs(out.std() - 15 / 255) < 0.02 * 15 / 255

    def test_deterministic_and_clamped(self, rng):
        x = rng.random((3, 8, 8))
        a = add_gaussian_noise(x, 15, np.random.default_rng(3))
        b = add_gaussian_noise(x, 15, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0 and a.max() <= 1


class TestJpeg:
    def test_table_scaling(self):
        assert quality_table(50)[0, 0] == 16
        assert quality_table(100).max() == 1
        q40 = quality_table(40)
        assert q40[0, 0] == math.floor((16 * 125 + 50) / 100)
        assert q40.max() <= 255 and q40.min() >= 1

    def test_quality_range(self):
        for q in (0, 101):
            with pytest.raises(ContractError):
                jpeg_like(np.zeros((3, 8, 8)), q)

    def test_constant_block_q100(self):
        x = np.full((3, 8, 8), 0.4)
        assert np.max(np.abs(jpeg_like(x, 100) - x)) <= 1 / 255

    def test_dct_constant_block(self):
        coefs = block_dct(np.full((8, 8), 3.0))
        assert coefs[0, 0, 0, 0] != 0
        flat = coefs[0, 0].ravel()
        np.testing.assert_allclose(flat[1:], 0.0, atol=1e-12)

    def test_odd_size_and_gray(self, rng):
        assert jpeg_like(rng.random((3, 13, 9)), 60).shape == (3, 13, 9)
        assert jpeg_like(rng.random((1, 8, 16)), 60).shape == (1, 8, 16)

    def test_lower_quality_more_error(self):
        faces = synth_dataset(50, 64, seed=11).images
        wins = sum(np.mean((jpeg_like(x, 40) - x) ** 2) > np.mean((jpeg_like(x, 80) - x) ** 2)
                   for x in faces)
        assert wins >= 48


class TestConfig:
    @given(st.integers(0, 2 ** 32 - 1))
    def test_sampled_in_range(self, seed):
        cfg = DegradationConfig.sample(np.random.default_rng(seed))
        assert 1 <= cfg.gaussian_sigma <= 5
        assert 3 <= cfg.motion_length <= 11
        assert 2 <= cfg.scale_r <= 12
        assert 1 <= cfg.noise_sigma <= 15
        assert 40 <= cfg.jpeg_quality <= 80
        assert cfg.blur_kind in ("gaussian", "motion", "none")
        assert (cfg.blur_kind == "none") == (not cfg.stage_mask["blur"])

    def test_stage_rates(self):
        masks = [DegradationConfig.sample(substream(0, i)).stage_mask for i in range(2000)]
        for stage in ("blur", "noise", "jpeg"):
            assert 0.45 < np.mean([m[stage] for m in masks]) < 0.55

    def test_dict_roundtrip(self):
        cfg = DegradationConfig.sample(np.random.default_rng(4))
        assert DegradationConfig.from_dict(cfg.to_dict()) == cfg

    def test_range_override(self):
        cfg = DegradationConfig.sample(np.random.default_rng(1), {"scale_r": (4, 4)})
        assert cfg.scale_r == 4 and DEFAULT_RANGES["scale_r"] == (2, 12)


class TestDegrade:
    def test_identity(self, rng):
        x = rng.random((3, 16, 16))
        out, _ = degrade(x, DegradationConfig(scale_r=1))
        np.testing.assert_array_equal(out, x)

    def test_deterministic(self, rng):
        x = rng.random((3, 32, 32))
        cfg = DegradationConfig(blur_kind="motion", scale_r=2,
                                stage_mask={"blur": True, "noise": True, "jpeg": True}, seed=9)
        assert degrade(x, cfg)[0].tobytes() == degrade(x, cfg)[0].tobytes()

    def test_noise_lowers_psnr(self):
        x = synth_dataset(1, 64, seed=2).images[0]
        clean, _ = degrade(x, DegradationConfig(scale_r=4))
        noisy, _ = degrade(x, DegradationConfig(scale_r=4, noise_sigma=10,
                                                stage_mask={"blur": False, "noise": True,
                                                            "jpeg": False}))
        ref = bicubic_resize(x, (16, 16))
        assert noisy.shape == (3, 16, 16)
        assert psnr(noisy, ref) < psnr(clean, ref)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_output_extent(self, seed):
        cfg = DegradationConfig.sample(np.random.default_rng(seed))
        x = np.random.default_rng(seed).random((3, 48, 36))
        out, _ = degrade(x, cfg)
        assert out.shape == (3, 48 // cfg.scale_r, 36 // cfg.scale_r)
        assert out.min() >= 0 and out.max() <= 1

    def test_stage_order(self, rng):
        x = rng.random((3, 32, 32))
        cfg = DegradationConfig(blur_kind="gaussian", gaussian_sigma=1.5, scale_r=2, noise_sigma=5,
                                jpeg_quality=50,
                                stage_mask={"blur": True, "noise": True, "jpeg": True}, seed=3)
        from rmm.degradation import blur

        y = blur(x, gaussian_kernel(1.5))
        y = bicubic_resize(y, (16, 16))
        y = add_gaussian_noise(y, 5, np.random.default_rng(3))
        y = jpeg_like(np.clip(y, 0, 1), 50)
        np.testing.assert_array_equal(degrade(x, cfg)[0], y)
