import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgssl import rng as rngs
from fgssl.errors import InvalidInputError
from fgssl.image_aug import functional as F
from fgssl.image_aug import transforms as T
from fgssl.image_aug import AugPolicy, PRESETS, make_views, preset


def rand_img(h, w, seed=0):
    return np.random.default_rng(seed).random((h, w, 3)).astype(np.float32)


class ForcedCoin:
    """Generator stand-in whose first ``random()`` call returns ``value``."""

    def __init__(self, value, inner=None):
        self.value = value
        self.inner = inner or np.random.default_rng(0)

    def random(self):
        return self.value

    def __getattr__(self, name):
        return getattr(self.inner, name)


# -- scalar oracles ---------------------------------------------------------


def oracle_bilinear_resize(region, out_h, out_w):
    h, w = len(region), len(region[0])
    out = np.zeros((out_h, out_w, 3))
    for i in range(out_h):
        for j in range(out_w):
            y = (i + 0.5) * h / out_h - 0.5
            x = (j + 0.5) * w / out_w - 0.5
            y = min(max(y, 0.0), h - 1)
            x = min(max(x, 0.0), w - 1)
            y0, x0 = int(math.floor(y)), int(math.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            ay, ax = y - y0, x - x0
            for c in range(3):
                out[i, j, c] = (
                    (1 - ay) * (1 - ax) * region[y0][x0][c]
                    + (1 - ay) * ax * region[y0][x1][c]
                    + ay * (1 - ax) * region[y1][x0][c]
                    + ay * ax * region[y1][x1][c]
                )
    return out


def oracle_affine(img, angle, tx, ty, scale, shear):
    h, w = img.shape[:2]
    a = math.radians(angle)
    t = math.tan(math.radians(shear))
    # forward: scale * R(a) @ [[1, t], [0, 1]]
    m00 = scale * math.cos(a)
    m01 = scale * (math.cos(a) * t + math.sin(a))
    m10 = scale * -math.sin(a)
    m11 = scale * (-math.sin(a) * t + math.cos(a))
    det = m00 * m11 - m01 * m10
    i00, i01, i10, i11 = m11 / det, -m01 / det, -m10 / det, m00 / det
    cx, cy = (w - 1) / 2, (h - 1) / 2
    out = np.zeros((h, w, 3))
    for yo in range(h):
        for xo in range(w):
            dx, dy = xo - cx - tx, yo - cy - ty
            xs = cx + i00 * dx + i01 * dy
            ys = cy + i10 * dx + i11 * dy
            x0, y0 = math.floor(xs), math.floor(ys)
            for yy, wy in ((y0, 1 - (ys - y0)), (y0 + 1, ys - y0)):
                for xx, wx in ((x0, 1 - (xs - x0)), (x0 + 1, xs - x0)):
                    if 0 <= yy < h and 0 <= xx < w:
                        out[yo, xo] += wy * wx * img[yy, xx].astype(np.float64)
    return out


# -- crop -------------------------------------------------------------------


class TestRandomResizedCrop:
    def test_full_scale_same_size_is_identity(self):
        img = rand_img(8, 8)
        out = T.random_resized_crop(img, rngs.stream(1), (1.0, 1.0), 8)
        assert np.array_equal(out, img)

    def test_forced_square_full_crop_is_resize(self):
        img = rand_img(10, 10, 3)
        out = T.random_resized_crop(img, rngs.stream(2), (1.0, 1.0), 4, ratio=(1.0, 1.0))
        np.testing.assert_allclose(out, F.resize_bilinear(img, 4, 4), atol=0)
        np.testing.assert_allclose(out, oracle_bilinear_resize(img.astype(np.float64), 4, 4), atol=1e-6)

    def test_ramp_crop_matches_scalar_bilinear(self):
        ramp = np.zeros((8, 8, 3), np.float32)
        ramp[..., 0] = np.arange(8)[None, :] / 7.0
        ramp[..., 1] = np.arange(8)[:, None] / 7.0
        ramp[..., 2] = (np.arange(64).reshape(8, 8)) / 63.0
        log = []
        out = T.random_resized_crop(ramp, rngs.stream(42), (0.25, 0.25), 4, log=log)
        top, left, h, w = log[0]["box"]
        assert h * w in (12, 15, 16, 20)  # area 16 up to rounding of the aspect
        region = ramp[top : top + h, left : left + w].astype(np.float64).tolist()
        np.testing.assert_allclose(out, oracle_bilinear_resize(region, 4, 4), atol=1e-6)

    def test_box_statistics(self):
        rng = rngs.stream(7)
        for _ in range(200):
            top, left, h, w = T.sample_crop_box(rng, 100, 120, (0.2, 0.6))
            assert 0 <= top and top + h <= 100 and 0 <= left and left + w <= 120

    def test_rejects_tiny_image(self):
        with pytest.raises(InvalidInputError):
            T.random_resized_crop(rand_img(1, 5), rngs.stream(0), (0.5, 1.0), 4)

    def test_rejects_bad_scale(self):
        with pytest.raises(InvalidInputError):
            T.random_resized_crop(rand_img(8, 8), rngs.stream(0), (0.0, 1.0), 4)


# -- flip -------------------------------------------------------------------


class TestFlip:
    def test_p0_identity(self):
        img = rand_img(5, 6)
        assert T.horizontal_flip(img, rngs.stream(0), 0.0) is img

    def test_involution(self):
        img = rand_img(5, 6)
        assert np.array_equal(F.hflip(F.hflip(img)), img)

    def test_2x2_definition(self):
        a, b, c, d = (np.full(3, v, np.float32) for v in (0.1, 0.2, 0.3, 0.4))
        img = np.stack([np.stack([a, b]), np.stack([c, d])])
        out = T.horizontal_flip(img, rngs.stream(0), 1.0)
        expected = np.stack([np.stack([b, a]), np.stack([d, c])])
        assert np.array_equal(out, expected)


# -- jitter -----------------------------------------------------------------


class TestColorJitter:
    def test_zero_strength_identity(self):
        img = rand_img(6, 6)
        out = T.color_jitter(img, rngs.stream(0), (0, 0, 0, 0), p=1.0)
        assert np.array_equal(out, img)

    def test_brightness_doubling(self):
        img = np.full((4, 4, 3), 0.25, np.float32)
        out = F.jitter(img, {"brightness": 2.0}, ["brightness"])
        assert np.array_equal(out, np.full_like(img, 0.5))

    def test_brightness_then_contrast_matches_scalar(self):
        img = rand_img(4, 4, 11)
        out = F.jitter(img, {"brightness": 1.2, "contrast": 0.8}, ["brightness", "contrast"])
        # scalar re-implementation
        b = [[[min(1.0, max(0.0, float(img[i, j, c]) * 1.2)) for c in range(3)] for j in range(4)] for i in range(4)]
        lum = [0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2] for row in b for p in row]
        mean = sum(lum) / len(lum)
        expected = [[[min(1.0, max(0.0, 0.8 * b[i][j][c] + 0.2 * mean)) for c in range(3)] for j in range(4)] for i in range(4)]
        np.testing.assert_allclose(out, np.array(expected), atol=1e-6)

    def test_saturation_zero_is_grayscale(self):
        img = rand_img(4, 4, 2)
        np.testing.assert_allclose(F.adjust_saturation(img, 0.0), F.to_grayscale(img), atol=1e-7)

    def test_hue_roundtrip(self):
        img = rand_img(5, 5, 3)
        np.testing.assert_allclose(F.hsv_to_rgb(F.rgb_to_hsv(img)), img, atol=1e-6)

    def test_hue_full_turn_of_red(self):
        red = np.zeros((1, 1, 3), np.float32)
        red[..., 0] = 1.0
        # a third of a turn takes pure red to pure green
        np.testing.assert_allclose(F.adjust_hue(red, 1 / 3), [[[0.0, 1.0, 0.0]]], atol=1e-6)

    def test_factor_ranges(self):
        rng = rngs.stream(5)
        for _ in range(100):
            factors, order = T.sample_jitter(rng, (0.4, 0.4, 0.4, 0.1))
            assert 0.6 <= factors["brightness"] <= 1.4
            assert -0.1 <= factors["hue"] <= 0.1
            assert sorted(order) == sorted(factors)


# -- grayscale / blur / solarize / posterize ---------------------------------


class TestGrayscale:
    def test_gray_image_identity(self):
        v = np.random.default_rng(0).random((5, 5, 1)).astype(np.float32)
        img = np.repeat(v, 3, axis=2)
        assert np.array_equal(T.grayscale(img, rngs.stream(0), 1.0), img)

    def test_red(self):
        red = np.zeros((1, 1, 3), np.float32)
        red[..., 0] = 1
        np.testing.assert_allclose(F.to_grayscale(red), np.full((1, 1, 3), 0.299), atol=1e-7)

    def test_p0(self):
        img = rand_img(3, 3)
        assert np.array_equal(T.grayscale(img, rngs.stream(0), 0.0), img)


class TestBlur:
    @pytest.mark.parametrize("sigma", [0.3, 1.0, 2.5])
    def test_constant(self, sigma):
        img = np.full((9, 7, 3), 0.37, np.float32)
        np.testing.assert_allclose(F.blur(img, sigma), img, atol=1e-7)

    def test_tiny_sigma(self):
        img = rand_img(6, 6)
        np.testing.assert_allclose(F.blur(img, 1e-3), img, atol=1e-6)

    def test_impulse_row_matches_closed_form(self):
        img = np.zeros((1, 21, 3), np.float32)
        img[0, 10] = 1.0
        out = F.blur(img, 1.0)
        xs = np.arange(-3, 4)
        w = np.exp(-(xs**2) / 2.0)
        w /= w.sum()
        expected = np.zeros(21)
        expected[7:14] = w
        np.testing.assert_allclose(out[0, :, 0], expected, atol=1e-7)

    def test_radius(self):
        assert len(F.gaussian_kernel1d(1.2)) == 2 * math.ceil(3.6) + 1


class TestSolarize:
    def test_threshold_one(self):
        img = rand_img(4, 4) * 0.99
        assert np.array_equal(F.solarize(img, 1.0), img)

    def test_value(self):
        img = np.full((1, 1, 3), 0.8, np.float32)
        np.testing.assert_allclose(F.solarize(img, 0.5), 0.2, atol=1e-7)

    def test_partial_involution(self):
        img = np.full((2, 2, 3), 0.9, np.float32)
        once = F.solarize(img, 0.5)
        assert np.all(once < 0.5)
        # complements fall below the threshold, so inverting them again restores
        np.testing.assert_allclose(1.0 - once, img, atol=1e-7)


class TestPosterize:
    def test_eight_bits_identity_on_bytes(self):
        img = (np.arange(256, dtype=np.float32).reshape(16, 16, 1).repeat(3, 2)) / 255.0
        img = img.astype(np.float32)
        assert np.array_equal(F.posterize(img, 8), img)

    def test_half_one_bit(self):
        img = np.full((1, 1, 3), 0.5, np.float32)
        assert np.all(F.posterize(img, 1) == 0.0)

    @pytest.mark.parametrize("bits", range(1, 9))
    def test_idempotent(self, bits):
        img = rand_img(8, 8, bits)
        once = F.posterize(img, bits)
        assert np.array_equal(F.posterize(once, bits), once)

    def test_levels(self):
        img = rand_img(16, 16)
        assert len(np.unique(F.to_bytes(F.posterize(img, 2)))) <= 4

    def test_bad_bits(self):
        with pytest.raises(InvalidInputError):
            T.posterize(rand_img(2, 2), rngs.stream(0), (0, 3), 1.0)


# -- affine -----------------------------------------------------------------


class TestAffine:
    def test_zero_params_identity(self):
        img = rand_img(7, 9)
        assert np.array_equal(F.warp_affine(img), img)

    @pytest.mark.parametrize("n", [5, 6])
    def test_rot90_is_index_permutation(self, n):
        img = rand_img(n, n, n)
        assert np.array_equal(F.warp_affine(img, angle=90.0), np.rot90(img))
        assert np.array_equal(F.warp_affine(img, angle=-90.0), np.rot90(img, -1))

    def test_rotation_scale_matches_scalar_sampler(self):
        ii, jj = np.meshgrid(np.arange(6), np.arange(6), indexing="ij")
        checker = ((ii + jj) % 2).astype(np.float32)[..., None].repeat(3, 2)
        checker[..., 1] *= 0.5
        out = F.warp_affine(checker, angle=30.0, scale=1.1)
        np.testing.assert_allclose(out, oracle_affine(checker, 30.0, 0, 0, 1.1, 0), atol=1e-6)

    def test_full_affine_matches_scalar_sampler(self):
        img = rand_img(7, 8, 4)
        out = F.warp_affine(img, angle=-12.0, translate=(0.7, -1.3), scale=0.93, shear=8.0)
        np.testing.assert_allclose(out, oracle_affine(img, -12.0, 0.7, -1.3, 0.93, 8.0), atol=1e-6)

    def test_out_of_bounds_zero(self):
        img = np.ones((5, 5, 3), np.float32)
        out = F.warp_affine(img, translate=(10.0, 0.0))
        assert np.all(out == 0)


# -- invariants -------------------------------------------------------------


ALL_TRANSFORMS = [
    lambda x, r: T.random_resized_crop(x, r, (0.1, 1.0), 5),
    lambda x, r: T.horizontal_flip(x, r, 0.5),
    lambda x, r: T.color_jitter(x, r, (0.8, 0.8, 0.8, 0.5), 1.0),
    lambda x, r: T.grayscale(x, r, 0.5),
    lambda x, r: T.gaussian_blur(x, r, (0.1, 2.0), 1.0),
    lambda x, r: T.solarize(x, r, 0.5, 0.5),
    lambda x, r: T.posterize(x, r, (1, 8), 1.0),
    lambda x, r: T.affine(x, r, 45.0, 0.3, (0.5, 1.5), 20.0, 1.0),
]


def test_range_preservation_random_compositions():
    rng = rngs.stream(2024)
    for trial in range(10_000):
        img = rng.random((5, 5, 3)).astype(np.float32)
        if trial % 3 == 0:
            img = (img > 0.5).astype(np.float32)
        ops = rng.choice(len(ALL_TRANSFORMS), size=int(rng.integers(1, 4)))
        for op in ops:
            img = ALL_TRANSFORMS[op](img, rng)
        assert img.dtype == np.float32
        assert img.min() >= 0.0 and img.max() <= 1.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), op=st.integers(0, len(ALL_TRANSFORMS) - 1))
def test_transforms_deterministic(seed, op):
    img = rand_img(6, 6, 1)
    a = ALL_TRANSFORMS[op](img, rngs.stream(seed))
    b = ALL_TRANSFORMS[op](img, rngs.stream(seed))
    assert np.array_equal(a, b)


def test_identity_parameters():
    img = (np.floor(rand_img(6, 6) * 255) / 255).astype(np.float32)
    r = rngs.stream(0)
    assert np.array_equal(T.color_jitter(img, r, (0, 0, 0, 0), 1.0), img)
    assert np.array_equal(T.affine(img, r, 0.0, 0.0, (1.0, 1.0), 0.0, 1.0), img)
    assert np.array_equal(T.posterize(img, r, (8, 8), 1.0), img)
    assert np.array_equal(T.horizontal_flip(img, r, 0.0), img)


# -- policies and views -----------------------------------------------------


class TestViews:
    def test_default_policy_counts_and_sizes(self):
        views = make_views(rand_img(256, 300), preset("plant"), seed=0)
        assert len(views.global_views) == 2 and len(views.local_views) == 10
        assert all(v.shape == (224, 224, 3) for v in views.global_views)
        assert all(v.shape == (96, 96, 3) for v in views.local_views)

    def test_no_local(self):
        views = make_views(rand_img(40, 40), preset("base", global_size=16, local_size=8, n_local=0), seed=3)
        assert views.local_views == [] and len(views.global_views) == 2

    def test_same_seed_bit_identical(self):
        pol = preset("dino", global_size=32, local_size=16, n_local=4)
        img = rand_img(48, 40)
        a, b = make_views(img, pol, seed=(9, 1, 2)), make_views(img, pol, seed=(9, 1, 2))
        for x, y in zip(a.global_views + a.local_views, b.global_views + b.local_views):
            assert np.array_equal(x, y)
        assert a.provenance == b.provenance
        c = make_views(img, pol, seed=(9, 1, 3))
        assert not np.array_equal(a.global_views[0], c.global_views[0])

    def test_views_are_order_independent(self):
        from fgssl.image_aug import make_view

        pol = preset("plant", global_size=32, local_size=16, n_local=3)
        img = rand_img(48, 48, 5)
        vs = make_views(img, pol, seed=77)
        third = make_view(img, pol, rngs.stream(77, 3), is_global=False)
        assert np.array_equal(third, vs.local_views[1])

    @pytest.mark.parametrize(
        "name, present, absent",
        [
            ("plant", {"crop", "flip", "jitter", "posterize", "affine"}, {"grayscale", "blur", "solarize"}),
            ("dino", {"crop", "flip", "jitter", "grayscale", "blur", "solarize"}, {"posterize", "affine"}),
        ],
    )
    def test_preset_provenance(self, name, present, absent):
        pol = preset(name, global_size=16, local_size=8, n_local=6)
        vs = make_views(rand_img(32, 32), pol, seed=1)
        assert vs.considered_transforms() == present
        assert not (vs.applied_transforms() & absent)

    def test_presets_mirror_table_rows(self):
        assert PRESETS["base"] == ()
        assert set(PRESETS["dino-nosolarize"]) == {"jitter", "grayscale", "blur"}
        assert set(PRESETS["plant"]) == {"jitter", "posterize", "affine"}

    def test_policy_validation(self):
        with pytest.raises(InvalidInputError):
            AugPolicy(n_global=1)
        with pytest.raises(InvalidInputError):
            AugPolicy(local_scale=(0.0, 0.3))

    def test_policy_dict_roundtrip(self):
        pol = preset("plant", transform_overrides={"posterize": {"bits_range": (3, 5)}}, global_size=64)
        assert AugPolicy.from_dict(pol.to_dict()) == pol
