import math

import numpy as np
import pytest

from misalign_bench import corruption as corr
from misalign_bench.corruption import (
    ALL_CONDITIONS,
    CorruptionKind,
    CorruptionParams,
    CorruptionSpec,
    corrupt,
    derive_seed,
    gamma_curve,
    gamma_lut,
    low_light,
    motion_blur,
    occlude,
    parse_condition,
)

SIGMA_ZERO = CorruptionParams(noise_sigmas=(0.0, 0.0, 0.0))


def checker(h=64, w=64):
    """High-contrast deterministic test image."""
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.zeros((h, w, 3), np.uint8)
    img[..., 0] = ((yy // 8 + xx // 8) % 2) * 255
    img[..., 1] = (xx * 4) % 256
    img[..., 2] = (yy * 4) % 256
    return img


# -- motion blur --------------------------------------------------------------


def test_blur_constant_image_unchanged():
    img = np.full((20, 30, 3), 128, np.uint8)
    for severity in (1, 2, 3):
        np.testing.assert_array_equal(motion_blur(img, severity), img)


def test_blur_severity_kernel_lengths():
    assert CorruptionParams().blur_lengths == (7, 15, 25)


def test_blur_impulse_row():
    # single bright pixel in a 1x9 row, k=7: the 7 windows containing the
    # impulse each average to round(255/7) = 36, the two ends stay 0
    row = np.zeros((1, 9, 3), np.uint8)
    row[0, 4, :] = 255
    out = motion_blur(row, 1)
    assert out[0, :, 0].tolist() == [0, 36, 36, 36, 36, 36, 36, 36, 0]


def test_blur_is_horizontal_only():
    img = np.zeros((9, 9, 3), np.uint8)
    img[4, :, :] = 200  # a horizontal stripe survives horizontal blur
    np.testing.assert_array_equal(motion_blur(img, 3), img)


def test_blur_shape_preserved_and_deterministic():
    img = checker()
    a = motion_blur(img, 2)
    b = motion_blur(img, 2)
    assert a.shape == img.shape
    np.testing.assert_array_equal(a, b)


def test_blur_distortion_grows_with_severity():
    rng = np.random.default_rng(123)
    for _ in range(20):
        img = rng.integers(0, 256, (48, 64, 3), np.uint8)
        mad = [
            np.abs(motion_blur(img, s).astype(int) - img.astype(int)).mean()
            for s in (1, 2, 3)
        ]
        assert mad[0] < mad[1] < mad[2]


def test_blur_rejects_bad_severity():
    with pytest.raises(ValueError, match="severity"):
        motion_blur(checker(), 4)


def test_blur_rejects_bad_image():
    with pytest.raises(ValueError, match="uint8"):
        motion_blur(np.zeros((4, 4, 3), np.float32), 1)


# -- low light ----------------------------------------------------------------


def test_gamma_severity_values():
    assert CorruptionParams().gammas == (1.6, 2.2, 3.0)


def test_gamma_128_maps_to_56():
    img = np.full((2, 2, 3), 128, np.uint8)
    out = low_light(img, 2, seed=0, params=SIGMA_ZERO)
    assert out.tolist() == np.full((2, 2, 3), 56, np.uint8).tolist()


def test_gamma_lut_matches_direct_evaluation():
    for gamma in (1.6, 2.2, 3.0):
        lut = gamma_lut(gamma)
        for v in range(256):
            exact = 255.0 * (v / 255.0) ** gamma
            assert lut[v] == math.floor(exact + 0.5)
            assert abs(float(lut[v]) - exact) <= 0.5


def test_low_light_sigma_zero_equals_lut():
    img = checker()
    for severity, gamma in zip((1, 2, 3), SIGMA_ZERO.gammas):
        out = low_light(img, severity, seed=99, params=SIGMA_ZERO)
        np.testing.assert_array_equal(out, gamma_lut(gamma)[img])


def test_low_light_black_stays_black():
    img = np.zeros((8, 8, 3), np.uint8)
    out = low_light(img, 3, seed=1, params=SIGMA_ZERO)
    assert not out.any()


def test_low_light_noise_deterministic_per_seed():
    img = checker()
    a = low_light(img, 2, seed=7)
    b = low_light(img, 2, seed=7)
    c = low_light(img, 2, seed=8)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_low_light_gamma_monotone_in_value_and_severity():
    ramp = np.arange(256, dtype=np.uint8).reshape(1, 256, 1).repeat(3, axis=2)
    outs = [low_light(ramp, s, seed=0, params=SIGMA_ZERO) for s in (1, 2, 3)]
    for out in outs:
        row = out[0, :, 0].astype(int)
        assert (np.diff(row) >= 0).all()
        assert (row <= np.arange(256)).all()  # darkening never brightens
    assert (outs[2] <= outs[1]).all()
    assert (outs[1] <= outs[0]).all()


def test_low_light_shared_channel_noise_mode():
    img = checker()
    shared = CorruptionParams(noise_shared_across_channels=True)
    out = low_light(img, 1, seed=3, params=shared)
    base = gamma_curve(shared.gamma(1))[img]
    delta = out.astype(float) - np.floor(base + 0.5)
    # same noise draw on all three channels wherever no clamping occurred
    interior = (out > 10) & (out < 245)
    mask = interior.all(axis=2)
    assert np.allclose(delta[mask][:, 0], delta[mask][:, 1], atol=1.0)


# -- occlusion ----------------------------------------------------------------


def test_occlusion_area_fractions():
    assert CorruptionParams().area_fractions == (0.08, 0.15, 0.25)


@pytest.mark.parametrize("severity,target", [(1, 0.08), (2, 0.15), (3, 0.25)])
@pytest.mark.parametrize("shape", [(256, 256), (128, 128), (128, 192)])
def test_occlusion_fraction_within_tolerance(severity, target, shape):
    img = np.full((*shape, 3), 177, np.uint8)
    area = shape[0] * shape[1]
    for seed in range(50):
        out, rect = occlude(img, severity, seed=seed)
        frac = rect.area / area
        assert abs(frac - target) <= 0.01
        black = (out == 0).all(axis=2).sum()
        assert black == rect.area  # no black pixels existed before


def test_occlusion_masks_exactly_the_rect():
    img = checker(80, 100)
    img[img == 0] = 1  # make "black" unambiguous
    out, rect = occlude(img, 2, seed=5)
    inside = out[rect.y0:rect.y0 + rect.h, rect.x0:rect.x0 + rect.w]
    assert not inside.any()
    outside = out.copy()
    outside[rect.y0:rect.y0 + rect.h, rect.x0:rect.x0 + rect.w] = \
        img[rect.y0:rect.y0 + rect.h, rect.x0:rect.x0 + rect.w]
    np.testing.assert_array_equal(outside, img)


def test_occlusion_deterministic_and_seed_sensitive():
    img = checker(128, 128)
    a1, r1 = occlude(img, 3, seed=10)
    a2, r2 = occlude(img, 3, seed=10)
    b, r3 = occlude(img, 3, seed=11)
    np.testing.assert_array_equal(a1, a2)
    assert r1 == r2
    assert r1 != r3


def test_occlusion_rect_inside_bounds():
    img = checker(64, 96)
    for seed in range(30):
        _, rect = occlude(img, 3, seed=seed)
        assert rect.x0 >= 0 and rect.y0 >= 0
        assert rect.x0 + rect.w <= 96
        assert rect.y0 + rect.h <= 64


# -- dispatch and seeds ---------------------------------------------------------


def test_corrupt_dispatches_to_blur():
    img = checker()
    spec = CorruptionSpec(CorruptionKind.MOTION_BLUR, 2, seed=12345)
    np.testing.assert_array_equal(corrupt(img, spec), motion_blur(img, 2))


def test_corrupt_nine_distinct_outputs():
    img = checker(96, 96)
    outputs = []
    for kind in CorruptionKind:
        for severity in (1, 2, 3):
            spec = CorruptionSpec(kind, severity, seed=derive_seed(0, "x", CorruptionSpec(kind, severity)))
            outputs.append(corrupt(img, spec).tobytes())
    assert len(set(outputs)) == 9
    assert img.tobytes() not in outputs


def test_corrupt_different_seeds_move_occlusion():
    img = checker(256, 256)
    a = corrupt(img, CorruptionSpec(CorruptionKind.OCCLUSION, 3, seed=1))
    b = corrupt(img, CorruptionSpec(CorruptionKind.OCCLUSION, 3, seed=2))
    assert not np.array_equal(a, b)


def test_spec_validation():
    with pytest.raises(ValueError):
        CorruptionSpec(CorruptionKind.LOW_LIGHT, 0)
    with pytest.raises(ValueError):
        CorruptionSpec("fog", 1)
    with pytest.raises(ValueError, match="CorruptionSpec"):
        corrupt(checker(), "mb2")


def test_condition_names_round_trip():
    assert ALL_CONDITIONS[0] == "clean"
    assert parse_condition("clean") is None
    for name in ALL_CONDITIONS[1:]:
        kind, severity = parse_condition(name)
        assert CorruptionSpec(kind, severity).condition == name
    with pytest.raises(ValueError):
        parse_condition("fog2")


def test_derive_seed_stable_and_distinct():
    spec = CorruptionSpec(CorruptionKind.OCCLUSION, 2)
    assert derive_seed(1, "a", spec) == derive_seed(1, "a", spec)
    seeds = {derive_seed(1, f"img{i}", spec) for i in range(10_000)}
    assert len(seeds) == 10_000
    per_severity = {
        derive_seed(1, "a", CorruptionSpec(CorruptionKind.OCCLUSION, s)) for s in (1, 2, 3)
    }
    assert len(per_severity) == 3
    per_kind = {derive_seed(1, "a", CorruptionSpec(k, 2)) for k in CorruptionKind}
    assert len(per_kind) == 3
