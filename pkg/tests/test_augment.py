import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthface.augment import ORDER, AugmentationConfig, AugmentationPlan, apply_plan, augment, sample_plan
from synthface.seeding import make_rng

# per-transform rates from the training recipe
RECIPE = {
    "horizontal_flip": 0.5,
    "grayscale": 0.1,
    "gaussian_blur": 0.05,
    "gaussian_noise": 0.035,
    "motion_blur": 0.05,
    "jpeg_compression": 0.05,
    "down_up_scale": 0.01,
    "color_jitter": 0.1,
}


def crop(seed=0):
    return np.random.default_rng(seed).integers(0, 256, size=(112, 112, 3), dtype=np.uint8)


def only(name, **extra):
    cfg = AugmentationConfig.disabled()
    setattr(cfg, name, 1.0)
    for k, v in extra.items():
        setattr(cfg, k, v)
    return cfg


def test_defaults_are_recipe_values():
    cfg = AugmentationConfig()
    for name, p in RECIPE.items():
        assert getattr(cfg, name) == p
    assert cfg.brightness == (0.0, 0.15) and cfg.contrast == (0.0, 0.3)
    assert cfg.hue == (0.0, 0.1) and cfg.saturation == (0.0, 0.1)


def test_disabled_is_identity():
    img = crop()
    for seed in range(20):
        assert np.array_equal(augment(img, AugmentationConfig.disabled(), seed), img)


def test_forced_flip_mirrors_columns():
    img = crop()
    out = augment(img, only("horizontal_flip"), 3)
    assert np.array_equal(out, img[:, ::-1])
    assert np.array_equal(augment(out, only("horizontal_flip"), 4), img)


def test_same_seed_same_bytes():
    img = crop(1)
    cfg = AugmentationConfig(**{k: 0.7 for k in ORDER})
    for seed in range(10):
        assert augment(img, cfg, seed).tobytes() == augment(img, cfg, seed).tobytes()


@pytest.mark.parametrize("name", ORDER)
def test_each_transform_keeps_shape_and_dtype(name):
    out = augment(crop(2), only(name), 11)
    assert out.shape == (112, 112, 3) and out.dtype == np.uint8


def test_grayscale_channels_equal():
    out = augment(crop(), only("grayscale"), 0)
    assert np.array_equal(out[..., 0], out[..., 1]) and np.array_equal(out[..., 1], out[..., 2])


def test_blur_smooths():
    img = crop()
    out = augment(img, only("gaussian_blur"), 0)
    assert np.abs(np.diff(out.astype(int), axis=1)).mean() < np.abs(np.diff(img.astype(int), axis=1)).mean()


def test_jpeg_keeps_channel_order():
    img = np.zeros((112, 112, 3), np.uint8)
    img[..., 0] = 220
    out = augment(img, only("jpeg_compression", jpeg_quality=(90, 90)), 0)
    assert out[..., 0].mean() > 200 and out[..., 2].mean() < 20


def test_color_jitter_factors_within_ranges():
    cfg = AugmentationConfig(color_jitter=1.0)
    for seed in range(200):
        p = sample_plan(cfg, make_rng(seed)).params["color_jitter"]
        assert 0.85 <= p["brightness"] <= 1.15
        assert 0.7 <= p["contrast"] <= 1.3
        assert 0.9 <= p["saturation"] <= 1.1
        assert -0.1 <= p["hue"] <= 0.1


def test_rejects_non_uint8():
    with pytest.raises(ValueError):
        apply_plan(np.zeros((4, 4, 3)), AugmentationPlan({k: False for k in ORDER}))


def test_validate():
    with pytest.raises(ValueError):
        AugmentationConfig(grayscale=1.5).validate()
    with pytest.raises(ValueError):
        AugmentationConfig(contrast=(0.3, 0.1)).validate()
    AugmentationConfig().validate()


def test_firing_rates_within_three_sigma():
    cfg = AugmentationConfig()
    n = 100_000
    rng = make_rng(2024)
    counts = dict.fromkeys(ORDER, 0)
    for _ in range(n):
        for name, fired in sample_plan(cfg, rng).fired.items():
            counts[name] += fired
    for name, p in RECIPE.items():
        sigma = np.sqrt(p * (1 - p) / n)
        assert abs(counts[name] / n - p) <= 3 * sigma, name


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**63 - 1))
def test_double_flip_is_identity(seed):
    img = crop(seed % 1000)
    flip = only("horizontal_flip")
    assert np.array_equal(augment(augment(img, flip, seed), flip, seed + 1), img)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**63 - 1), st.floats(0, 1), st.floats(0, 1))
def test_firing_decisions_independent_of_parameters(seed, p1, p2):
    # changing one probability never changes another transform's decision
    a = sample_plan(AugmentationConfig(grayscale=p1), make_rng(seed)).fired
    b = sample_plan(AugmentationConfig(grayscale=p2), make_rng(seed)).fired
    assert {k: v for k, v in a.items() if k != "grayscale"} == {k: v for k, v in b.items() if k != "grayscale"}
