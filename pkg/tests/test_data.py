import numpy as np
import pytest

from handocc.data import AugmentPolicy, augment, network_input, preprocess_pair
from handocc.types import validate_sample


def test_network_input_channel_layout(sample64):
    x = preprocess_pair(sample64)
    assert x.shape == (64, 64, 6)
    hand = sample64.hand_fg.astype(bool)
    obj = sample64.object_fg.astype(bool)
    # background removed from the hand channels
    assert (x[..., :3][~hand] == 0.0).all()
    assert np.allclose(x[..., :3][hand], sample64.hand_image[hand])
    # overlay: tint over the object, hand pixels elsewhere inside the hand
    assert np.allclose(x[..., 3:][obj], (0.0, 0.0, 1.0))
    only_hand = hand & ~obj
    assert np.allclose(x[..., 3:][only_hand], sample64.hand_image[only_hand])
    assert (x[..., 3:][~hand & ~obj] == 0.0).all()


def test_network_input_custom_tint(sample64):
    x = network_input(sample64.hand_image, sample64.hand_fg, sample64.object_fg,
                      tint=(1.0, 0.0, 0.0))
    obj = sample64.object_fg.astype(bool)
    assert np.allclose(x[..., 3:][obj], (1.0, 0.0, 0.0))


def test_network_input_shape_mismatch():
    with pytest.raises(ValueError):
        network_input(np.zeros((64, 64, 3), np.float32),
                      np.zeros((64, 64), np.uint8),
                      np.zeros((64, 32), np.uint8))


def _policy_off(**overrides):
    policy = AugmentPolicy(p_hflip=0.0, p_rotate=0.0, p_sharpness=0.0,
                           p_brightness=0.0, p_contrast=0.0)
    for key, value in overrides.items():
        setattr(policy, key, value)
    return policy


def test_flip_twice_is_identity(sample64):
    policy = _policy_off(p_hflip=1.0)
    rng = np.random.default_rng(0)
    once = augment(sample64, rng, policy)
    twice = augment(once, rng, policy)
    for name in ("hand_image", "hand_fg", "object_render", "object_fg", "gt"):
        assert np.array_equal(getattr(twice, name), getattr(sample64, name)), name


def test_zero_rotation_is_identity(sample64):
    policy = _policy_off(p_rotate=1.0, max_rotate_deg=0.0)
    out = augment(sample64, np.random.default_rng(0), policy)
    assert np.allclose(out.hand_image, sample64.hand_image, atol=1e-6)
    assert np.array_equal(out.gt, sample64.gt)


def test_brightness_clamps(sample64):
    base = sample64
    base.hand_image = np.full_like(base.hand_image, 0.8)
    policy = _policy_off(p_brightness=1.0, brightness_range=(0.5, 0.5))
    out = augment(base, np.random.default_rng(0), policy)
    assert np.allclose(out.hand_image, 1.0)


def test_rotation_preserves_invariants(sample96):
    policy = _policy_off(p_rotate=1.0, max_rotate_deg=30.0)
    rng = np.random.default_rng(5)
    for _ in range(5):
        validate_sample(augment(sample96, rng, policy))


def test_full_policy_preserves_invariants(sample96):
    rng = np.random.default_rng(9)
    for _ in range(8):
        out = augment(sample96, rng, AugmentPolicy())
        validate_sample(out)
        assert out.hand_image.dtype == np.float32


def test_fixed_rng_reproduces(sample96):
    a = augment(sample96, np.random.default_rng(4), AugmentPolicy())
    b = augment(sample96, np.random.default_rng(4), AugmentPolicy())
    assert np.array_equal(a.hand_image, b.hand_image)
    assert np.array_equal(a.gt, b.gt)
