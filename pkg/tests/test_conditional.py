import math

import numpy as np
import pytest

from tsimg.conditional import (
    ConditioningContext,
    inpaint_sample,
    make_extrapolation_mask,
    make_interpolation_mask,
)
from tsimg.diffusion import DiffusionConfig, GaussianDenoiser, build_schedule, heun_sample
from tsimg.transforms import TransformSpec, UnsupportedKindError, inverse

DE = TransformSpec("delay-embedding", L=24, K=2, n=8, m=3, target_size=(8, 8))
FOLD = TransformSpec("folding", L=24, K=2)
SCHED = build_schedule(DiffusionConfig(num_steps=8))


def _series(n=3, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, size=(n, 24, 2))


# ------------------------------------------------------------------ masks


def test_half_interpolation_mask():
    mask = make_interpolation_mask(24, 1, 0.5, seed=0)
    assert mask.shape == (24, 1)
    assert (~mask).sum() == 12


def test_smallest_fraction_hides_one():
    mask = make_interpolation_mask(2, 2, 0.01, seed=0)
    assert (~mask).sum() == 1


def test_masks_differ_across_seeds():
    # two independent uniform 12-subsets of 24 coincide with probability 1 / C(24, 12)
    assert 1 / math.comb(24, 12) < 1e-6
    masks = [make_interpolation_mask(24, 1, 0.5, seed=s).tobytes() for s in range(50)]
    assert len(set(masks)) == 50


def test_interpolation_mask_rejects_bad_fraction():
    with pytest.raises(ValueError):
        make_interpolation_mask(24, 1, 1.0, 0)


@pytest.mark.parametrize("L, observed", [(96, 48), (2, 1), (3, 2)])
def test_extrapolation_mask_observes_first_half(L, observed):
    mask = make_extrapolation_mask(L, 3)
    assert mask[:observed].all() and not mask[observed:].any()


# ------------------------------------------------------------------ context


def test_context_rejects_stft():
    spec = TransformSpec("stft", L=24, K=2, n_fft=7, hop_length=2)
    with pytest.raises(UnsupportedKindError):
        ConditioningContext(_series(1)[0], np.ones((24, 2), bool), spec)


def test_context_rejects_nan_in_observed():
    x = _series(1)[0]
    x[3, 0] = np.nan
    with pytest.raises(ValueError, match="finite"):
        ConditioningContext(x, np.ones((24, 2), bool), DE)
    mask = np.ones((24, 2), bool)
    mask[3, 0] = False
    ConditioningContext(x, mask, DE)


def test_context_shape_mismatch():
    with pytest.raises(ValueError):
        ConditioningContext(np.zeros((23, 2)), np.ones((23, 2), bool), DE)


# ------------------------------------------------------------------ sampling


@pytest.mark.parametrize("spec", [DE, FOLD])
def test_all_observed_returns_input(spec):
    x = _series()
    out = inpaint_sample(GaussianDenoiser(0.5), ConditioningContext(x, np.ones_like(x, bool), spec), SCHED, 1)
    np.testing.assert_array_equal(out, x)


@pytest.mark.parametrize("spec", [DE, FOLD])
def test_all_unobserved_reduces_to_unconditional(spec):
    x = _series()
    model = GaussianDenoiser(0.5)
    out = inpaint_sample(model, ConditioningContext(x, np.zeros_like(x, bool), spec), SCHED, 4)
    images = heun_sample(model, (3,) + spec.image_shape(), SCHED, 4)
    np.testing.assert_array_equal(out, inverse(images, spec))


def test_observed_values_are_kept_exactly():
    x = _series()
    mask = np.stack([make_interpolation_mask(24, 2, 0.5, s) for s in range(3)])
    out = inpaint_sample(GaussianDenoiser(0.5), ConditioningContext(x, mask, DE), SCHED, 2)
    np.testing.assert_array_equal(out[mask], x[mask])
    assert np.isfinite(out).all()
    assert not np.array_equal(out[~mask], x[~mask])


def test_inpainting_is_seeded():
    x = _series()
    mask = make_extrapolation_mask(24, 2)
    ctx = ConditioningContext(x, mask, DE)
    model = GaussianDenoiser(0.5)
    a = inpaint_sample(model, ctx, SCHED, 5)
    np.testing.assert_array_equal(a, inpaint_sample(model, ctx, SCHED, 5))
    assert not np.array_equal(a, inpaint_sample(model, ctx, SCHED, 6))


class _Smoother:
    """Pulls every pixel towards the mean of the image; a crude data prior."""

    def denoise(self, x, sigma):
        m = x.mean(axis=(-2, -1), keepdims=True)
        return m + (x - m) / (1 + sigma**2)


def test_conditioning_information_reaches_missing_region():
    # with a prior that couples pixels, hidden values move towards the observed level
    x = np.full((1, 24, 2), 0.8)
    mask = np.ones_like(x, bool)
    mask[0, 10:14] = False
    unconditional = inpaint_sample(_Smoother(), ConditioningContext(x, np.zeros_like(mask), DE), SCHED, 0)
    out = inpaint_sample(_Smoother(), ConditioningContext(x, mask, DE), SCHED, 0)
    err = np.abs(out[~mask] - 0.8).mean()
    assert err < np.abs(unconditional[~mask] - 0.8).mean()
