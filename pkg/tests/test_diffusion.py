"""
Tests for the noise schedule, latent codec, toy denoiser, per-layer conditioning and the sampler.
"""
import numpy as np
import pytest

from autodiff.tensor import Tensor
from config.errors import ConditioningError, GuidanceUnavailableError, RangeError, ShapeError
from config.schema import TrainConfig
from diffusion.conditioning import LayerConditioning, build_layer_conditioning, plain_conditioning
from diffusion.denoiser import predict_noise
from diffusion.latent_codec import decode_latent, encode_image, psnr, upsample_matrix
from diffusion.sampler import ddim_step, guide, sample_image, sample_latent, sampling_timesteps
from diffusion.schedule import NoiseSchedule, add_noise, linear_schedule
from analysis.decomposition import CountingBuilder, concept_builder
from mapper.concept import init_concept

CAPTION = "a photo of a red circle on a white background"
PROMPT = "a photo of S* on a white background"


def _concept(bundle, model, mode="neti", seed=0):
    v_super = bundle.encoder.token_embedding("shape")
    return init_concept(model, TrainConfig(mode=mode), v_super, seed, dtype=bundle.dtype)


# ---------------------------------------------------------------------------
# Schedule
# ---------------------------------------------------------------------------

def test_linear_schedule():
    schedule = linear_schedule()
    assert schedule.num_timesteps == 1000
    assert schedule.betas[0] == pytest.approx(1e-4)
    assert schedule.betas[-1] == pytest.approx(0.02)
    assert np.all(np.diff(schedule.alpha_bars) < 0)


def test_add_noise_limits():
    schedule = NoiseSchedule(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    z0 = np.random.default_rng(0).standard_normal((4, 3))
    eps = np.random.default_rng(1).standard_normal((4, 3))
    assert np.array_equal(add_noise(z0, eps, 0, schedule), z0)
    assert np.array_equal(add_noise(z0, eps, 1, schedule), eps)


def test_add_noise_energy():
    schedule = linear_schedule()
    rng = np.random.default_rng(2)
    z0 = np.tile(rng.uniform(-1, 1, size=16), (10_000, 1))
    eps = rng.standard_normal(z0.shape)
    for t in (50, 500, 950):
        z_t = add_noise(z0, eps, t, schedule)
        abar = schedule.alpha_bars[t]
        expected = abar * np.sum(z0[0] ** 2) + (1 - abar) * 16
        assert np.mean(np.sum(z_t ** 2, axis=1)) == pytest.approx(expected, rel=0.02)


def test_add_noise_errors():
    schedule = linear_schedule()
    with pytest.raises(RangeError):
        add_noise(np.zeros(3), np.zeros(3), 1000, schedule)
    with pytest.raises(ShapeError):
        add_noise(np.zeros(3), np.zeros(4), 10, schedule)


# ---------------------------------------------------------------------------
# Codec
# ---------------------------------------------------------------------------

def test_codec_shapes_and_range(corpus):
    latent = encode_image(corpus.images[0])
    assert latent.shape == (256, 3)
    assert latent.min() >= -1.0 and latent.max() <= 1.0
    assert decode_latent(latent).shape == (32, 32, 3)


def test_codec_reconstructs_flat_images():
    image = np.full((32, 32, 3), 100, dtype=np.uint8)
    assert np.array_equal(decode_latent(encode_image(image)), image)
    np.testing.assert_allclose(upsample_matrix().sum(axis=1), 1.0)


def test_codec_psnr_on_corpus(corpus):
    scores = [psnr(image, decode_latent(encode_image(image))) for image in corpus.images]
    assert np.mean(scores) > 25.0


def test_codec_rejects_wrong_sizes():
    with pytest.raises(ShapeError):
        encode_image(np.zeros((16, 16, 3), dtype=np.uint8))
    with pytest.raises(ShapeError):
        decode_latent(np.zeros((16, 3)))


# ---------------------------------------------------------------------------
# Denoiser
# ---------------------------------------------------------------------------

def test_denoiser_output_shape_and_attention(tiny_bundle, corpus):
    cond = plain_conditioning(tiny_bundle.encoder, tiny_bundle.tokenize(CAPTION), tiny_bundle.num_layers)
    z = encode_image(corpus.images[0])
    probe = []
    eps = predict_noise(z, 500, cond, tiny_bundle.denoiser, attention_probe=probe)
    assert eps.shape == z.shape
    assert len(probe) == tiny_bundle.num_layers
    for weights in probe:
        assert weights.shape == (256, 12)
        assert np.all(np.abs(weights.sum(axis=1) - 1.0) < 1e-6)


def test_denoiser_uses_keys_and_values(tiny_bundle, corpus):
    bundle = tiny_bundle
    L = bundle.num_layers
    cond = plain_conditioning(bundle.encoder, bundle.tokenize(CAPTION), L)
    other = plain_conditioning(bundle.encoder, bundle.tokenize("a photo of a blue cross on a black background"), L)
    z = encode_image(corpus.images[3])
    base = predict_noise(z, 300, cond, bundle.denoiser).data

    zeros = Tensor(np.zeros(cond.values[0].shape, dtype=bundle.dtype))
    no_values = LayerConditioning(cond.keys, [zeros] * L)
    swapped_keys = LayerConditioning(other.keys, cond.values)
    assert not np.array_equal(predict_noise(z, 300, no_values, bundle.denoiser).data, base)
    assert not np.array_equal(predict_noise(z, 300, swapped_keys, bundle.denoiser).data, base)


def test_denoiser_layer_count_mismatch(tiny_bundle):
    cond = plain_conditioning(tiny_bundle.encoder, tiny_bundle.tokenize(CAPTION), tiny_bundle.num_layers + 1)
    with pytest.raises(ShapeError):
        predict_noise(np.zeros((256, 3), dtype=np.float32), 10, cond, tiny_bundle.denoiser)


# ---------------------------------------------------------------------------
# Conditioning
# ---------------------------------------------------------------------------

def test_without_bypass_keys_equal_values(tiny_bundle, tiny_model):
    cond = build_layer_conditioning(_concept(tiny_bundle, tiny_model), tiny_bundle.encoder, 400,
                                    tiny_bundle.tokenize(PROMPT))
    assert cond.num_layers == tiny_model.num_layers
    for key, value in zip(cond.keys, cond.values):
        assert np.array_equal(key.data, value.data)


def test_layers_get_distinct_sequences(tiny_bundle, tiny_model):
    cond = build_layer_conditioning(_concept(tiny_bundle, tiny_model), tiny_bundle.encoder, 400,
                                    tiny_bundle.tokenize(PROMPT))
    assert not np.array_equal(cond.keys[0].data, cond.keys[1].data)


def test_zero_alpha_bypass_reproduces_plain_conditioning(tiny_bundle, tiny_model):
    tokens = tiny_bundle.tokenize(PROMPT)
    plain = build_layer_conditioning(_concept(tiny_bundle, tiny_model, "neti"), tiny_bundle.encoder, 700, tokens)
    bypass = build_layer_conditioning(_concept(tiny_bundle, tiny_model, "neti_bypass"), tiny_bundle.encoder, 700,
                                      tokens, alpha=0.0)
    for l in range(tiny_model.num_layers):
        assert np.array_equal(bypass.keys[l].data, plain.keys[l].data)
        assert np.array_equal(bypass.values[l].data, plain.values[l].data)


def test_bypass_only_touches_values(float64_bundle, tiny_model):
    tokens = float64_bundle.tokenize(PROMPT)
    plain = build_layer_conditioning(_concept(float64_bundle, tiny_model, "neti"), float64_bundle.encoder, 700, tokens)
    bypass = build_layer_conditioning(_concept(float64_bundle, tiny_model, "neti_bypass"), float64_bundle.encoder,
                                      700, tokens, alpha=0.2)
    pos = tokens.placeholder_pos
    for l in range(tiny_model.num_layers):
        key, value = bypass.keys[l].data, bypass.values[l].data
        assert np.array_equal(key, plain.keys[l].data)
        residual = value[pos] - key[pos]
        np.testing.assert_allclose(np.linalg.norm(residual), 0.2 * np.linalg.norm(key[pos]), rtol=1e-6)
        others = [i for i in range(key.shape[0]) if i != pos]
        assert np.array_equal(value[others], key[others])


def test_conditioning_needs_a_placeholder(tiny_bundle, tiny_model):
    with pytest.raises(ConditioningError):
        build_layer_conditioning(_concept(tiny_bundle, tiny_model), tiny_bundle.encoder, 10,
                                 tiny_bundle.tokenize(CAPTION))


# ---------------------------------------------------------------------------
# Sampler
# ---------------------------------------------------------------------------

def test_sampling_timesteps():
    steps = sampling_timesteps(50, 1000)
    assert len(steps) == 50
    assert steps[0] == 981 and steps[-1] == 1
    assert all(a > b for a, b in zip(steps, steps[1:]))
    assert sampling_timesteps(1000, 1000) == list(range(999, -1, -1))
    with pytest.raises(RangeError):
        sampling_timesteps(0, 1000)


def test_guidance_edges_are_exact():
    rng = np.random.default_rng(0)
    eps_u, eps_c = rng.standard_normal((256, 3)), rng.standard_normal((256, 3))
    assert guide(eps_u, eps_c, 1.0) is eps_c
    assert guide(eps_u, eps_c, 0.0) is eps_u
    np.testing.assert_allclose(guide(eps_u, eps_c, 7.5), eps_u + 7.5 * (eps_c - eps_u))


def test_ddim_step_with_perfect_noise_estimate():
    schedule = linear_schedule()
    rng = np.random.default_rng(1)
    x0 = rng.uniform(-0.9, 0.9, size=(256, 3))
    eps = rng.standard_normal((256, 3))
    z = add_noise(x0, eps, 600, schedule)
    np.testing.assert_allclose(ddim_step(z, eps, 600, 400, schedule), add_noise(x0, eps, 400, schedule), atol=1e-10)


def test_sampling_is_deterministic(tiny_bundle, tiny_model):
    concept = _concept(tiny_bundle, tiny_model)
    first = sample_image(tiny_bundle, concept_builder(tiny_bundle, concept, PROMPT), steps=3, guidance=7.5, seed=7)
    second = sample_image(tiny_bundle, concept_builder(tiny_bundle, concept, PROMPT), steps=3, guidance=7.5, seed=7)
    other = sample_image(tiny_bundle, concept_builder(tiny_bundle, concept, PROMPT), steps=3, guidance=7.5, seed=8)
    assert first.dtype == np.uint8 and first.shape == (32, 32, 3)
    assert np.array_equal(first, second)
    assert not np.array_equal(first, other)


def test_builder_called_once_per_step(tiny_bundle, tiny_model):
    builder = concept_builder(tiny_bundle, _concept(tiny_bundle, tiny_model), PROMPT)
    sample_latent(tiny_bundle, builder, steps=5, guidance=7.5, seed=0)
    assert builder.calls == 5
    assert builder.timesteps == sampling_timesteps(5, 1000)


def test_unconditional_sampling_is_finite(tiny_bundle):
    cond = plain_conditioning(tiny_bundle.encoder, tiny_bundle.tokenize(CAPTION), tiny_bundle.num_layers)
    builder = CountingBuilder(lambda t: cond)
    z = sample_latent(tiny_bundle, builder, steps=3, guidance=0.0, seed=1)
    assert np.all(np.isfinite(z))


def test_guidance_needs_unconditional_training(float64_bundle):
    assert not float64_bundle.unconditional_trained
    cond = plain_conditioning(float64_bundle.encoder, float64_bundle.tokenize(CAPTION), float64_bundle.num_layers)
    with pytest.raises(GuidanceUnavailableError):
        sample_latent(float64_bundle, lambda t: cond, steps=2, guidance=7.5, seed=0)
    assert sample_latent(float64_bundle, lambda t: cond, steps=2, guidance=1.0, seed=0).shape == (256, 3)
