"""
Tests for per-timestep decomposition, style mixing and the truncation sweep.
"""
import numpy as np
import pytest

from analysis.decomposition import (
    DecompositionSpec, concept_builder, decompose_timestep, decomposition_builder,
)
from analysis.style_mixing import StyleMixSpec, mixed_builder, style_mix
from analysis.truncation_sweep import truncation_sweep
from autodiff.tensor import Tensor
from config.errors import ConfigError, RangeError
from config.neti_config import CONCEPT_TEMPLATE
from config.schema import TrainConfig, resolve_config
from diffusion.sampler import sample_image, sample_latent
from evaluation.features import FrozenFeatureExtractor
from evaluation.metrics import image_similarity
from mapper.concept import VectorConcept, init_concept
from persistence.corpus import generate_corpus
from persistence.images import mean_pixel_distance
from training.inversion import ConceptDataset, invert_concept

PROMPT = "a photo of S* on a white background"
STEPS = 3


class RecordingConcept:
    """Forwards to a concept and remembers every timestep it was queried at."""

    def __init__(self, inner):
        self.inner = inner
        self.queried = []

    @property
    def num_layers(self):
        return self.inner.num_layers

    @property
    def hidden_dim(self):
        return self.inner.hidden_dim

    def query(self, t, layers, truncation=None):
        self.queried.append(t)
        return self.inner.query(t, layers, truncation)


def _concept(bundle, model, mode="neti", seed=0):
    v_super = bundle.encoder.token_embedding("shape")
    return init_concept(model, TrainConfig(mode=mode), v_super, seed, dtype=bundle.dtype)


# ---------------------------------------------------------------------------
# Decomposition
# ---------------------------------------------------------------------------

def test_decomposition_queries_the_concept_once(tiny_bundle, tiny_model):
    concept = RecordingConcept(_concept(tiny_bundle, tiny_model))
    builder = decomposition_builder(tiny_bundle, concept, DecompositionSpec(fixed_t=850), PROMPT)
    sample_latent(tiny_bundle, builder, steps=STEPS, guidance=7.5, seed=0)
    assert concept.queried == [850]
    assert builder.calls == STEPS


def test_timestep_independent_concept_decomposes_to_the_plain_sample(tiny_bundle, tiny_model):
    concept = _concept(tiny_bundle, tiny_model, mode="ablate_no_time")
    plain = sample_image(tiny_bundle, concept_builder(tiny_bundle, concept, PROMPT), STEPS, 7.5, seed=5)
    fixed = decompose_timestep(tiny_bundle, concept, DecompositionSpec(fixed_t=200), PROMPT, seed=5, steps=STEPS)
    assert np.array_equal(plain, fixed)


def test_decompositions_at_different_timesteps_differ(tiny_bundle, tiny_model):
    concept = _concept(tiny_bundle, tiny_model)
    timesteps = [999, 666, 333, 50]
    latents = [
        sample_latent(tiny_bundle, decomposition_builder(tiny_bundle, concept, DecompositionSpec(fixed_t=t), PROMPT),
                      steps=STEPS, guidance=7.5, seed=5)
        for t in timesteps
    ]
    for i in range(len(timesteps)):
        for j in range(i + 1, len(timesteps)):
            assert not np.array_equal(latents[i], latents[j]), (timesteps[i], timesteps[j])
    image = decompose_timestep(tiny_bundle, concept, DecompositionSpec(fixed_t=50), PROMPT, seed=5, steps=STEPS)
    assert image.shape == (32, 32, 3)


def test_decomposition_range():
    with pytest.raises(RangeError):
        DecompositionSpec(fixed_t=1000)
    with pytest.raises(RangeError):
        DecompositionSpec(fixed_t=-1)


# ---------------------------------------------------------------------------
# Style mixing
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def two_concepts(tiny_bundle, tiny_model):
    return _concept(tiny_bundle, tiny_model, seed=1), _concept(tiny_bundle, tiny_model, seed=2)


def _pure(bundle, concept, seed=9):
    return sample_image(bundle, concept_builder(bundle, concept, PROMPT), STEPS, 7.5, seed)


def test_mixing_that_never_starts_is_pure_geometry(tiny_bundle, two_concepts):
    geometry, appearance = two_concepts
    spec = StyleMixSpec([], mix_start_t=0, mapper_geometry=geometry, mapper_appearance=appearance)
    assert np.array_equal(style_mix(tiny_bundle, spec, PROMPT, seed=9, steps=STEPS), _pure(tiny_bundle, geometry))


def test_geometry_on_every_layer_is_pure_geometry(tiny_bundle, tiny_model, two_concepts):
    geometry, appearance = two_concepts
    spec = StyleMixSpec(range(tiny_model.num_layers), mix_start_t=999, mapper_geometry=geometry,
                        mapper_appearance=appearance)
    assert np.array_equal(style_mix(tiny_bundle, spec, PROMPT, seed=9, steps=STEPS), _pure(tiny_bundle, geometry))


def test_no_geometry_layers_is_pure_appearance(tiny_bundle, two_concepts):
    geometry, appearance = two_concepts
    spec = StyleMixSpec([], mix_start_t=999, mapper_geometry=geometry, mapper_appearance=appearance)
    assert np.array_equal(style_mix(tiny_bundle, spec, PROMPT, seed=9, steps=STEPS), _pure(tiny_bundle, appearance))


def test_mixed_conditioning_takes_layers_from_each_concept(tiny_bundle, two_concepts):
    geometry, appearance = two_concepts
    spec = StyleMixSpec([0], mix_start_t=500, mapper_geometry=geometry, mapper_appearance=appearance)
    mixed = mixed_builder(tiny_bundle, spec, PROMPT)(300)
    geo = concept_builder(tiny_bundle, geometry, PROMPT)(300)
    app = concept_builder(tiny_bundle, appearance, PROMPT)(300)
    assert np.array_equal(mixed.keys[0].data, geo.keys[0].data)
    assert np.array_equal(mixed.values[0].data, geo.values[0].data)
    assert np.array_equal(mixed.keys[1].data, app.keys[1].data)
    assert np.array_equal(mixed.values[1].data, app.values[1].data)


def test_style_mix_spec_checks(tiny_model, two_concepts):
    geometry, appearance = two_concepts
    with pytest.raises(RangeError):
        StyleMixSpec([tiny_model.num_layers], 500, geometry, appearance)
    other = VectorConcept(Tensor(np.ones((1, tiny_model.embed_dim))), tiny_model.num_layers + 1)
    with pytest.raises(ConfigError):
        StyleMixSpec([0], 500, geometry, other)


# ---------------------------------------------------------------------------
# Truncation sweep
# ---------------------------------------------------------------------------

def test_full_width_sweep_matches_the_default_sample(tiny_bundle, tiny_model):
    concept = _concept(tiny_bundle, tiny_model)
    result = truncation_sweep(tiny_bundle, concept, PROMPT, [tiny_model.hidden_dim], seed=3, steps=STEPS)
    assert np.array_equal(result.images[0], _pure(tiny_bundle, concept, seed=3))
    assert result.rows() == [{"k": tiny_model.hidden_dim, "score": None}]


def test_sweep_scores_against_references(tiny_bundle, tiny_model, concept_images):
    concept = _concept(tiny_bundle, tiny_model)
    result = truncation_sweep(tiny_bundle, concept, PROMPT, [2, 8], seed=0, steps=2,
                              reference_images=concept_images.images, extractor=FrozenFeatureExtractor(),
                              samples_per_k=2)
    assert result.ks == [2, 8]
    assert len(result.images) == 2
    assert all(-1.0 <= s <= 1.0 for s in result.scores)


def test_sweep_ranges(tiny_bundle, tiny_model):
    concept = _concept(tiny_bundle, tiny_model)
    with pytest.raises(RangeError):
        truncation_sweep(tiny_bundle, concept, PROMPT, [0], seed=0, steps=1)
    with pytest.raises(RangeError):
        truncation_sweep(tiny_bundle, concept, PROMPT, [tiny_model.hidden_dim + 1], seed=0, steps=1)
    vector = _concept(tiny_bundle, tiny_model, mode="ti_baseline")
    with pytest.raises(RangeError):
        truncation_sweep(tiny_bundle, vector, PROMPT, [4], seed=0, steps=1)


# ---------------------------------------------------------------------------
# Trained toy concept (slow)
# ---------------------------------------------------------------------------

MIX_STARTS = [600, 700, 800, 900]


@pytest.fixture(scope="module")
def appearance_inversion(toy_bundle, toy_model):
    """A second toy concept, yellow squares from the corpus, inverted like the held-out star."""
    corpus = generate_corpus(seed=1, count=256)
    picked = [i for i, a in enumerate(corpus.attributes) if a["color"] == "yellow" and a["shape"] == "square"][:4]
    captions = [CONCEPT_TEMPLATE.format(background=corpus.attributes[i]["background"]) for i in picked]
    dataset = ConceptDataset(corpus.images[picked], captions, "shape")
    return invert_concept(toy_bundle, dataset, toy_model, TrainConfig(mode="neti", steps=500), seed=1)


@pytest.mark.slow
def test_trained_decomposition_depends_on_the_timestep(toy_bundle, toy_model, toy_inversion):
    concept = toy_inversion.concept
    full = sample_image(toy_bundle, concept_builder(toy_bundle, concept, PROMPT), 50, 7.5, seed=0)
    for t in (999, 50):
        fixed = decompose_timestep(toy_bundle, concept, DecompositionSpec(fixed_t=t), PROMPT, seed=0)
        assert mean_pixel_distance(fixed, full) > 0, t

    flat = _concept(toy_bundle, toy_model, mode="ablate_no_time")
    plain = sample_image(toy_bundle, concept_builder(toy_bundle, flat, PROMPT), 50, 7.5, seed=0)
    for t in (999, 50):
        assert np.array_equal(decompose_timestep(toy_bundle, flat, DecompositionSpec(fixed_t=t), PROMPT, seed=0), plain)


@pytest.mark.slow
def test_sweep_score_grows_with_kept_units(toy_bundle, toy_inversion, concept_images):
    result = truncation_sweep(toy_bundle, toy_inversion.concept, PROMPT, [8, 16, 32, 64, 128], seed=0,
                              reference_images=concept_images.images, extractor=FrozenFeatureExtractor(),
                              samples_per_k=2)
    scores = result.scores
    assert scores[-1] > scores[0]
    drops = sum(later < earlier for earlier, later in zip(scores, scores[1:]))
    assert drops <= 1, scores


@pytest.mark.slow
def test_later_mix_start_moves_away_from_the_geometry_concept(toy_bundle, toy_inversion, appearance_inversion,
                                                              concept_images):
    extractor = FrozenFeatureExtractor()
    layers = resolve_config().analysis.geometry_layers
    distances = []
    for start in MIX_STARTS:
        spec = StyleMixSpec(layers, start, toy_inversion.concept, appearance_inversion.concept)
        images = [style_mix(toy_bundle, spec, PROMPT, seed=s) for s in range(3)]
        distances.append(1.0 - image_similarity(images, concept_images.images, extractor))
    assert all(later >= earlier for earlier, later in zip(distances, distances[1:])), distances
