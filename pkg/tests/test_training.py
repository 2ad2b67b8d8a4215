"""
Tests for the generator bundle, pretraining, concept inversion and loss traces.
"""
import numpy as np
import pytest

from autodiff.gradcheck import check_gradients
from autodiff.tensor import Graph
from config.errors import ChecksumError, ConditioningError, ConfigError, FrozenGeneratorError
from config.schema import PretrainConfig, TrainConfig, resolve_config
from diffusion.conditioning import build_layer_conditioning
from diffusion.latent_codec import encode_image
from mapper.concept import init_concept, load_concept
from persistence.corpus import generate_corpus
from persistence.run_files import read_json, write_json_atomic
from training.bundle import META_FILE, GeneratorBundle
from training.inversion import ConceptDataset, invert_concept
from training.loss_trace import LossTrace
from training.losses import denoising_loss
from training.pretrain import held_in_loss, pretrain_generator


def _train(**overrides):
    fields = {"steps": 2, "batch_size": 1, "grad_accum": 1, "base_lr": 0.005, "checkpoint_every": 1}
    fields.update(overrides)
    return TrainConfig(**fields)


# ---------------------------------------------------------------------------
# Bundle
# ---------------------------------------------------------------------------

def test_bundle_is_frozen_after_pretraining(tiny_bundle):
    assert tiny_bundle.frozen
    assert tiny_bundle.unconditional_trained
    assert all(not t.requires_grad for t in tiny_bundle.params().values())
    assert tiny_bundle.metadata["hash"] == tiny_bundle.content_hash()


def test_bundle_save_and_load(tmp_path, tiny_bundle):
    tiny_bundle.save(tmp_path)
    loaded = GeneratorBundle.load(tmp_path)
    assert loaded.frozen
    assert loaded.content_hash() == tiny_bundle.content_hash()
    assert loaded.unconditional_trained
    assert loaded.vocab.tokens == tiny_bundle.vocab.tokens


def test_bundle_load_rejects_a_tampered_hash(tmp_path, tiny_bundle):
    tiny_bundle.save(tmp_path)
    meta = read_json(tmp_path / META_FILE)
    meta["hash"] = "0" * 64
    write_json_atomic(tmp_path / META_FILE, meta)
    with pytest.raises(ChecksumError):
        GeneratorBundle.load(tmp_path)


def test_check_unchanged(tiny_bundle):
    tiny_bundle.check_unchanged(tiny_bundle.metadata["hash"])
    with pytest.raises(FrozenGeneratorError):
        tiny_bundle.check_unchanged("f" * 64)


def test_pretraining_refuses_the_held_out_concept(tiny_model):
    tainted = generate_corpus(seed=0, count=64)
    tainted.captions[0] = "a photo of a red star on a white background"
    with pytest.raises(ConfigError):
        pretrain_generator(tainted, tiny_model, PretrainConfig(steps=1, batch_size=1, corpus_size=64), seed=0)


def test_pretraining_without_dropout_leaves_guidance_untrained(tiny_model, corpus):
    config = PretrainConfig(steps=1, batch_size=1, caption_dropout=0.0, corpus_size=64)
    bundle, trace = pretrain_generator(corpus, tiny_model, config, seed=3)
    assert not bundle.unconditional_trained
    assert len(trace) == 1
    assert np.isfinite(held_in_loss(bundle, corpus, seed=0, samples=2))


# ---------------------------------------------------------------------------
# Inversion
# ---------------------------------------------------------------------------

def test_zero_steps_returns_the_initial_concept(tiny_bundle, tiny_model, concept_dataset):
    train = _train(steps=0)
    result = invert_concept(tiny_bundle, concept_dataset, tiny_model, train, seed=4)
    fresh = init_concept(tiny_model, train, tiny_bundle.encoder.token_embedding("shape"), 4, dtype=tiny_bundle.dtype)
    assert len(result.trace) == 0
    for name, array in fresh.sections().items():
        assert np.array_equal(result.concept.sections()[name], array)


@pytest.mark.parametrize("mode", ["neti", "neti_bypass", "ti_baseline"])
def test_inversion_changes_only_the_concept(tmp_path, tiny_bundle, tiny_model, concept_dataset, mode):
    before = tiny_bundle.content_hash()
    train = _train(mode=mode, debug=True)
    result = invert_concept(tiny_bundle, concept_dataset, tiny_model, train, seed=1, checkpoint_dir=tmp_path)
    assert tiny_bundle.content_hash() == before == result.bundle_hash
    assert len(result.trace) == 2
    assert np.all(np.isfinite(result.trace.raw))
    assert sorted(p.name for p in tmp_path.glob("*.neti")) == ["step_00001.neti", "step_00002.neti"]
    restored = load_concept(tmp_path / "step_00002.neti", tiny_bundle.encoder.token_embedding)
    for name, array in result.concept.sections().items():
        assert np.array_equal(restored.sections()[name], array)


def test_inversion_reports_each_step(tiny_bundle, tiny_model, concept_dataset):
    seen = []
    invert_concept(tiny_bundle, concept_dataset, tiny_model, _train(steps=3), seed=2, on_step=lambda s, l: seen.append(s))
    assert seen == [0, 1, 2]


def test_inversion_needs_a_frozen_bundle(tiny_model, concept_dataset):
    bundle = GeneratorBundle.initialize(tiny_model, seed=0)
    with pytest.raises(FrozenGeneratorError):
        invert_concept(bundle, concept_dataset, tiny_model, _train(), seed=0)


def test_dataset_checks(concept_images, tiny_bundle):
    with pytest.raises(ConfigError):
        ConceptDataset(concept_images.images[:0], [], "shape")
    with pytest.raises(ConfigError):
        ConceptDataset(concept_images.images, concept_images.captions[:2], "shape")
    plain = ConceptDataset(concept_images.images[:1], ["a photo of a red circle"], "shape")
    with pytest.raises(ConditioningError):
        plain.tokenized(tiny_bundle)


def test_inversion_loss_gradient(float64_bundle, tiny_model, concept_images):
    bundle = float64_bundle
    train = TrainConfig(mode="neti_bypass")
    concept = init_concept(tiny_model, train, bundle.encoder.token_embedding("shape"), 0, dtype=np.float64)
    tokens = bundle.tokenize(concept_images.captions[0])
    z0 = encode_image(concept_images.images[0], np.float64)
    eps = np.random.default_rng(0).standard_normal(z0.shape)

    def fn(**params):
        cond = build_layer_conditioning(concept, bundle.encoder, 420, tokens, None, 0.2)
        return {"loss": denoising_loss(bundle, cond, z0, eps, 420)}

    inputs = concept.trainable()
    graph = Graph(fn, {name: t.shape for name, t in inputs.items()})
    report = check_gradients(graph, inputs, tolerance=1e-4, max_entries=20)
    assert report.passed, report.max_rel_error
    assert bundle.gradient_norm() == 0.0


def test_effective_learning_rate_is_validated():
    assert TrainConfig(batch_size=2, grad_accum=4, base_lr=0.005).effective_lr == pytest.approx(0.04)
    with pytest.raises(ConfigError):
        resolve_config(file={"train": {"batch_size": 2, "grad_accum": 4, "base_lr": 0.005, "effective_lr": 0.005}})


# ---------------------------------------------------------------------------
# Loss trace
# ---------------------------------------------------------------------------

def test_loss_trace_smoothing():
    trace = LossTrace(window=3)
    for step, loss in enumerate([1.0, 2.0, 3.0, 4.0]):
        trace.record(step, loss)
    np.testing.assert_allclose(trace.smoothed, [1.0, 1.5, 2.0, 3.0])
    assert trace.final_smoothed == 3.0
    assert np.isnan(LossTrace().final_smoothed)


def test_loss_trace_csv_round_trip(tmp_path):
    trace = LossTrace(window=2)
    for step, loss in enumerate([0.5, 0.25, 0.125]):
        trace.record(step, loss)
    trace.export_csv(tmp_path / "loss.csv")
    assert (tmp_path / "loss.csv").read_text().splitlines()[0] == "step,raw_loss,smoothed_loss"
    loaded = LossTrace.load_csv(tmp_path / "loss.csv", window=2)
    assert np.array_equal(loaded.raw, trace.raw)
    assert np.array_equal(loaded.smoothed, trace.smoothed)
    assert loaded.record(3, 0.0).smoothed_loss == pytest.approx(0.0625)


# ---------------------------------------------------------------------------
# Long runs
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_pretraining_halves_the_loss(toy_pretrained):
    _, trace = toy_pretrained
    assert trace.final_smoothed <= 0.5 * float(np.mean(trace.raw[:10]))


@pytest.mark.slow
def test_mapper_beats_the_ablation(toy_bundle, toy_model, concept_dataset):
    wins = 0
    for seed in range(5):
        full = invert_concept(toy_bundle, concept_dataset, toy_model, TrainConfig(mode="neti", steps=500), seed=seed)
        neither = invert_concept(toy_bundle, concept_dataset, toy_model,
                                 TrainConfig(mode="ablate_neither", steps=500), seed=seed)
        wins += full.trace.final_smoothed < neither.trace.final_smoothed
    assert wins >= 4


@pytest.mark.slow
def test_vector_baseline_loss_goes_down(toy_bundle, toy_model, concept_dataset):
    result = invert_concept(toy_bundle, concept_dataset, toy_model, TrainConfig(mode="ti_baseline", steps=500), seed=0)
    blocks = result.trace.raw.reshape(5, 100).mean(axis=1)
    assert blocks[-1] < blocks[0]
    assert blocks[1:].max() <= blocks[0]
    smoothed = result.trace.smoothed
    assert smoothed[-1] < smoothed[49]
