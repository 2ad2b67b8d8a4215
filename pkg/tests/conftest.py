"""
Shared fixtures: small model configs, a rendered corpus and a briefly
pretrained generator. Tests marked ``slow`` run only with NETI_RUN_SLOW=1.
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config.schema import ModelConfig, PretrainConfig, TrainConfig, resolve_config
from persistence.corpus import generate_concept, generate_corpus
from training.bundle import GeneratorBundle
from training.inversion import ConceptDataset, invert_concept
from training.pretrain import pretrain_generator

TINY_MODEL = {
    "num_layers": 2,
    "context_length": 12,
    "embed_dim": 16,
    "num_frequencies": 16,
    "num_time_anchors": 10,
    "hidden_dim": 16,
    "channels": 8,
    "attn_dim": 8,
    "text_layers": 1,
    "text_ffn_dim": 32,
    "sigma_t": 0.03,
    "sigma_l": 2.0,
}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training runs (set NETI_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("NETI_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set NETI_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def toy_model() -> ModelConfig:
    return resolve_config().model


@pytest.fixture(scope="session")
def paper_model() -> ModelConfig:
    return resolve_config({"preset": "paper"}).model


@pytest.fixture(scope="session")
def tiny_model() -> ModelConfig:
    return ModelConfig(**TINY_MODEL)


@pytest.fixture(scope="session")
def corpus():
    return generate_corpus(seed=0, count=64)


@pytest.fixture(scope="session")
def concept_images():
    return generate_concept(seed=0)


@pytest.fixture(scope="session")
def tiny_bundle(corpus, tiny_model) -> GeneratorBundle:
    """Frozen tiny generator after two pretraining steps with caption dropout."""
    config = PretrainConfig(steps=2, batch_size=2, caption_dropout=0.5, corpus_size=64)
    bundle, _ = pretrain_generator(corpus, tiny_model, config, seed=0)
    return bundle


@pytest.fixture(scope="session")
def float64_bundle(tiny_model) -> GeneratorBundle:
    return GeneratorBundle.initialize(tiny_model, seed=0, dtype=np.float64).freeze()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def toy_pretrained(toy_model):
    """Toy generator pretrained on a 512-image corpus, with its trace. Slow tests only."""
    corpus = generate_corpus(seed=0, count=512)
    return pretrain_generator(corpus, toy_model, PretrainConfig(), seed=0)


@pytest.fixture(scope="session")
def toy_bundle(toy_pretrained) -> GeneratorBundle:
    return toy_pretrained[0]


@pytest.fixture(scope="session")
def concept_dataset(concept_images) -> ConceptDataset:
    return ConceptDataset.from_concept_images(concept_images, "shape")


@pytest.fixture(scope="session")
def toy_inversion(toy_bundle, toy_model, concept_dataset):
    """The held-out concept after a 500-step neti inversion on the toy generator."""
    return invert_concept(toy_bundle, concept_dataset, toy_model, TrainConfig(mode="neti", steps=500), seed=0)
