"""
Concept inversion: optimize only the concept (mapper or single vector) against
the frozen generator.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from autodiff.optimizer import Adam
from autodiff.tensor import Graph, add, backward, scale
from config.errors import ConditioningError, ConfigError, FrozenGeneratorError
from config.logging_config import progress_enabled
from config.neti_config import IMAGE_CHANNELS, LATENT_SIZE
from config.schema import ModelConfig, TrainConfig
from diffusion.conditioning import build_layer_conditioning
from diffusion.latent_codec import encode_image
from mapper.concept import Concept, MapperConcept, init_concept, save_concept
from mapper.neural_mapper import sample_truncation
from persistence.corpus import ConceptImages
from textenc.vocabulary import TokenizedPrompt
from training.bundle import GeneratorBundle
from training.loss_trace import LossTrace
from training.losses import denoising_loss

logger = logging.getLogger(__name__)


class ConceptDataset:
    """One to six same-size images of a concept, each with a placeholder caption."""

    def __init__(self, images: np.ndarray, captions: Sequence[str], super_category: str):
        images = np.asarray(images)
        if images.ndim != 4 or not 1 <= len(images) <= 6:
            raise ConfigError(f"a concept dataset holds 1 to 6 images, got array of shape {images.shape}")
        if len(captions) != len(images):
            raise ConfigError(f"{len(captions)} captions for {len(images)} images")
        self.images = images
        self.captions = list(captions)
        self.super_category = super_category

    @classmethod
    def from_concept_images(cls, concept: ConceptImages, super_category: str) -> "ConceptDataset":
        return cls(concept.images, concept.captions, super_category)

    def __len__(self) -> int:
        return len(self.images)

    def tokenized(self, bundle: GeneratorBundle) -> List[TokenizedPrompt]:
        tokens = [bundle.tokenize(c) for c in self.captions]
        for tok in tokens:
            if not tok.has_placeholder:
                raise ConditioningError(f"caption {tok.text!r} has no placeholder")
        return tokens


@dataclass
class InversionResult:
    concept: Concept
    trace: LossTrace
    bundle_hash: str


def invert_concept(
    bundle: GeneratorBundle,
    dataset: ConceptDataset,
    model: ModelConfig,
    train: TrainConfig,
    seed: int,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    on_step: Optional[Callable[[int, float], None]] = None,
) -> InversionResult:
    """Fit a concept to ``dataset`` with the generator frozen.

    Every step runs ``grad_accum`` micro-batches of ``batch_size`` examples.
    Each example draws an image, a timestep, noise and one truncation shared by
    all of its layer queries. The losses are scaled by 1 / (batch x accum) so
    the accumulated gradient is a mean, and Adam then updates the concept only.
    """
    if not bundle.frozen:
        raise FrozenGeneratorError("inversion needs a frozen generator bundle")
    start_hash = bundle.content_hash()
    v_super = bundle.encoder.token_embedding(dataset.super_category)
    concept = init_concept(model, train, v_super, seed, dtype=bundle.dtype)
    params = concept.trainable()
    optimizer = Adam(params, train.effective_lr)

    latents = [encode_image(im, bundle.dtype) for im in dataset.images]
    tokens = dataset.tokenized(bundle)
    rng = np.random.default_rng([seed, 6])
    trace = LossTrace()
    T = bundle.schedule.num_timesteps
    per_step = train.batch_size * train.grad_accum
    use_dropout = isinstance(concept, MapperConcept) and train.dropout_prob > 0

    for step in tqdm(range(train.steps), desc=f"invert[{train.mode}]", disable=not progress_enabled()):
        optimizer.zero_grad()
        step_loss = 0.0
        for _ in range(train.grad_accum):
            with Graph(name="inversion") as graph:
                total = None
                for _ in range(train.batch_size):
                    i = int(rng.integers(len(latents)))
                    t = int(rng.integers(0, T))
                    eps = rng.standard_normal((LATENT_SIZE * LATENT_SIZE, IMAGE_CHANNELS)).astype(bundle.dtype)
                    truncation = sample_truncation(rng, concept.hidden_dim, train.dropout_prob) if use_dropout else None
                    cond = build_layer_conditioning(concept, bundle.encoder, t, tokens[i], truncation, train.alpha)
                    loss = denoising_loss(bundle, cond, latents[i], eps, t)
                    step_loss += loss.item()
                    term = scale(loss, 1.0 / per_step)
                    total = term if total is None else add(total, term)
            backward(graph, total)
        if train.debug:
            grad_norm = bundle.gradient_norm()
            if grad_norm != 0.0:
                raise FrozenGeneratorError(f"generator received gradient (norm^2 {grad_norm}) at step {step}")
        optimizer.step()
        trace.record(step, step_loss / per_step)
        if on_step is not None:
            on_step(step, step_loss / per_step)
        if checkpoint_dir is not None and (step + 1) % train.checkpoint_every == 0:
            save_concept(Path(checkpoint_dir) / f"step_{step + 1:05d}.neti", concept, model, train)

    bundle.check_unchanged(start_hash)
    if len(trace):
        logger.info("inversion [%s] done: final smoothed loss %.4f", train.mode, trace.final_smoothed)
    return InversionResult(concept, trace, start_hash)
