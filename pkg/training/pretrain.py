"""
Pretraining of the toy generator on the procedural corpus, then freezing it.
"""
import logging
from typing import Callable, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from autodiff.optimizer import Adam
from autodiff.tensor import Graph, add, backward, scale
from config.errors import ConfigError, DivergenceError, NonFiniteError
from config.logging_config import progress_enabled
from config.neti_config import HELD_OUT_CONCEPT, IMAGE_CHANNELS, LATENT_SIZE
from config.schema import ModelConfig, PretrainConfig
from diffusion.conditioning import plain_conditioning
from diffusion.latent_codec import encode_image
from persistence.corpus import ProceduralCorpus
from training.bundle import GeneratorBundle
from training.loss_trace import LossTrace
from training.losses import denoising_loss

logger = logging.getLogger(__name__)


def _check_held_out(corpus: ProceduralCorpus) -> None:
    banned = {HELD_OUT_CONCEPT["shape"]}
    for caption in corpus.captions:
        if banned & set(caption.split()):
            raise ConfigError(f"pretraining caption mentions the held-out concept: {caption!r}")


def pretrain_generator(
    corpus: ProceduralCorpus,
    model: ModelConfig,
    config: PretrainConfig,
    seed: int,
    dtype=np.float32,
    on_step: Optional[Callable[[int, float], None]] = None,
) -> Tuple[GeneratorBundle, LossTrace]:
    """Train text encoder, token table and denoiser jointly on the denoising loss.

    A caption is replaced by the empty prompt with probability
    ``config.caption_dropout`` so the unconditional pathway is learned too.
    Returns the frozen bundle and the loss trace.
    """
    _check_held_out(corpus)
    bundle = GeneratorBundle.initialize(model, seed, dtype)
    latents = [encode_image(im, dtype) for im in corpus.images]
    captions = [bundle.tokenize(c) for c in corpus.captions]
    empty = bundle.tokenize("")
    optimizer = Adam(bundle.params(), config.lr)
    rng = np.random.default_rng([seed, 5])
    trace = LossTrace()
    T = bundle.schedule.num_timesteps

    for step in tqdm(range(config.steps), desc="pretrain", disable=not progress_enabled()):
        optimizer.zero_grad()
        losses: List[float] = []
        try:
            with Graph(name="pretrain") as graph:
                total = None
                for _ in range(config.batch_size):
                    i = int(rng.integers(len(latents)))
                    tokens = empty if rng.random() < config.caption_dropout else captions[i]
                    t = int(rng.integers(0, T))
                    eps = rng.standard_normal((LATENT_SIZE * LATENT_SIZE, IMAGE_CHANNELS)).astype(dtype)
                    cond = plain_conditioning(bundle.encoder, tokens, bundle.num_layers)
                    loss = denoising_loss(bundle, cond, latents[i], eps, t)
                    losses.append(loss.item())
                    term = scale(loss, 1.0 / config.batch_size)
                    total = term if total is None else add(total, term)
            backward(graph, total)
            optimizer.step()
        except NonFiniteError as exc:
            raise DivergenceError(f"pretraining diverged at step {step}: {exc}") from exc
        mean_loss = float(np.mean(losses))
        if not np.isfinite(mean_loss):
            raise DivergenceError(f"pretraining loss is {mean_loss} at step {step}")
        trace.record(step, mean_loss)
        if on_step is not None:
            on_step(step, mean_loss)

    bundle.metadata.update({
        "pretrain_steps": config.steps,
        "caption_dropout": config.caption_dropout,
        "unconditional_trained": config.caption_dropout > 0 and config.steps > 0,
        "corpus_seed": corpus.seed,
        "corpus_size": len(corpus),
        "model": model.model_dump(),
    })
    bundle.freeze()
    if len(trace):
        logger.info("pretraining done: final smoothed loss %.4f, hash %s", trace.final_smoothed,
                    bundle.metadata["hash"][:12])
    return bundle, trace


def held_in_loss(bundle: GeneratorBundle, corpus: ProceduralCorpus, seed: int, samples: int = 32) -> float:
    """Mean denoising loss on corpus captions at fixed seeded (image, t, eps) draws."""
    rng = np.random.default_rng([seed, 7])
    total = 0.0
    for _ in range(samples):
        i = int(rng.integers(len(corpus)))
        t = int(rng.integers(0, bundle.schedule.num_timesteps))
        eps = rng.standard_normal((LATENT_SIZE * LATENT_SIZE, IMAGE_CHANNELS)).astype(bundle.dtype)
        cond = plain_conditioning(bundle.encoder, bundle.tokenize(corpus.captions[i]), bundle.num_layers)
        total += denoising_loss(bundle, cond, encode_image(corpus.images[i], bundle.dtype), eps, t).item()
    return total / samples
