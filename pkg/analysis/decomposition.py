"""
Per-timestep decomposition: condition every sampling step on the concept as
seen at one fixed timestep.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from config.errors import RangeError
from config.neti_config import NUM_TIMESTEPS
from diffusion.conditioning import LayerConditioning, build_layer_conditioning
from diffusion.sampler import sample_image

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecompositionSpec:
    fixed_t: int
    all_steps: bool = True

    def __post_init__(self):
        if not 0 <= self.fixed_t < NUM_TIMESTEPS:
            raise RangeError(f"fixed_t {self.fixed_t} outside [0, {NUM_TIMESTEPS})")


class CountingBuilder:
    """Wraps a conditioning builder and counts how often the sampler asks for it."""

    def __init__(self, build: Callable[[int], LayerConditioning]):
        self.build = build
        self.calls = 0
        self.timesteps = []

    def __call__(self, t: int) -> LayerConditioning:
        self.calls += 1
        self.timesteps.append(t)
        return self.build(t)


def concept_builder(bundle, concept, prompt: str, truncation: Optional[int] = None,
                    alpha: float = 0.2) -> CountingBuilder:
    """Builder that queries the concept at each sampling step's own timestep."""
    tokens = bundle.tokenize(prompt)
    return CountingBuilder(lambda t: build_layer_conditioning(concept, bundle.encoder, t, tokens, truncation, alpha))


def decomposition_builder(bundle, concept, spec: DecompositionSpec, prompt: str,
                          truncation: Optional[int] = None, alpha: float = 0.2) -> CountingBuilder:
    """Builder that ignores the step's timestep and returns the conditioning built once at fixed_t."""
    tokens = bundle.tokenize(prompt)
    fixed = build_layer_conditioning(concept, bundle.encoder, spec.fixed_t, tokens, truncation, alpha)
    return CountingBuilder(lambda t: fixed)


def decompose_timestep(bundle, concept, spec: DecompositionSpec, prompt: str, seed: int,
                       steps: int = 50, guidance: float = 7.5, truncation: Optional[int] = None,
                       alpha: float = 0.2) -> np.ndarray:
    """Sample with the conditioning built once at ``spec.fixed_t`` and reused at every step."""
    builder = decomposition_builder(bundle, concept, spec, prompt, truncation, alpha)
    logger.debug("decomposition at t=%d", spec.fixed_t)
    return sample_image(bundle, builder, steps, guidance, seed)
