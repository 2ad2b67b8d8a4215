"""
Style mixing between two concepts across layers and timesteps.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from analysis.decomposition import CountingBuilder
from config.errors import ConfigError, RangeError
from diffusion.conditioning import LayerConditioning, build_layer_conditioning
from diffusion.sampler import sample_image

logger = logging.getLogger(__name__)


@dataclass
class StyleMixSpec:
    """Geometry concept on every layer until ``mix_start_t``, then only on ``geometry_layers``."""
    geometry_layers: Iterable[int]
    mix_start_t: int
    mapper_geometry: object
    mapper_appearance: object

    def __post_init__(self):
        self.geometry_layers = frozenset(int(l) for l in self.geometry_layers)
        num_layers = self.mapper_geometry.num_layers
        if self.mapper_appearance.num_layers != num_layers:
            raise ConfigError("geometry and appearance concepts were built for different layer counts")
        bad = sorted(l for l in self.geometry_layers if not 0 <= l < num_layers)
        if bad:
            raise RangeError(f"geometry layers {bad} outside [0, {num_layers})")


def mixed_builder(bundle, spec: StyleMixSpec, prompt: str, truncation: Optional[int] = None,
                  alpha: float = 0.2) -> CountingBuilder:
    """Per-step builder gating keys and values together by layer and timestep."""
    tokens = bundle.tokenize(prompt)

    def build(t: int) -> LayerConditioning:
        geometry = build_layer_conditioning(spec.mapper_geometry, bundle.encoder, t, tokens, truncation, alpha)
        if t > spec.mix_start_t:
            return geometry
        appearance = build_layer_conditioning(spec.mapper_appearance, bundle.encoder, t, tokens, truncation, alpha)
        pick = [geometry if l in spec.geometry_layers else appearance for l in range(geometry.num_layers)]
        return LayerConditioning([c.keys[l] for l, c in enumerate(pick)], [c.values[l] for l, c in enumerate(pick)])

    return CountingBuilder(build)


def style_mix(bundle, spec: StyleMixSpec, prompt: str, seed: int, steps: int = 50,
              guidance: float = 7.5, truncation: Optional[int] = None, alpha: float = 0.2) -> np.ndarray:
    if not spec.geometry_layers and spec.mix_start_t >= 999:
        logger.warning("style mix with no geometry layers from t=%d on is a pure appearance sample",
                       spec.mix_start_t)
    return sample_image(bundle, mixed_builder(bundle, spec, prompt, truncation, alpha), steps, guidance, seed)
