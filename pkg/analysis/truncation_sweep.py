"""
Inference-time truncation sweep over the mapper's ordered hidden units.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from analysis.decomposition import concept_builder
from config.errors import RangeError
from diffusion.sampler import sample_image
from evaluation.metrics import image_similarity

logger = logging.getLogger(__name__)


@dataclass
class SweepResult:
    ks: List[int]
    images: List[np.ndarray]
    scores: List[Optional[float]] = field(default_factory=list)

    def rows(self) -> List[Dict]:
        return [{"k": k, "score": s} for k, s in zip(self.ks, self.scores)]


def truncation_sweep(bundle, concept, prompt: str, ks: Sequence[int], seed: int,
                     steps: int = 50, guidance: float = 7.5, alpha: float = 0.2,
                     reference_images: Optional[np.ndarray] = None, extractor=None,
                     samples_per_k: int = 1) -> SweepResult:
    """Samples with the truncation fixed to k at every mapper query, for each k.

    ``images[i]`` is the first sample for ``ks[i]`` (seed ``seed``). With
    reference images and a feature extractor each k is scored by
    image_similarity of its samples (seeds seed, seed + 1, ...) to the references.
    """
    units = concept.hidden_dim
    if units is None:
        raise RangeError("truncation sweep needs a neural mapper")
    for k in ks:
        if not 1 <= k <= units:
            raise RangeError(f"k={k} outside [1, {units}]")
    scoring = reference_images is not None and extractor is not None

    images, scores = [], []
    for k in ks:
        builder = concept_builder(bundle, concept, prompt, truncation=k, alpha=alpha)
        count = samples_per_k if scoring else 1
        samples = [sample_image(bundle, builder, steps, guidance, seed + j) for j in range(count)]
        images.append(samples[0])
        if scoring:
            score = image_similarity(samples, reference_images, extractor)
            logger.info("truncation k=%d: similarity %.4f", k, score)
            scores.append(score)
        else:
            scores.append(None)
    return SweepResult(list(ks), images, scores)
