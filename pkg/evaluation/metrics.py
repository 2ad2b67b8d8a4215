"""
Image and embedding metrics: feature-space similarity, probe-based prompt
adherence and norm statistics.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

import numpy as np

from config.errors import EmptySetError, ProbeMissingError, ZeroNormError
from evaluation.features import FrozenFeatureExtractor
from evaluation.probe import ATTRIBUTES, AttributeProbe
from persistence.run_files import read_csv, write_csv_atomic

METRIC_FIELDS = ["run_id", "metric", "value"]


def image_similarity(gen_images, ref_images, extractor: FrozenFeatureExtractor) -> float:
    """Symmetric best-match cosine between two image sets.

    Every generated image is scored by its closest reference and every
    reference by its closest generated image; the two means are averaged.
    A set compared with itself scores 1.
    """
    if len(gen_images) == 0 or len(ref_images) == 0:
        raise EmptySetError("image_similarity needs two nonempty image sets")
    a = extractor.features(gen_images)
    b = extractor.features(ref_images)
    cos = a @ b.T
    score = 0.5 * (cos.max(axis=1).mean() + cos.max(axis=0).mean())
    return float(np.clip(score, -1.0, 1.0))


def prompt_adherence(gen_images, prompt_attrs: Mapping[str, str],
                     probe: Optional[AttributeProbe], extractor: FrozenFeatureExtractor) -> float:
    """Fraction of images whose probed attributes all match ``prompt_attrs``."""
    if probe is None:
        raise ProbeMissingError("prompt adherence needs a trained attribute probe")
    if not prompt_attrs:
        return 1.0
    if len(gen_images) == 0:
        raise EmptySetError("prompt adherence needs at least one image")
    predicted = probe.predict_images(gen_images, extractor)
    hits = [all(predicted[attr][i] == value for attr, value in prompt_attrs.items())
            for i in range(len(gen_images))]
    return float(np.mean(hits))


@dataclass
class NormStats:
    median: float
    min: float
    max: float
    counts: np.ndarray
    bin_edges: np.ndarray

    @property
    def ratio(self) -> float:
        return self.max / self.min


def norm_stats(vectors) -> NormStats:
    """Norm summary of a set of row vectors; histogram bins are median / 10 wide."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim == 1:
        vectors = vectors[None]
    if vectors.size == 0:
        raise EmptySetError("norm_stats needs at least one vector")
    norms = np.linalg.norm(vectors, axis=1)
    median = float(np.median(norms))
    if median == 0.0:
        raise ZeroNormError("median norm is zero")
    width = median / 10.0
    lo, hi = float(norms.min()), float(norms.max())
    n_bins = max(1, int(np.ceil((hi - lo) / width)))
    edges = lo + width * np.arange(n_bins + 1)
    edges[-1] = max(edges[-1], hi)
    counts, _ = np.histogram(norms, bins=edges)
    return NormStats(median, float(norms.min()), float(norms.max()), counts, edges)


def mapper_output_norms(concept, num_samples: int, seed: int) -> np.ndarray:
    """v_base for random (t, l) queries, one row per query."""
    rng = np.random.default_rng([seed, 10])
    rows = []
    for _ in range(num_samples):
        t = float(rng.integers(0, 1000))
        layer = int(rng.integers(0, concept.num_layers))
        rows.append(concept.query(t, [layer]).v_base.data[0])
    return np.stack(rows)


def write_metrics(path: Union[str, Path], run_id: str, metrics: Mapping[str, float]) -> None:
    """Merge (run_id, metric, value) rows into a metrics CSV; existing keys are replaced."""
    path = Path(path)
    rows: List[Dict] = read_csv(path) if path.exists() else []
    rows = [r for r in rows if not (r["run_id"] == run_id and r["metric"] in metrics)]
    rows += [{"run_id": run_id, "metric": name, "value": float(value)} for name, value in metrics.items()]
    write_csv_atomic(path, METRIC_FIELDS, rows)


def prompt_attributes(prompt: str) -> Dict[str, str]:
    """Attributes the probe can check that a prompt names explicitly (word before 'background' for the background)."""
    words = prompt.split()
    attrs: Dict[str, str] = {}
    for i, word in enumerate(words):
        if word == "background" and i > 0 and words[i - 1] in ATTRIBUTES["background"]:
            attrs["background"] = words[i - 1]
        elif word in ATTRIBUTES["color"]:
            attrs["color"] = word
        elif word in ATTRIBUTES["shape"]:
            attrs["shape"] = word
    return attrs
