"""
Attribute probe: closed-form ridge classifiers over frozen features, one per
attribute (color, shape, background), trained on the procedural corpus.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from config.errors import ProbeMissingError
from config.neti_config import BACKGROUNDS, COLORS, SHAPES
from evaluation.features import FrozenFeatureExtractor
from persistence.corpus import ProceduralCorpus
from persistence.run_files import read_json, write_json_atomic
from persistence.weights import load_weights, save_weights

logger = logging.getLogger(__name__)

ATTRIBUTES: Dict[str, List[str]] = {
    "color": list(COLORS),
    "shape": list(SHAPES),
    "background": list(BACKGROUNDS),
}
RIDGE = 1.0
HOLDOUT_FRACTION = 0.2


@dataclass
class AttributeProbe:
    mean: np.ndarray
    std: np.ndarray
    weights: Dict[str, np.ndarray]
    classes: Dict[str, List[str]]
    metadata: Dict = field(default_factory=dict)

    @property
    def accuracy(self) -> Dict[str, float]:
        """Held-out accuracy per attribute, recorded at training time."""
        return dict(self.metadata.get("accuracy", {}))

    def accuracy_for(self, attributes: Sequence[str]) -> float:
        acc = self.accuracy
        return min((acc[a] for a in attributes), default=1.0)

    def _design(self, features: np.ndarray) -> np.ndarray:
        x = (features - self.mean) / self.std
        return np.concatenate([x, np.ones((len(x), 1))], axis=1)

    def predict(self, features: np.ndarray) -> Dict[str, List[str]]:
        x = self._design(features)
        return {attr: [self.classes[attr][j] for j in np.argmax(x @ w, axis=1)] for attr, w in self.weights.items()}

    def predict_images(self, images, extractor: FrozenFeatureExtractor) -> Dict[str, List[str]]:
        return self.predict(extractor.probe_features(images))

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        sections = {"probe.mean": self.mean[None, :], "probe.std": self.std[None, :]}
        sections.update({f"probe.{a}.weight": w for a, w in self.weights.items()})
        save_weights(path, sections)
        write_json_atomic(path.with_suffix(path.suffix + ".json"), {"classes": self.classes, **self.metadata})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "AttributeProbe":
        path = Path(path)
        if not path.exists():
            raise ProbeMissingError(f"no attribute probe at {path}")
        sections = load_weights(path)
        meta = read_json(path.with_suffix(path.suffix + ".json"))
        classes = meta.pop("classes")
        weights = {a: sections[f"probe.{a}.weight"].astype(np.float64) for a in classes}
        return cls(sections["probe.mean"][0].astype(np.float64), sections["probe.std"][0].astype(np.float64),
                   weights, classes, meta)


def _ridge(x: np.ndarray, y: np.ndarray, ridge: float) -> np.ndarray:
    gram = x.T @ x + ridge * np.eye(x.shape[1])
    return np.linalg.solve(gram, x.T @ y)


def train_probe(corpus: ProceduralCorpus, extractor: FrozenFeatureExtractor, seed: int = 0,
                ridge: float = RIDGE) -> AttributeProbe:
    """Fit on 80% of the corpus, record accuracy on the held-out 20%."""
    features = extractor.probe_features(corpus.images)
    order = np.random.default_rng([seed, 9]).permutation(len(corpus))
    cut = int(round(len(order) * (1.0 - HOLDOUT_FRACTION)))
    train_idx, test_idx = order[:cut], order[cut:]

    mean = features[train_idx].mean(axis=0)
    std = features[train_idx].std(axis=0) + 1e-8
    probe = AttributeProbe(mean, std, {}, ATTRIBUTES, {"seed": seed, "extractor_seed": extractor.seed})
    x_train = probe._design(features[train_idx])
    for attr, classes in ATTRIBUTES.items():
        labels = np.asarray([classes.index(a[attr]) for a in corpus.attributes])
        y = np.eye(len(classes))[labels[train_idx]]
        probe.weights[attr] = _ridge(x_train, y, ridge)

    predicted = probe.predict(features[test_idx])
    accuracy = {}
    for attr in ATTRIBUTES:
        truth = [corpus.attributes[i][attr] for i in test_idx]
        accuracy[attr] = float(np.mean([p == t for p, t in zip(predicted[attr], truth)]))
    probe.metadata["accuracy"] = accuracy
    probe.metadata["holdout_size"] = int(len(test_idx))
    logger.info("attribute probe held-out accuracy: %s", ", ".join(f"{a}={v:.3f}" for a, v in accuracy.items()))
    return probe
