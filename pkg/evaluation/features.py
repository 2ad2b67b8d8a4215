"""
Frozen random convolutional features used as a stand-in image embedding.
"""
from typing import Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from config.errors import EmptySetError, ShapeError
from config.neti_config import FEATURE_DIM, FEATURE_SEED, IMAGE_SIZE

WIDTHS = (16, 32, FEATURE_DIM)


def _as_batch(images) -> np.ndarray:
    batch = np.asarray(images)
    if batch.ndim == 3:
        batch = batch[None]
    if batch.ndim != 4 or batch.shape[-1] != 3:
        raise ShapeError(f"expected (n, H, W, 3) images, got {batch.shape}")
    if len(batch) == 0:
        raise EmptySetError("no images")
    return batch.astype(np.float64) / 127.5 - 1.0


def _conv(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    windows = sliding_window_view(padded, (3, 3), axis=(1, 2))  # (n, H, W, C, 3, 3)
    return np.tanh(np.einsum("nhwcij,ijco->nhwo", windows, weight) + bias)


def _pool(x: np.ndarray, factor: int) -> np.ndarray:
    n, h, w, c = x.shape
    return x.reshape(n, h // factor, factor, w // factor, factor, c).mean(axis=(2, 4))


class FrozenFeatureExtractor:
    """Three seeded 3x3 conv layers with tanh, pooling between them, then a global average."""

    def __init__(self, seed: int = FEATURE_SEED):
        self.seed = seed
        rng = np.random.default_rng([seed, 8])
        self.layers = []
        fan_in = 3
        for width in WIDTHS:
            weight = rng.normal(0.0, 1.0 / np.sqrt(9 * fan_in), size=(3, 3, fan_in, width))
            bias = rng.normal(0.0, 0.1, size=width)
            self.layers.append((weight, bias))
            fan_in = width

    def _maps(self, images) -> Tuple[np.ndarray, np.ndarray]:
        x = _as_batch(images)
        if x.shape[1:3] != (IMAGE_SIZE, IMAGE_SIZE):
            raise ShapeError(f"expected {IMAGE_SIZE}x{IMAGE_SIZE} images, got {x.shape[1:3]}")
        (w1, b1), (w2, b2), (w3, b3) = self.layers
        h = _pool(_conv(x, w1, b1), 2)
        mid = _pool(_conv(h, w2, b2), 2)
        return mid, _conv(mid, w3, b3)

    def features(self, images) -> np.ndarray:
        """(n, 64) unit-norm feature rows."""
        _, top = self._maps(images)
        f = top.mean(axis=(1, 2))
        return f / np.linalg.norm(f, axis=1, keepdims=True)

    def probe_features(self, images) -> np.ndarray:
        """Spatially pooled middle maps (4x4 grid) next to the global features, for the attribute probe."""
        mid, top = self._maps(images)
        grid = _pool(mid, mid.shape[1] // 4).reshape(len(mid), -1)
        return np.concatenate([grid, top.mean(axis=(1, 2))], axis=1)


def extract(images: Sequence[np.ndarray], extractor: FrozenFeatureExtractor) -> np.ndarray:
    return extractor.features(images)
