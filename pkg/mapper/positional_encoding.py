"""
Random Fourier features of (t, l) and the anchor-matrix encoding e = E f(t, l).
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from config.errors import RangeError, ShapeError
from config.neti_config import NUM_TIMESTEPS, SIGMA_L, SIGMA_T, TIME_ANCHOR_STRIDE


@dataclass
class PositionalEncoderParams:
    """Frequencies W (F x 2), the anchor grid and the anchor matrix E (A x 2F)."""
    freq_matrix: np.ndarray
    sigma_t: float
    sigma_l: float
    anchor_grid: List[Tuple[int, int]]
    anchor_matrix: np.ndarray
    num_layers: int
    seed: int

    @property
    def num_frequencies(self) -> int:
        return self.freq_matrix.shape[0]

    @property
    def num_anchors(self) -> int:
        return len(self.anchor_grid)


def build_anchor_grid(num_layers: int, num_time_anchors: int) -> List[Tuple[int, int]]:
    """Time-major grid: (0, 0), (0, 1), ..., (0, L-1), (100, 0), ..."""
    return [(ti * TIME_ANCHOR_STRIDE, layer)
            for ti in range(num_time_anchors) for layer in range(num_layers)]


def _features(points: np.ndarray, freq_matrix: np.ndarray) -> np.ndarray:
    # elementwise rather than BLAS so a single query and a batch round identically
    proj = points[:, :1] * freq_matrix[:, 0] + points[:, 1:2] * freq_matrix[:, 1]
    return np.concatenate([np.cos(proj), np.sin(proj)], axis=-1)


def build_positional_encoder(
    num_layers: int,
    num_frequencies: int,
    num_time_anchors: int,
    sigma_t: float = SIGMA_T,
    sigma_l: float = SIGMA_L,
    seed: int = 0,
    dtype=np.float64,
) -> PositionalEncoderParams:
    """Draw W columnwise from N(0, sigma_t^2) and N(0, sigma_l^2), then fill E."""
    rng = np.random.default_rng(seed)
    freq_matrix = np.stack([
        rng.normal(0.0, sigma_t, size=num_frequencies),
        rng.normal(0.0, sigma_l, size=num_frequencies),
    ], axis=1).astype(dtype)
    grid = build_anchor_grid(num_layers, num_time_anchors)
    anchors = np.asarray(grid, dtype=dtype)
    anchor_matrix = _features(anchors, freq_matrix).astype(dtype)
    return PositionalEncoderParams(freq_matrix, sigma_t, sigma_l, grid, anchor_matrix, num_layers, seed)


def _check_query(t: float, layer: int, pe: PositionalEncoderParams) -> None:
    if not 0 <= t < NUM_TIMESTEPS:
        raise RangeError(f"timestep {t} outside [0, {NUM_TIMESTEPS})")
    if not 0 <= layer < pe.num_layers:
        raise RangeError(f"layer {layer} outside [0, {pe.num_layers})")


def fourier_features(t: float, layer: int, pe: PositionalEncoderParams) -> np.ndarray:
    """[cos(W x); sin(W x)] for x = (t, l), on raw unnormalized inputs."""
    _check_query(t, layer, pe)
    point = np.asarray([[t, layer]], dtype=pe.freq_matrix.dtype)
    return _features(point, pe.freq_matrix)[0]


def fourier_features_batch(ts: Sequence[float], layers: Sequence[int], pe: PositionalEncoderParams) -> np.ndarray:
    """Stacked features, one row per (t, l) query."""
    if len(ts) != len(layers):
        raise ShapeError(f"{len(ts)} timesteps for {len(layers)} layers")
    for t, layer in zip(ts, layers):
        _check_query(t, layer, pe)
    points = np.stack([np.asarray(ts, dtype=float), np.asarray(layers, dtype=float)], axis=1)
    return _features(points.astype(pe.freq_matrix.dtype), pe.freq_matrix)


def encode_position(t: float, layer: int, pe: PositionalEncoderParams) -> np.ndarray:
    """e = E f(t, l): one entry per anchor."""
    f = fourier_features(t, layer, pe)
    if pe.anchor_matrix.shape[1] != f.shape[0]:
        raise ShapeError(f"anchor matrix width {pe.anchor_matrix.shape[1]} != feature size {f.shape[0]}")
    return pe.anchor_matrix @ f
