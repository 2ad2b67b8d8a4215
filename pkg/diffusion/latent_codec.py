"""
Fixed latent codec: 2x average pooling to a 16x16x3 latent, bilinear upsampling back.

Latents are (P, 3) matrices with one row per spatial position in row-major order.
"""
from functools import lru_cache

import numpy as np

from config.errors import ShapeError
from config.neti_config import IMAGE_SIZE, LATENT_SIZE


def encode_image(image: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 (32, 32, 3) image -> (256, 3) latent with values in [-1, 1]."""
    image = np.asarray(image)
    if image.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
        raise ShapeError(f"expected a {IMAGE_SIZE}x{IMAGE_SIZE} RGB image, got {image.shape}")
    x = image.astype(np.float64) / 127.5 - 1.0
    f = IMAGE_SIZE // LATENT_SIZE
    pooled = x.reshape(LATENT_SIZE, f, LATENT_SIZE, f, 3).mean(axis=(1, 3))
    return pooled.reshape(LATENT_SIZE * LATENT_SIZE, 3).astype(dtype)


@lru_cache(maxsize=None)
def upsample_matrix(src: int = LATENT_SIZE, dst: int = IMAGE_SIZE) -> np.ndarray:
    """(dst, src) bilinear interpolation weights, half-pixel centers, edges clamped."""
    out = np.zeros((dst, src))
    for i in range(dst):
        x = (i + 0.5) * src / dst - 0.5
        x = min(max(x, 0.0), src - 1.0)
        lo = int(np.floor(x))
        hi = min(lo + 1, src - 1)
        w = x - lo
        out[i, lo] += 1.0 - w
        out[i, hi] += w
    return out


def decode_latent(latent: np.ndarray) -> np.ndarray:
    """(256, 3) latent -> uint8 (32, 32, 3) image."""
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape != (LATENT_SIZE * LATENT_SIZE, 3):
        raise ShapeError(f"expected a ({LATENT_SIZE * LATENT_SIZE}, 3) latent, got {latent.shape}")
    grid = latent.reshape(LATENT_SIZE, LATENT_SIZE, 3)
    up = upsample_matrix()
    x = np.einsum("ij,jkc,lk->ilc", up, grid, up)
    return np.clip(np.rint((x + 1.0) * 127.5), 0, 255).astype(np.uint8)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio of two uint8 images, in dB."""
    err = np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2)
    if err == 0:
        return float("inf")
    return float(10.0 * np.log10(255.0 ** 2 / err))
