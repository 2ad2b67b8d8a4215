"""
Binary PPM (P6) images and image grids. Images are (H, W, 3) uint8 arrays.
"""
import re
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from config.errors import EmptySetError, ShapeError
from persistence.run_files import atomic_write_bytes

_HEADER = re.compile(rb"\AP6\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) image, got {image.shape}")
    if image.dtype != np.uint8:
        raise ShapeError(f"expected uint8 pixels, got {image.dtype}")
    return image


def encode_ppm(image: np.ndarray) -> bytes:
    image = _check_image(image)
    height, width, _ = image.shape
    return f"P6\n{width} {height}\n255\n".encode("ascii") + np.ascontiguousarray(image).tobytes()


def write_ppm(path: Union[str, Path], image: np.ndarray) -> None:
    atomic_write_bytes(path, encode_ppm(image))


def decode_ppm(payload: bytes) -> np.ndarray:
    match = _HEADER.match(payload)
    if match is None:
        raise ShapeError("not a binary PPM (P6) image")
    width, height, maxval = (int(v) for v in match.groups())
    if maxval != 255:
        raise ShapeError(f"only 8-bit PPM is supported, maxval={maxval}")
    body = payload[match.end():]
    expected = width * height * 3
    if len(body) < expected:
        raise ShapeError(f"PPM body has {len(body)} bytes, expected {expected}")
    return np.frombuffer(body[:expected], dtype=np.uint8).reshape(height, width, 3).copy()


def read_ppm(path: Union[str, Path]) -> np.ndarray:
    with open(path, "rb") as handle:
        return decode_ppm(handle.read())


def image_grid(images: Sequence[np.ndarray], pad: int = 2, fill: int = 255) -> np.ndarray:
    """Lay images out left to right with ``pad`` pixels of ``fill`` between them."""
    if len(images) == 0:
        raise EmptySetError("image grid needs at least one image")
    images = [_check_image(im) for im in images]
    height, width, _ = images[0].shape
    if any(im.shape != images[0].shape for im in images):
        raise ShapeError("grid images must share one size")
    count = len(images)
    grid = np.full((height, count * width + (count - 1) * pad, 3), fill, dtype=np.uint8)
    for i, im in enumerate(images):
        x = i * (width + pad)
        grid[:, x:x + width] = im
    return grid


def mean_pixel_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference of two same-size images, in 0..255 units."""
    a, b = _check_image(a), _check_image(b)
    if a.shape != b.shape:
        raise ShapeError(f"image sizes differ: {a.shape} vs {b.shape}")
    return float(np.abs(a.astype(np.int16) - b.astype(np.int16)).mean())
