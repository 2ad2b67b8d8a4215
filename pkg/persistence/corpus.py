"""
Procedural corpus: colored shapes on flat backgrounds, drawn with pygame at
twice the target size and box-filtered down to 32x32.

Image i of a corpus covers grammar combination i % 64 and draws its jitter
from its own generator seeded with (seed, i), so images can be rendered in
any order.
"""
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple, Union

os.environ.setdefault("PYGAME_HIDE_SUPPORT_PROMPT", "1")

import numpy as np
import pygame
from tqdm import tqdm

from config.errors import ConfigError
from config.logging_config import progress_enabled
from config.neti_config import (
    BACKGROUNDS, CAPTION_TEMPLATE, COLORS, CONCEPT_TEMPLATE, HELD_OUT_CONCEPT,
    IMAGE_SIZE, SHAPES, SUPERSAMPLE,
)
from persistence.images import read_ppm, write_ppm
from persistence.run_files import read_csv, write_csv_atomic

logger = logging.getLogger(__name__)

Color = Tuple[int, int, int]
NUM_COMBINATIONS = len(COLORS) * len(SHAPES) * len(BACKGROUNDS)
CANVAS = IMAGE_SIZE * SUPERSAMPLE


@dataclass
class ProceduralCorpus:
    """Rendered images with their captions and attribute labels."""
    images: np.ndarray  # (n, 32, 32, 3) uint8
    captions: List[str]
    attributes: List[Dict[str, str]]
    seed: int
    held_out: Dict = field(default_factory=lambda: dict(HELD_OUT_CONCEPT))

    def __len__(self) -> int:
        return len(self.captions)


@dataclass
class ConceptImages:
    """Images of the held-out concept and the per-image placeholder captions."""
    images: np.ndarray
    captions: List[str]
    backgrounds: List[str]


def combination(index: int) -> Dict[str, str]:
    """Attributes of grammar combination ``index % 64`` (color-major order)."""
    c = index % NUM_COMBINATIONS
    n_shapes, n_bgs = len(SHAPES), len(BACKGROUNDS)
    return {
        "color": list(COLORS)[c // (n_shapes * n_bgs)],
        "shape": SHAPES[(c // n_bgs) % n_shapes],
        "background": list(BACKGROUNDS)[c % n_bgs],
    }


def caption_for(attrs: Dict[str, str]) -> str:
    return CAPTION_TEMPLATE.format(**attrs)


# ---------------------------------------------------------------------------
# Drawing
# ---------------------------------------------------------------------------

def _draw_circle(surface, color, center, radius):
    pygame.draw.circle(surface, color, center, radius)


def _draw_square(surface, color, center, radius):
    side = int(round(radius * 1.6))
    rect = pygame.Rect(0, 0, side, side)
    rect.center = center
    pygame.draw.rect(surface, color, rect)


def _draw_triangle(surface, color, center, radius):
    cx, cy = center
    points = [
        (cx + radius * math.cos(math.radians(a)), cy - radius * math.sin(math.radians(a)))
        for a in (90, 210, 330)
    ]
    pygame.draw.polygon(surface, color, points)


def _draw_cross(surface, color, center, radius):
    arm = int(round(radius * 1.8))
    width = max(2, int(round(radius * 0.6)))
    for w, h in ((arm, width), (width, arm)):
        rect = pygame.Rect(0, 0, w, h)
        rect.center = center
        pygame.draw.rect(surface, color, rect)


def _star_points(center, radius) -> List[Tuple[float, float]]:
    cx, cy = center
    points = []
    for k in range(10):
        r = radius if k % 2 == 0 else radius * 0.45
        angle = math.radians(90 + 36 * k)
        points.append((cx + r * math.cos(angle), cy - r * math.sin(angle)))
    return points


def _draw_star(surface, color, center, radius):
    pygame.draw.polygon(surface, color, _star_points(center, radius))


SHAPE_DRAWERS: Dict[str, Callable] = {
    "circle": _draw_circle,
    "square": _draw_square,
    "triangle": _draw_triangle,
    "cross": _draw_cross,
    "star": _draw_star,
}


def _surface_pixels(surface: "pygame.Surface") -> np.ndarray:
    # surfarray is (x, y, c); images are row-major (y, x, c)
    return pygame.surfarray.array3d(surface).transpose(1, 0, 2).copy()


def downsample(canvas: np.ndarray, factor: int = SUPERSAMPLE) -> np.ndarray:
    """Box-filter an (H, W, 3) uint8 canvas by an integer factor."""
    h, w, c = canvas.shape
    blocks = canvas.reshape(h // factor, factor, w // factor, factor, c).astype(np.float64)
    return np.rint(blocks.mean(axis=(1, 3))).astype(np.uint8)


def _placement(rng: np.random.Generator) -> Tuple[Tuple[int, int], float]:
    jitter = CANVAS // 16
    cx = CANVAS // 2 + int(rng.integers(-jitter, jitter + 1))
    cy = CANVAS // 2 + int(rng.integers(-jitter, jitter + 1))
    radius = float(rng.uniform(0.26, 0.34)) * CANVAS
    return (cx, cy), radius


def render_shape(shape: str, color: Color, background: Color, rng: np.random.Generator) -> np.ndarray:
    """One 32x32 image of a flat-colored shape."""
    if shape not in SHAPE_DRAWERS:
        raise ConfigError(f"unknown shape {shape!r}")
    surface = pygame.Surface((CANVAS, CANVAS))
    surface.fill(background)
    center, radius = _placement(rng)
    SHAPE_DRAWERS[shape](surface, color, center, radius)
    return downsample(_surface_pixels(surface))


def render_striped(shape: str, stripe_colors: Sequence[Color], background: Color,
                   rng: np.random.Generator, stripe_width: int = 6) -> np.ndarray:
    """A shape filled with diagonal stripes alternating between ``stripe_colors``."""
    mask_surface = pygame.Surface((CANVAS, CANVAS))
    mask_surface.fill((0, 0, 0))
    center, radius = _placement(rng)
    SHAPE_DRAWERS[shape](mask_surface, (255, 255, 255), center, radius)
    mask = _surface_pixels(mask_surface)[..., 0] > 127

    ys, xs = np.mgrid[0:CANVAS, 0:CANVAS]
    band = ((xs + ys) // stripe_width) % len(stripe_colors)
    palette = np.asarray(stripe_colors, dtype=np.uint8)
    canvas = np.empty((CANVAS, CANVAS, 3), dtype=np.uint8)
    canvas[:] = np.asarray(background, dtype=np.uint8)
    canvas[mask] = palette[band[mask]]
    return downsample(canvas)


# ---------------------------------------------------------------------------
# Corpus and concept sets
# ---------------------------------------------------------------------------

def render_corpus_image(seed: int, index: int) -> Tuple[np.ndarray, Dict[str, str]]:
    attrs = combination(index)
    rng = np.random.default_rng([seed, index])
    image = render_shape(attrs["shape"], COLORS[attrs["color"]], BACKGROUNDS[attrs["background"]], rng)
    return image, attrs


def generate_corpus(seed: int, count: int) -> ProceduralCorpus:
    """Render ``count`` captioned images; every grammar combination appears when count >= 64."""
    if count < NUM_COMBINATIONS:
        raise ConfigError(f"corpus needs at least {NUM_COMBINATIONS} images, got {count}")
    images = np.empty((count, IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.uint8)
    captions, attributes = [], []
    for i in tqdm(range(count), desc="render corpus", disable=not progress_enabled()):
        images[i], attrs = render_corpus_image(seed, i)
        attributes.append(attrs)
        captions.append(caption_for(attrs))
    logger.info("rendered %d corpus images (seed %d)", count, seed)
    return ProceduralCorpus(images, captions, attributes, seed)


def generate_concept(seed: int, count: int = HELD_OUT_CONCEPT["num_images"]) -> ConceptImages:
    """The held-out striped star, one background per image (cycling through the palette)."""
    if not 1 <= count <= 6:
        raise ConfigError(f"a concept set holds 1 to 6 images, got {count}")
    names = list(BACKGROUNDS)
    images, captions, backgrounds = [], [], []
    for i in range(count):
        bg = names[i % len(names)]
        rng = np.random.default_rng([seed, 10_000 + i])
        images.append(render_striped(HELD_OUT_CONCEPT["shape"], HELD_OUT_CONCEPT["stripe_colors"],
                                     BACKGROUNDS[bg], rng))
        captions.append(CONCEPT_TEMPLATE.format(background=bg))
        backgrounds.append(bg)
    return ConceptImages(np.stack(images), captions, backgrounds)


INDEX_FIELDS = ["index", "file", "caption", "color", "shape", "background"]


def save_corpus(directory: Union[str, Path], corpus: ProceduralCorpus) -> None:
    """One PPM per image plus ``captions.csv``."""
    directory = Path(directory)
    rows = []
    for i, (image, caption, attrs) in enumerate(zip(corpus.images, corpus.captions, corpus.attributes)):
        name = f"img_{i:05d}.ppm"
        write_ppm(directory / name, image)
        rows.append({"index": i, "file": name, "caption": caption, **attrs})
    write_csv_atomic(directory / "captions.csv", INDEX_FIELDS, rows)


def load_corpus(directory: Union[str, Path], seed: int = -1) -> ProceduralCorpus:
    directory = Path(directory)
    rows = read_csv(directory / "captions.csv")
    images = np.stack([read_ppm(directory / row["file"]) for row in rows])
    attributes = [{k: row[k] for k in ("color", "shape", "background")} for row in rows]
    return ProceduralCorpus(images, [row["caption"] for row in rows], attributes, seed)


CONCEPT_FIELDS = ["index", "file", "caption", "background"]


def save_concept_images(directory: Union[str, Path], concept: ConceptImages) -> None:
    directory = Path(directory)
    rows = []
    for i, (image, caption, bg) in enumerate(zip(concept.images, concept.captions, concept.backgrounds)):
        name = f"concept_{i:02d}.ppm"
        write_ppm(directory / name, image)
        rows.append({"index": i, "file": name, "caption": caption, "background": bg})
    write_csv_atomic(directory / "concept.csv", CONCEPT_FIELDS, rows)


def load_concept_images(directory: Union[str, Path]) -> ConceptImages:
    directory = Path(directory)
    rows = read_csv(directory / "concept.csv")
    images = np.stack([read_ppm(directory / row["file"]) for row in rows])
    return ConceptImages(images, [row["caption"] for row in rows], [row["background"] for row in rows])
