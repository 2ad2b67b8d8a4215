"""
Configuration module containing all constants and the two size presets.
"""
from typing import Dict, List, Tuple

# Noise schedule
NUM_TIMESTEPS = 1000
BETA_START = 1e-4
BETA_END = 0.02

# Autodiff kernels
LEAKY_RELU_SLOPE = 0.01
LAYER_NORM_EPS = 1e-5
ATTENTION_MASK_VALUE = -1e9  # additive causal mask, exp() underflows to exactly 0

# Optimizer
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Positional encoding
SIGMA_T = 0.03
SIGMA_L = 2.0
NUM_TIME_ANCHORS = 10
TIME_ANCHOR_STRIDE = 100  # anchors at t = 0, 100, ..., 900

# Mapper
DROPOUT_PROB = 0.5
HEAD_INIT_STD = 0.02

# Textual bypass
BYPASS_ALPHA = 0.2

# Sampling
GUIDANCE_SCALE = 7.5
SAMPLING_STEPS = 50
TIMESTEP_OFFSET = 1  # leading spacing: 981, 961, ..., 1 for 50 steps

# Inversion
BATCH_SIZE = 2
GRAD_ACCUM = 4
BASE_LR = 0.001
INVERSION_STEPS = 500
BYPASS_INVERSION_STEPS = 1000
SMOOTHING_WINDOW = 50

# Pretraining
PRETRAIN_STEPS = 20000
PRETRAIN_BATCH_SIZE = 4
PRETRAIN_LR = 1e-3
CAPTION_DROPOUT = 0.1
CORPUS_SIZE = 512

# Images and latents
IMAGE_SIZE = 32
LATENT_SIZE = 16
IMAGE_CHANNELS = 3
SUPERSAMPLE = 2  # shapes are drawn at 2x and box-filtered down

# Feature extractor used by the metrics
FEATURE_DIM = 64
FEATURE_SEED = 1234

# Special tokens
PAD_TOKEN = "<pad>"
PLACEHOLDER_TOKEN = "S*"
SUPER_CATEGORY = "shape"

# Caption grammar: "a photo of a <color> <shape> on a <bg> background"
COLORS: Dict[str, Tuple[int, int, int]] = {
    "red": (216, 52, 52),
    "green": (52, 168, 72),
    "blue": (56, 88, 208),
    "yellow": (224, 200, 48),
}
SHAPES: List[str] = ["circle", "square", "triangle", "cross"]
BACKGROUNDS: Dict[str, Tuple[int, int, int]] = {
    "white": (235, 235, 235),
    "black": (30, 30, 30),
    "gray": (140, 140, 140),
    "pink": (232, 170, 190),
}
FUNCTION_WORDS: List[str] = ["a", "photo", "picture", "of", "on", "background", "shape", "object"]

CAPTION_TEMPLATE = "a photo of a {color} {shape} on a {background} background"
CONCEPT_TEMPLATE = "a photo of S* on a {background} background"

# Held-out concept: a striped star in two colors that never appear in the corpus
HELD_OUT_CONCEPT = {
    "shape": "star",
    "stripe_colors": [(236, 128, 24), (128, 48, 160)],
    "num_images": 4,
}

# Toy generator layout: which attention layers carry the "geometry" concept in style mixing
TOY_GEOMETRY_LAYERS: List[int] = [0, 3]

TOY_PRESET: Dict[str, Dict] = {
    "model": {
        "num_layers": 4,
        "context_length": 12,
        "embed_dim": 64,
        "num_frequencies": 256,
        "num_time_anchors": NUM_TIME_ANCHORS,
        "hidden_dim": 128,
        "channels": 32,
        "attn_dim": 32,
        "text_layers": 2,
        "text_ffn_dim": 128,
        "sigma_t": SIGMA_T,
        "sigma_l": SIGMA_L,
    },
    "train": {"alpha": BYPASS_ALPHA, "steps": INVERSION_STEPS},
    "sample": {"guidance": GUIDANCE_SCALE, "steps": SAMPLING_STEPS},
    "analysis": {"geometry_layers": TOY_GEOMETRY_LAYERS},
}

PAPER_PRESET: Dict[str, Dict] = {
    "model": {
        "num_layers": 16,
        "context_length": 77,
        "embed_dim": 768,
        "num_frequencies": 1024,
        "num_time_anchors": NUM_TIME_ANCHORS,
        "hidden_dim": 128,
        "channels": 32,
        "attn_dim": 32,
        "text_layers": 2,
        "text_ffn_dim": 1536,
        "sigma_t": SIGMA_T,
        "sigma_l": SIGMA_L,
    },
    "train": {"alpha": BYPASS_ALPHA, "steps": INVERSION_STEPS},
    "sample": {"guidance": GUIDANCE_SCALE, "steps": SAMPLING_STEPS},
    "analysis": {"geometry_layers": [0, 1, 2]},
}

PRESETS = {"toy": TOY_PRESET, "paper": PAPER_PRESET}
