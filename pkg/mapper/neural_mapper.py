"""
The neural mapper M(t, l): positional encoding, two FC + LayerNorm + LeakyReLU
layers, nested-dropout truncation, output head(s) and output rescaling.
"""
import copy
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from autodiff.functional import constant, linear, norm_act, select_columns
from autodiff.tensor import Tensor, l2_normalize, matmul, scale, suffix_mask
from config.errors import ConditioningError, RangeError, ZeroNormError
from config.neti_config import DROPOUT_PROB, HEAD_INIT_STD
from config.schema import ModelConfig
from mapper.positional_encoding import (
    PositionalEncoderParams, build_positional_encoder, fourier_features_batch,
)

logger = logging.getLogger(__name__)

LAYER_NAMES = ("fc1", "ln1", "fc2", "ln2", "head_base", "head_pass")


@dataclass
class MapperParams:
    """All state of one mapper. ``weights`` holds the anchor matrix and every layer."""
    pe: PositionalEncoderParams
    weights: Dict[str, Tensor]
    hidden_dim: int
    embed_dim: int
    dropout_prob: float = DROPOUT_PROB
    trainable_anchor: bool = False

    @property
    def bypass(self) -> bool:
        return "head_pass.weight" in self.weights

    @property
    def head_units(self) -> int:
        """Hidden units the heads read; smaller than hidden_dim after pruning."""
        return self.weights["head_base.weight"].shape[0]

    def trainable(self) -> Dict[str, Tensor]:
        return {name: t for name, t in self.weights.items() if t.requires_grad}

    def sections(self) -> Dict[str, np.ndarray]:
        """Named arrays for the weight file, frequencies first."""
        out = {"pe.W": self.pe.freq_matrix}
        out.update({name: t.data for name, t in self.weights.items()})
        return out

    def param_count(self) -> int:
        """Stored parameters, anchor matrix included, frequencies excluded."""
        return int(sum(t.size for t in self.weights.values()))

    def clone(self) -> "MapperParams":
        weights = {}
        for name, t in self.weights.items():
            weights[name] = Tensor(t.data.copy(), requires_grad=t.requires_grad, name=name)
        return MapperParams(copy.deepcopy(self.pe), weights, self.hidden_dim, self.embed_dim,
                            self.dropout_prob, self.trainable_anchor)


@dataclass
class MapperOutput:
    v_base: Tensor
    v_pass: Optional[Tensor] = None
    truncation_used: Optional[int] = None


def _uniform_he(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_mapper(
    model: ModelConfig,
    bypass: bool = False,
    seed: int = 0,
    dropout_prob: float = DROPOUT_PROB,
    trainable_anchor: Optional[bool] = None,
    dtype=np.float32,
) -> MapperParams:
    """He-uniform FC weights, LayerNorm at (1, 0), small Gaussian heads."""
    if trainable_anchor is None:
        trainable_anchor = model.trainable_anchor
    pe = build_positional_encoder(model.num_layers, model.num_frequencies, model.num_time_anchors,
                                  model.sigma_t, model.sigma_l, seed=seed, dtype=dtype)
    rng = np.random.default_rng([seed, 1])
    anchors, hidden, embed = pe.num_anchors, model.hidden_dim, model.embed_dim

    arrays = {
        "fc1.weight": _uniform_he(rng, anchors, hidden),
        "fc1.bias": np.zeros((1, hidden)),
        "ln1.weight": np.ones((1, hidden)),
        "ln1.bias": np.zeros((1, hidden)),
        "fc2.weight": _uniform_he(rng, hidden, hidden),
        "fc2.bias": np.zeros((1, hidden)),
        "ln2.weight": np.ones((1, hidden)),
        "ln2.bias": np.zeros((1, hidden)),
        "head_base.weight": rng.normal(0.0, HEAD_INIT_STD, size=(hidden, embed)),
        "head_base.bias": np.zeros((1, embed)),
    }
    if bypass:
        arrays["head_pass.weight"] = rng.normal(0.0, HEAD_INIT_STD, size=(hidden, embed))
        arrays["head_pass.bias"] = np.zeros((1, embed))

    weights = {"pe.E": Tensor(pe.anchor_matrix, requires_grad=trainable_anchor, dtype=dtype, name="pe.E")}
    for name, array in arrays.items():
        weights[name] = Tensor(array, requires_grad=True, dtype=dtype, name=name)
    return MapperParams(pe, weights, hidden, embed, dropout_prob, trainable_anchor)


def sample_truncation(rng: np.random.Generator, hidden_dim: int, p: float) -> Optional[int]:
    """None with probability 1 - p, otherwise uniform on {1, ..., hidden_dim}."""
    if not 0.0 <= p <= 1.0:
        raise RangeError(f"dropout probability {p} outside [0, 1]")
    if rng.random() < p:
        return int(rng.integers(1, hidden_dim + 1))
    return None


def rescale_output(v, v_super: np.ndarray) -> Tensor:
    """Keep the direction of each row of v, set its norm to ||v_super||."""
    target = float(np.linalg.norm(np.asarray(v_super, dtype=np.float64)))
    if target == 0.0:
        raise ZeroNormError("super-category embedding has zero norm")
    return scale(l2_normalize(v), target)


def mapper_forward_batch(
    ts: Sequence[float],
    layers: Sequence[int],
    params: MapperParams,
    truncation: Optional[int] = None,
    v_super: Optional[np.ndarray] = None,
    rescale: bool = True,
) -> MapperOutput:
    """Run the mapper on several (t, l) queries at once, one output row each.

    v_pass is produced only with the bypass head and is not rescaled here;
    the bypass mix normalizes it against the encoder output.
    """
    units = params.head_units
    if truncation is not None and not 1 <= truncation <= units:
        raise RangeError(f"truncation {truncation} outside [1, {units}]")
    if rescale and v_super is None:
        raise ConditioningError("v_super is required when output rescaling is on")

    w = params.weights
    features = constant(fourier_features_batch(ts, layers, params.pe), w["fc1.weight"])
    encoded = matmul(features, w["pe.E"], transpose_b=True)
    h = norm_act(linear(encoded, w["fc1.weight"], w["fc1.bias"]), w["ln1.weight"], w["ln1.bias"])
    h = norm_act(linear(h, w["fc2.weight"], w["fc2.bias"]), w["ln2.weight"], w["ln2.bias"])
    if truncation is not None:
        h = suffix_mask(h, truncation)
    if units < params.hidden_dim:
        h = select_columns(h, units)

    v_base = linear(h, w["head_base.weight"], w["head_base.bias"])
    if rescale:
        v_base = rescale_output(v_base, v_super)
    v_pass = linear(h, w["head_pass.weight"], w["head_pass.bias"]) if params.bypass else None
    return MapperOutput(v_base, v_pass, truncation)


def mapper_forward(
    t: float,
    layer: int,
    params: MapperParams,
    truncation: Optional[int] = None,
    v_super: Optional[np.ndarray] = None,
    rescale: bool = True,
) -> MapperOutput:
    """Single-query form of mapper_forward_batch; outputs are (1, D) rows."""
    return mapper_forward_batch([t], [layer], params, truncation, v_super, rescale)


def param_count(model: ModelConfig, bypass: bool = False, keep_units: Optional[int] = None) -> int:
    """Closed-form count of stored parameters (anchor matrix included).

    ``keep_units`` gives the count after pruning the heads to the first units.
    """
    a, f, h, d = model.num_anchors, model.num_frequencies, model.hidden_dim, model.embed_dim
    units = h if keep_units is None else keep_units
    if not 1 <= units <= h:
        raise RangeError(f"keep_units {units} outside [1, {h}]")
    count = a * 2 * f + a * h + h + h * h + h + 2 * (2 * h) + units * d + d
    if bypass:
        count += units * d + d
    return count


def prune_mapper(params: MapperParams, keep_units: int) -> MapperParams:
    """Drop head rows past ``keep_units``; matches inference with that truncation."""
    if not 1 <= keep_units <= params.hidden_dim:
        raise RangeError(f"keep_units {keep_units} outside [1, {params.hidden_dim}]")
    pruned = params.clone()
    for head in ("head_base", "head_pass"):
        key = f"{head}.weight"
        if key in pruned.weights:
            old = pruned.weights[key]
            pruned.weights[key] = Tensor(old.data[:keep_units].copy(), requires_grad=old.requires_grad, name=key)
    logger.info("pruned mapper to %d hidden units: %d parameters", keep_units, pruned.param_count())
    return pruned
