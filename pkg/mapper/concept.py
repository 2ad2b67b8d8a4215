"""
Concept representations queried per (t, l): the neural mapper with its input
ablations, and the single-vector textual-inversion baseline.
"""
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from autodiff.functional import constant
from autodiff.tensor import Tensor, matmul
from config.errors import ConfigError, RangeError
from config.schema import ModelConfig, TrainConfig
from mapper.neural_mapper import MapperOutput, MapperParams, init_mapper, mapper_forward_batch
from mapper.positional_encoding import PositionalEncoderParams, build_anchor_grid
from persistence.run_files import read_json, write_json_atomic
from persistence.weights import load_weights, save_weights

FIXED_TIMESTEP = 500

MAPPER_MODES = ("neti", "neti_bypass", "ablate_no_time", "ablate_no_space", "ablate_neither")


MAPPER_SECTIONS = (
    "pe.W", "pe.E", "fc1.weight", "fc1.bias", "ln1.weight", "ln1.bias",
    "fc2.weight", "fc2.bias", "ln2.weight", "ln2.bias", "head_base.weight", "head_base.bias",
)
BYPASS_SECTIONS = ("head_pass.weight", "head_pass.bias")


def expected_sections(mode: str) -> Tuple[str, ...]:
    """Section names a concept file of this mode holds."""
    if mode == "ti_baseline":
        return ("ti.vector",)
    if mode not in MAPPER_MODES:
        raise ConfigError(f"unknown concept mode {mode!r}")
    return MAPPER_SECTIONS + (BYPASS_SECTIONS if mode == "neti_bypass" else ())


class MapperConcept:
    """Concept held by a neural mapper.

    The ablation modes keep the architecture and feed a fixed input instead:
    t = 500 without time conditioning, l = L // 2 without space conditioning.
    """

    def __init__(self, params: MapperParams, mode: str, v_super: np.ndarray, rescale: bool = True):
        if mode not in MAPPER_MODES:
            raise ConfigError(f"mode {mode!r} is not a mapper mode")
        self.params = params
        self.mode = mode
        self.v_super = np.asarray(v_super)
        self.rescale = rescale

    @property
    def num_layers(self) -> int:
        return self.params.pe.num_layers

    @property
    def hidden_dim(self) -> Optional[int]:
        return self.params.head_units

    @property
    def bypass(self) -> bool:
        return self.params.bypass

    @property
    def uses_time(self) -> bool:
        return self.mode not in ("ablate_no_time", "ablate_neither")

    @property
    def uses_space(self) -> bool:
        return self.mode not in ("ablate_no_space", "ablate_neither")

    def mapper_inputs(self, t: float, layers: Sequence[int]):
        ts = [t if self.uses_time else FIXED_TIMESTEP] * len(layers)
        ls = list(layers) if self.uses_space else [self.num_layers // 2] * len(layers)
        return ts, ls

    def query(self, t: float, layers: Sequence[int], truncation: Optional[int] = None) -> MapperOutput:
        """One output row per requested layer at timestep t."""
        for layer in layers:
            if not 0 <= layer < self.num_layers:
                raise RangeError(f"layer {layer} outside [0, {self.num_layers})")
        ts, ls = self.mapper_inputs(t, layers)
        return mapper_forward_batch(ts, ls, self.params, truncation, self.v_super, self.rescale)

    def trainable(self) -> Dict[str, Tensor]:
        return self.params.trainable()

    def sections(self) -> Dict[str, np.ndarray]:
        return self.params.sections()


class VectorConcept:
    """Textual inversion: one embedding v* shared by every timestep and layer."""

    mode = "ti_baseline"
    bypass = False
    hidden_dim = None

    def __init__(self, vector: Tensor, num_layers: int):
        self.vector = vector
        self.num_layers = num_layers

    def query(self, t: float, layers: Sequence[int], truncation: Optional[int] = None) -> MapperOutput:
        if truncation is not None:
            raise RangeError("truncation needs a neural mapper")
        tile = constant(np.ones((len(layers), 1)), self.vector)
        return MapperOutput(matmul(tile, self.vector))

    def trainable(self) -> Dict[str, Tensor]:
        return {"ti.vector": self.vector}

    def sections(self) -> Dict[str, np.ndarray]:
        return {"ti.vector": self.vector.data}


Concept = Union[MapperConcept, VectorConcept]


def init_concept(model: ModelConfig, train: TrainConfig, v_super: np.ndarray, seed: int,
                 dtype=np.float32) -> Concept:
    """Fresh concept for the configured mode.

    The baseline vector starts at the super-category embedding; mappers start
    from init_mapper with the bypass head only in neti_bypass mode.
    """
    if train.mode == "ti_baseline":
        vector = Tensor(np.asarray(v_super).reshape(1, -1), requires_grad=True, dtype=dtype, name="ti.vector")
        return VectorConcept(vector, model.num_layers)
    params = init_mapper(model, bypass=train.bypass, seed=seed, dropout_prob=train.dropout_prob, dtype=dtype)
    return MapperConcept(params, train.mode, v_super, rescale=train.rescale)


def save_concept(path: Union[str, Path], concept: Concept, model: ModelConfig, train: TrainConfig) -> None:
    """Weights file plus a JSON sidecar (``<path>.json``) with mode and model settings."""
    path = Path(path)
    save_weights(path, concept.sections())
    meta = {
        "mode": concept.mode,
        "model": model.model_dump(),
        "rescale": train.rescale,
        "super_category": train.super_category,
        "dropout_prob": train.dropout_prob,
    }
    if isinstance(concept, MapperConcept):
        meta["pe_seed"] = concept.params.pe.seed
    write_json_atomic(path.with_suffix(path.suffix + ".json"), meta)


def load_concept(path: Union[str, Path], super_category_lookup) -> Concept:
    """Rebuild a saved concept. ``super_category_lookup(token)`` returns v_super."""
    path = Path(path)
    meta = read_json(path.with_suffix(path.suffix + ".json"))
    model = ModelConfig.model_validate(meta["model"])
    sections = load_weights(path, strict=True, expected=expected_sections(meta["mode"]))
    v_super = super_category_lookup(meta["super_category"])

    if meta["mode"] == "ti_baseline":
        vector = Tensor(sections["ti.vector"], requires_grad=True, name="ti.vector")
        return VectorConcept(vector, model.num_layers)

    pe = PositionalEncoderParams(
        freq_matrix=sections["pe.W"],
        sigma_t=model.sigma_t,
        sigma_l=model.sigma_l,
        anchor_grid=build_anchor_grid(model.num_layers, model.num_time_anchors),
        anchor_matrix=sections["pe.E"],
        num_layers=model.num_layers,
        seed=int(meta.get("pe_seed", 0)),
    )
    weights = {}
    for name, array in sections.items():
        if name == "pe.W":
            continue
        trainable = name != "pe.E" or model.trainable_anchor
        weights[name] = Tensor(array, requires_grad=trainable, name=name)
    params = MapperParams(pe, weights, hidden_dim=sections["fc2.weight"].shape[1],
                          embed_dim=sections["head_base.weight"].shape[1],
                          dropout_prob=float(meta["dropout_prob"]), trainable_anchor=model.trainable_anchor)
    return MapperConcept(params, meta["mode"], v_super, rescale=bool(meta["rescale"]))
