"""
Run configuration schema and the preset < file < flags resolution.
"""
import copy
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from config.errors import ConfigError
from config.neti_config import (
    BASE_LR, BATCH_SIZE, BYPASS_INVERSION_STEPS, CAPTION_DROPOUT, CORPUS_SIZE, DROPOUT_PROB,
    GRAD_ACCUM, NUM_TIMESTEPS, PRESETS, PRETRAIN_BATCH_SIZE, PRETRAIN_LR,
    PRETRAIN_STEPS, SUPER_CATEGORY,
)

Mode = Literal["neti", "neti_bypass", "ti_baseline", "ablate_no_time", "ablate_no_space", "ablate_neither"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Section):
    num_layers: int = Field(ge=1)
    context_length: int = Field(ge=1)
    embed_dim: int = Field(ge=1)
    num_frequencies: int = Field(ge=1)
    num_time_anchors: int = Field(ge=1)
    hidden_dim: int = Field(ge=1)
    channels: int = Field(ge=1)
    attn_dim: int = Field(ge=1)
    text_layers: int = Field(ge=1)
    text_ffn_dim: int = Field(ge=1)
    sigma_t: float = Field(gt=0)
    sigma_l: float = Field(gt=0)
    trainable_anchor: bool = False

    @property
    def num_anchors(self) -> int:
        return self.num_layers * self.num_time_anchors


class PretrainConfig(_Section):
    steps: int = Field(default=PRETRAIN_STEPS, ge=0)
    batch_size: int = Field(default=PRETRAIN_BATCH_SIZE, ge=1)
    lr: float = Field(default=PRETRAIN_LR, gt=0)
    caption_dropout: float = Field(default=CAPTION_DROPOUT, ge=0, le=1)
    corpus_size: int = Field(default=CORPUS_SIZE, ge=64)


class TrainConfig(_Section):
    mode: Mode = "neti"
    steps: int = Field(default=500, ge=0)
    batch_size: int = Field(default=BATCH_SIZE, ge=1)
    grad_accum: int = Field(default=GRAD_ACCUM, ge=1)
    base_lr: float = Field(default=BASE_LR, gt=0)
    effective_lr: Optional[float] = None
    dropout_prob: float = Field(default=DROPOUT_PROB, ge=0, le=1)
    alpha: float = Field(default=0.2, ge=0)
    rescale: bool = True
    super_category: str = SUPER_CATEGORY
    checkpoint_every: int = Field(default=100, ge=1)
    debug: bool = False

    @model_validator(mode="after")
    def _check_effective_lr(self) -> "TrainConfig":
        expected = self.base_lr * self.batch_size * self.grad_accum
        if self.effective_lr is None:
            self.effective_lr = expected
        elif not math.isclose(self.effective_lr, expected, rel_tol=1e-9):
            raise ValueError(
                f"effective_lr {self.effective_lr} != base_lr x batch_size x grad_accum = {expected}"
            )
        return self

    @property
    def bypass(self) -> bool:
        return self.mode == "neti_bypass"


class SampleConfig(_Section):
    steps: int = Field(default=50, ge=1, le=NUM_TIMESTEPS)
    guidance: float = 7.5
    truncation: Optional[int] = Field(default=None, ge=1)
    prompt: str = "a photo of S* on a white background"


class AnalysisConfig(_Section):
    fixed_t: int = Field(default=999, ge=0, lt=NUM_TIMESTEPS)
    mix_start_t: int = Field(default=800, ge=0, lt=NUM_TIMESTEPS)
    geometry_layers: List[int] = Field(default_factory=list)
    ks: List[int] = Field(default_factory=lambda: [8, 16, 32, 64, 128])


class RunConfig(_Section):
    preset: Literal["toy", "paper"] = "toy"
    seed: int = 0
    model: ModelConfig
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    sample: SampleConfig = Field(default_factory=SampleConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)

    @model_validator(mode="after")
    def _check_layers(self) -> "RunConfig":
        bad = [l for l in self.analysis.geometry_layers if not 0 <= l < self.model.num_layers]
        if bad:
            raise ValueError(f"geometry_layers {bad} outside 0..{self.model.num_layers - 1}")
        if self.sample.truncation is not None and self.sample.truncation > self.model.hidden_dim:
            raise ValueError(f"truncation {self.sample.truncation} > hidden_dim {self.model.hidden_dim}")
        return self


# Flat command-line flags and the schema path each one sets
FLAG_PATHS: Dict[str, str] = {
    "preset": "preset",
    "seed": "seed",
    "corpus_size": "pretrain.corpus_size",
    "debug": "train.debug",
    "mode": "train.mode",
    "alpha": "train.alpha",
    "truncation": "sample.truncation",
    "guidance": "sample.guidance",
    "prompt": "sample.prompt",
    "fixed_t": "analysis.fixed_t",
    "mix_start_t": "analysis.mix_start_t",
    "geometry_layers": "analysis.geometry_layers",
    "ks": "analysis.ks",
}

STEPS_PATHS: Dict[str, str] = {
    "pretrain": "pretrain.steps",
    "gen-data": "pretrain.steps",
    "invert": "train.steps",
    "sample": "sample.steps",
    "analyze": "sample.steps",
    "eval": "sample.steps",
    "info": "sample.steps",
}


def _deep_merge(base: Dict[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _set_path(tree: Dict[str, Any], path: str, value: Any) -> None:
    *parents, leaf = path.split(".")
    node = tree
    for part in parents:
        node = node.setdefault(part, {})
    node[leaf] = value


def flags_to_tree(flags: Mapping[str, Any], command: str) -> Dict[str, Any]:
    """Turn flat flag values into a nested override dict. None means 'not given'."""
    tree: Dict[str, Any] = {}
    for name, value in flags.items():
        if value is None:
            continue
        if name == "steps":
            path = STEPS_PATHS.get(command)
            if path is None:
                raise ConfigError(f"--steps is not accepted by command {command!r}")
        elif name in FLAG_PATHS:
            path = FLAG_PATHS[name]
        else:
            raise ConfigError(f"unknown config flag {name!r}")
        _set_path(tree, path, value)
    return tree


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a UTF-8 JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config file ({exc.strerror})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def resolve_config(
    flags: Optional[Mapping[str, Any]] = None,
    file: Optional[Union[str, Path, Mapping[str, Any]]] = None,
    command: str = "info",
) -> RunConfig:
    """Resolve a fully specified run config.

    Precedence is flags > file > preset defaults. Unknown keys and type
    mismatches raise ConfigError.
    """
    flag_tree = flags_to_tree(flags or {}, command)
    if file is None:
        file_tree: Dict[str, Any] = {}
    elif isinstance(file, Mapping):
        file_tree = dict(file)
    else:
        file_tree = load_config_file(file)

    preset = flag_tree.get("preset", file_tree.get("preset", "toy"))
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")

    tree = _deep_merge(PRESETS[preset], {"preset": preset})
    tree = _deep_merge(tree, file_tree)
    tree = _deep_merge(tree, flag_tree)
    # bypass runs get the longer budget unless a file or flag set one
    train = tree.get("train")
    steps_given = any(isinstance(t.get("train"), Mapping) and "steps" in t["train"] for t in (file_tree, flag_tree))
    if isinstance(train, dict) and train.get("mode") == "neti_bypass" and not steps_given:
        tree["train"]["steps"] = BYPASS_INVERSION_STEPS
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
