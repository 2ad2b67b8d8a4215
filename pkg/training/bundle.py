"""
The frozen generator: text encoder, token vocabulary, denoiser and noise schedule.
"""
import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from autodiff.tensor import Tensor
from config.errors import ChecksumError, FrozenGeneratorError
from config.schema import ModelConfig
from diffusion.conditioning import LayerConditioning, plain_conditioning
from diffusion.denoiser import ToyDenoiser
from diffusion.schedule import NoiseSchedule, linear_schedule
from persistence.run_files import read_json, write_json_atomic
from persistence.weights import load_weights, save_weights
from textenc.text_encoder import FrozenTextEncoder
from textenc.vocabulary import TokenizedPrompt, build_vocabulary, load_vocabulary, save_vocabulary, tokenize

logger = logging.getLogger(__name__)

WEIGHTS_FILE = "bundle.neti"
VOCAB_FILE = "vocab.txt"
META_FILE = "bundle.json"


class GeneratorBundle:
    """Everything the inversion treats as fixed. ``freeze`` turns off all gradients."""

    def __init__(self, encoder: FrozenTextEncoder, denoiser: ToyDenoiser, schedule: NoiseSchedule,
                 metadata: Optional[Dict[str, Any]] = None):
        self.encoder = encoder
        self.denoiser = denoiser
        self.schedule = schedule
        self.metadata: Dict[str, Any] = dict(metadata or {})
        self.frozen = False
        self._uncond: Optional[LayerConditioning] = None

    @classmethod
    def initialize(cls, model: ModelConfig, seed: int, dtype=np.float32) -> "GeneratorBundle":
        vocab = build_vocabulary()
        encoder = FrozenTextEncoder.initialize(vocab, model.context_length, model.embed_dim, model.text_layers,
                                               model.text_ffn_dim, seed, dtype)
        denoiser = ToyDenoiser.initialize(model.num_layers, model.channels, model.attn_dim, model.embed_dim,
                                          seed, dtype)
        meta = {"seed": seed, "unconditional_trained": False, "pretrain_steps": 0, "caption_dropout": 0.0}
        return cls(encoder, denoiser, linear_schedule(), meta)

    @property
    def vocab(self):
        return self.encoder.vocab

    @property
    def dtype(self):
        return self.denoiser.params["denoiser.conv_in.weight"].dtype

    @property
    def num_layers(self) -> int:
        return self.denoiser.num_layers

    @property
    def unconditional_trained(self) -> bool:
        return bool(self.metadata.get("unconditional_trained", False))

    def params(self) -> Dict[str, Tensor]:
        return {**self.encoder.params, **self.denoiser.params}

    def sections(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params().items()}

    def content_hash(self) -> str:
        """SHA-256 over section names, shapes and float32 bytes, in section order."""
        digest = hashlib.sha256()
        for name, array in self.sections().items():
            digest.update(name.encode("utf-8"))
            digest.update(repr(tuple(array.shape)).encode("ascii"))
            digest.update(np.ascontiguousarray(array, dtype="<f4").tobytes())
        return digest.hexdigest()

    def tokenize(self, prompt: str) -> TokenizedPrompt:
        return tokenize(prompt, self.vocab, self.encoder.context_length)

    def freeze(self) -> "GeneratorBundle":
        for t in self.params().values():
            t.requires_grad = False
            t.grad = None
        self.frozen = True
        self._uncond = None
        self.metadata["hash"] = self.content_hash()
        return self

    def gradient_norm(self) -> float:
        """Sum of squared gradient entries over every generator tensor."""
        return float(sum(float(np.sum(t.grad.astype(np.float64) ** 2))
                         for t in self.params().values() if t.grad is not None))

    def check_unchanged(self, expected_hash: str) -> None:
        current = self.content_hash()
        if current != expected_hash:
            raise FrozenGeneratorError(f"generator weights changed: {expected_hash[:12]} -> {current[:12]}")

    def unconditional_conditioning(self) -> LayerConditioning:
        """Empty-prompt conditioning, cached once the bundle is frozen."""
        if self._uncond is not None:
            return self._uncond
        cond = plain_conditioning(self.encoder, self.tokenize(""), self.num_layers)
        if self.frozen:
            self._uncond = cond
        return cond

    def save(self, directory: Union[str, Path]) -> Path:
        directory = Path(directory)
        save_weights(directory / WEIGHTS_FILE, self.sections())
        save_vocabulary(directory / VOCAB_FILE, self.vocab)
        write_json_atomic(directory / META_FILE, {**self.metadata, "hash": self.content_hash()})
        logger.info("saved generator bundle to %s", directory)
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "GeneratorBundle":
        """Load a saved bundle frozen; the recorded content hash must match."""
        directory = Path(directory)
        sections = load_weights(directory / WEIGHTS_FILE)
        vocab = load_vocabulary(directory / VOCAB_FILE)
        metadata = read_json(directory / META_FILE)
        encoder = FrozenTextEncoder.from_sections(vocab, sections)
        denoiser = ToyDenoiser.from_sections(sections)
        bundle = cls(encoder, denoiser, linear_schedule(), metadata)
        bundle.freeze()
        if "hash" in metadata and bundle.metadata["hash"] != metadata["hash"]:
            raise ChecksumError(f"{directory}: bundle hash does not match its metadata")
        return bundle
