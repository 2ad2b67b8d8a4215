"""
Frozen toy text encoder: token table lookup with placeholder injection, learned
positions, pre-LN causal self-attention blocks and a final LayerNorm. Also the
textual-bypass mix applied to its output.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional

import numpy as np

from autodiff.functional import constant, layer_norm_affine, linear, place_row, row_norm, select_row
from autodiff.tensor import Tensor, add, as_tensor, l2_normalize, leaky_relu, matmul, mul, scale, softmax_rows
from config.errors import ConditioningError, ShapeError
from config.neti_config import ATTENTION_MASK_VALUE
from textenc.vocabulary import TokenizedPrompt, Vocabulary, init_token_table

logger = logging.getLogger(__name__)

PREFIX = "text."


@dataclass
class ConditioningSequence:
    """N x D conditioning matrix; ``placeholder_pos`` marks the injected row, if any."""
    mat: Tensor
    placeholder_pos: Optional[int] = None

    @property
    def shape(self):
        return self.mat.shape


def causal_mask(length: int) -> np.ndarray:
    """Additive mask: 0 on and below the diagonal, a large negative value above it."""
    upper = np.triu(np.ones((length, length), dtype=bool), k=1)
    return np.where(upper, ATTENTION_MASK_VALUE, 0.0)


def _as_row(value, like: Tensor) -> Tensor:
    """Tensors pass through; arrays become a (1, D) constant."""
    if isinstance(value, Tensor):
        return value
    return as_tensor(np.asarray(value).reshape(1, -1), like)


class FrozenTextEncoder:
    """Token table (the P space) plus a small causal transformer over N positions."""

    def __init__(self, vocab: Vocabulary, params: Dict[str, Tensor], context_length: int, num_blocks: int):
        self.vocab = vocab
        self.params = params
        self.context_length = context_length
        self.num_blocks = num_blocks
        table = params[PREFIX + "table"]
        if table.shape[0] != len(vocab):
            raise ShapeError(f"token table has {table.shape[0]} rows for {len(vocab)} tokens")
        self.embed_dim = table.shape[1]
        self._mask = causal_mask(context_length)

    @classmethod
    def initialize(cls, vocab: Vocabulary, context_length: int, embed_dim: int, num_blocks: int,
                   ffn_dim: int, seed: int, dtype=np.float32) -> "FrozenTextEncoder":
        rng = np.random.default_rng([seed, 3])
        d = embed_dim

        def normal(shape, fan_in):
            return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)

        arrays = {
            "table": init_token_table(len(vocab), d, seed, dtype),
            "pos": rng.normal(0.0, 0.1, size=(context_length, d)),
        }
        for b in range(num_blocks):
            p = f"b{b}."
            arrays[p + "ln1.weight"] = np.ones((1, d))
            arrays[p + "ln1.bias"] = np.zeros((1, d))
            for proj in ("q", "k", "v", "o"):
                arrays[p + f"attn.{proj}.weight"] = normal((d, d), d)
            arrays[p + "ln2.weight"] = np.ones((1, d))
            arrays[p + "ln2.bias"] = np.zeros((1, d))
            arrays[p + "ffn.fc1.weight"] = normal((d, ffn_dim), d)
            arrays[p + "ffn.fc1.bias"] = np.zeros((1, ffn_dim))
            arrays[p + "ffn.fc2.weight"] = normal((ffn_dim, d), ffn_dim)
            arrays[p + "ffn.fc2.bias"] = np.zeros((1, d))
        arrays["ln_f.weight"] = np.ones((1, d))
        arrays["ln_f.bias"] = np.zeros((1, d))
        params = {PREFIX + k: Tensor(v, requires_grad=True, dtype=dtype, name=PREFIX + k) for k, v in arrays.items()}
        return cls(vocab, params, context_length, num_blocks)

    @classmethod
    def from_sections(cls, vocab: Vocabulary, sections: Mapping[str, np.ndarray]) -> "FrozenTextEncoder":
        params = {name: Tensor(arr, name=name) for name, arr in sections.items() if name.startswith(PREFIX)}
        num_blocks = len({name.split(".")[1] for name in params if name.startswith(PREFIX + "b")})
        context_length = params[PREFIX + "pos"].shape[0]
        return cls(vocab, params, context_length, num_blocks)

    def sections(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def token_embedding(self, token: str) -> np.ndarray:
        """Row of the token table (a copy)."""
        return self.params[PREFIX + "table"].data[self.vocab.id_of(token)].copy()

    def _block(self, x: Tensor, b: int) -> Tensor:
        w = self.params
        p = f"{PREFIX}b{b}."
        h = layer_norm_affine(x, w[p + "ln1.weight"], w[p + "ln1.bias"])
        q = matmul(h, w[p + "attn.q.weight"])
        k = matmul(h, w[p + "attn.k.weight"])
        v = matmul(h, w[p + "attn.v.weight"])
        scores = add(scale(matmul(q, k, transpose_b=True), 1.0 / np.sqrt(self.embed_dim)), constant(self._mask, x))
        attn = matmul(matmul(softmax_rows(scores), v), w[p + "attn.o.weight"])
        x = add(x, attn)
        h = layer_norm_affine(x, w[p + "ln2.weight"], w[p + "ln2.bias"])
        h = linear(leaky_relu(linear(h, w[p + "ffn.fc1.weight"], w[p + "ffn.fc1.bias"])),
                   w[p + "ffn.fc2.weight"], w[p + "ffn.fc2.bias"])
        return add(x, h)

    def embed(self, tokens: TokenizedPrompt, injected=None) -> Tensor:
        """Table lookup as a one-hot product; the placeholder row comes from ``injected``."""
        n = self.context_length
        if len(tokens.ids) != n:
            raise ShapeError(f"expected {n} token ids, got {len(tokens.ids)}")
        table = self.params[PREFIX + "table"]
        one_hot = np.zeros((n, len(self.vocab)))
        one_hot[np.arange(n), tokens.ids] = 1.0
        if tokens.has_placeholder:
            one_hot[tokens.placeholder_pos] = 0.0
        x = matmul(constant(one_hot, table), table)
        if tokens.has_placeholder:
            row = _as_row(injected, table)
            x = add(x, place_row(row, tokens.placeholder_pos, n))
        return x

    def encode(self, tokens: TokenizedPrompt, injected=None) -> ConditioningSequence:
        if tokens.has_placeholder and injected is None:
            raise ConditioningError("prompt has a placeholder but no vector was injected")
        if not tokens.has_placeholder and injected is not None:
            raise ConditioningError("a vector was injected into a prompt without a placeholder")
        if injected is not None and np.shape(injected)[-1] != self.embed_dim:
            raise ConditioningError(f"injected vector has dimension {np.shape(injected)[-1]}, expected {self.embed_dim}")
        if injected is not None and int(np.prod(np.shape(injected))) != self.embed_dim:
            raise ConditioningError(f"injected value must be a single vector, got shape {np.shape(injected)}")
        x = add(self.embed(tokens, injected), self.params[PREFIX + "pos"])
        for b in range(self.num_blocks):
            x = self._block(x, b)
        x = layer_norm_affine(x, self.params[PREFIX + "ln_f.weight"], self.params[PREFIX + "ln_f.bias"])
        return ConditioningSequence(x, tokens.placeholder_pos)


def encode_prompt(tokens: TokenizedPrompt, injected, encoder: FrozenTextEncoder) -> ConditioningSequence:
    """E_text of the prompt with ``injected`` standing in for the placeholder token."""
    return encoder.encode(tokens, injected)


def mix_bypass(seq: ConditioningSequence, pos: int, v_pass, alpha: float) -> ConditioningSequence:
    """Add alpha * unit(v_pass) * ||seq[pos]|| to row ``pos``; every other row is untouched.

    Returns a new sequence (the value pathway); ``seq`` itself is not modified.
    """
    if alpha == 0:
        return ConditioningSequence(seq.mat, seq.placeholder_pos)
    v_pass = _as_row(v_pass, seq.mat)
    if v_pass.shape != (1, seq.mat.shape[1]):
        raise ShapeError(f"v_pass has shape {v_pass.shape}, expected (1, {seq.mat.shape[1]})")
    row = select_row(seq.mat, pos)
    delta = scale(mul(l2_normalize(v_pass), row_norm(row)), alpha)
    return ConditioningSequence(add(seq.mat, place_row(delta, pos, seq.mat.shape[0])), seq.placeholder_pos)
