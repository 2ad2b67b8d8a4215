"""
Word-level vocabulary over the caption grammar, with the pad and placeholder tokens.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from config.errors import TokenizationError
from config.neti_config import BACKGROUNDS, COLORS, FUNCTION_WORDS, PAD_TOKEN, PLACEHOLDER_TOKEN, SHAPES
from persistence.run_files import atomic_write_bytes


@dataclass
class TokenizedPrompt:
    ids: List[int]
    placeholder_pos: Optional[int]
    text: str = ""

    @property
    def has_placeholder(self) -> bool:
        return self.placeholder_pos is not None


class Vocabulary:
    """Token list and lookup. The embedding table lives with the text encoder."""

    def __init__(self, tokens: List[str]):
        if len(set(tokens)) != len(tokens):
            raise TokenizationError("vocabulary tokens must be unique")
        for required in (PAD_TOKEN, PLACEHOLDER_TOKEN):
            if required not in tokens:
                raise TokenizationError(f"vocabulary is missing {required!r}")
        self.tokens = list(tokens)
        self.index: Dict[str, int] = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @property
    def pad_id(self) -> int:
        return self.index[PAD_TOKEN]

    @property
    def placeholder_id(self) -> int:
        return self.index[PLACEHOLDER_TOKEN]

    def id_of(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise TokenizationError(f"unknown word {token!r}") from None


def build_vocabulary() -> Vocabulary:
    """Pad first, then function words, colors, shapes, backgrounds, placeholder last."""
    words = [PAD_TOKEN] + FUNCTION_WORDS + list(COLORS) + SHAPES + list(BACKGROUNDS)
    unique = list(dict.fromkeys(words))
    return Vocabulary(unique + [PLACEHOLDER_TOKEN])


def init_token_table(vocab_size: int, embed_dim: int, seed: int, dtype=np.float32) -> np.ndarray:
    """Random directions with norms in a narrow band around 1: [0.9, 1.1] times the median."""
    rng = np.random.default_rng([seed, 2])
    table = rng.standard_normal((vocab_size, embed_dim))
    table /= np.linalg.norm(table, axis=1, keepdims=True)
    table *= rng.uniform(0.9, 1.1, size=(vocab_size, 1))
    return table.astype(dtype)


def tokenize(prompt: str, vocab: Vocabulary, context_length: int) -> TokenizedPrompt:
    """Whitespace split, padded to ``context_length``. At most one placeholder."""
    words = prompt.split()
    if len(words) > context_length:
        raise TokenizationError(f"prompt has {len(words)} words, context length is {context_length}")
    ids = [vocab.id_of(w) for w in words]
    positions = [i for i, w in enumerate(words) if w == PLACEHOLDER_TOKEN]
    if len(positions) > 1:
        raise TokenizationError(f"prompt holds {len(positions)} placeholders, at most one is allowed")
    ids += [vocab.pad_id] * (context_length - len(ids))
    return TokenizedPrompt(ids, positions[0] if positions else None, prompt)


def save_vocabulary(path: Union[str, Path], vocab: Vocabulary) -> None:
    atomic_write_bytes(path, ("\n".join(vocab.tokens) + "\n").encode("utf-8"))


def load_vocabulary(path: Union[str, Path]) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as handle:
        tokens = [line.rstrip("\n") for line in handle if line.strip()]
    return Vocabulary(tokens)
