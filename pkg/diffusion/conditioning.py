"""
Per-layer conditioning with the key/value split.
"""
from dataclasses import dataclass
from typing import List, Optional

from autodiff.functional import select_row
from autodiff.tensor import Tensor
from config.errors import ConditioningError
from config.neti_config import BYPASS_ALPHA
from textenc.text_encoder import ConditioningSequence, FrozenTextEncoder, encode_prompt, mix_bypass
from textenc.vocabulary import TokenizedPrompt


@dataclass
class LayerConditioning:
    """One (key_seq, value_seq) pair per cross-attention layer."""
    keys: List[Tensor]
    values: List[Tensor]

    @property
    def num_layers(self) -> int:
        return len(self.keys)

    @classmethod
    def shared(cls, seq: ConditioningSequence, num_layers: int) -> "LayerConditioning":
        """The same sequence for keys and values at every layer (plain prompts)."""
        return cls([seq.mat] * num_layers, [seq.mat] * num_layers)


def build_layer_conditioning(concept, encoder: FrozenTextEncoder, t: float, tokens: TokenizedPrompt,
                             truncation: Optional[int] = None, alpha: float = BYPASS_ALPHA) -> LayerConditioning:
    """Query the concept at (t, l) for every layer and encode the prompt once per layer.

    Keys always come from the plain encoding. Values add the bypass term when
    the concept has a bypass head; otherwise they are the key sequences.
    """
    if not tokens.has_placeholder:
        raise ConditioningError(f"prompt {tokens.text!r} has no placeholder")
    layers = list(range(concept.num_layers))
    out = concept.query(t, layers, truncation)
    keys, values = [], []
    for l in layers:
        key_seq = encode_prompt(tokens, select_row(out.v_base, l), encoder)
        keys.append(key_seq.mat)
        if out.v_pass is not None:
            value_seq = mix_bypass(key_seq, tokens.placeholder_pos, select_row(out.v_pass, l), alpha)
            values.append(value_seq.mat)
        else:
            values.append(key_seq.mat)
    return LayerConditioning(keys, values)


def plain_conditioning(encoder: FrozenTextEncoder, tokens: TokenizedPrompt, num_layers: int) -> LayerConditioning:
    """Conditioning for a prompt without a placeholder (captions and the empty prompt)."""
    return LayerConditioning.shared(encode_prompt(tokens, None, encoder), num_layers)
