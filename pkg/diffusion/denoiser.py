"""
Toy cross-attention denoiser eps_theta(z_t, t, c).

Spatial features are (P, C) matrices over the 16x16 latent grid. A 3x3
convolution is nine constant shift matrices applied to the input, concatenated
along channels and multiplied by a (9 C_in, C_out) kernel, so the whole network
runs on the autodiff kernels.
"""
import logging
from functools import lru_cache
from typing import Dict, List, Mapping, Optional

import numpy as np

from autodiff.functional import constant, layer_norm_affine, linear, norm_act
from autodiff.tensor import Tensor, add, as_tensor, concat, leaky_relu, matmul, scale, softmax_rows
from config.errors import ShapeError
from config.neti_config import IMAGE_CHANNELS, LATENT_SIZE
from diffusion.conditioning import LayerConditioning

logger = logging.getLogger(__name__)

PREFIX = "denoiser."
OFFSETS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


@lru_cache(maxsize=8)
def shift_matrices(size: int, dtype_name: str) -> tuple:
    """Nine (P, P) matrices; S @ x reads the neighbour at (dy, dx) with zero padding."""
    positions = size * size
    mats = []
    for dy, dx in OFFSETS:
        m = np.zeros((positions, positions), dtype=dtype_name)
        for y in range(size):
            for x in range(size):
                sy, sx = y + dy, x + dx
                if 0 <= sy < size and 0 <= sx < size:
                    m[y * size + x, sy * size + sx] = 1.0
        mats.append(m)
    return tuple(mats)


def conv3x3(x: Tensor, weight: Tensor, bias: Tensor, size: int = LATENT_SIZE) -> Tensor:
    shifts = shift_matrices(size, np.dtype(weight.dtype).name)
    gathered = concat([matmul(Tensor._wrap(s, False), x) for s in shifts], axis=1)
    return linear(gathered, weight, bias)


def timestep_embedding(t: float, dim: int) -> np.ndarray:
    """Sinusoidal (1, dim) embedding of a scalar timestep."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    angles = t * freqs
    emb = np.concatenate([np.sin(angles), np.cos(angles)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb.reshape(1, dim)


class ToyDenoiser:
    """Input conv, L blocks of (time shift, residual conv, cross-attention), output conv."""

    def __init__(self, params: Dict[str, Tensor], num_layers: int, channels: int, attn_dim: int, embed_dim: int):
        self.params = params
        self.num_layers = num_layers
        self.channels = channels
        self.attn_dim = attn_dim
        self.embed_dim = embed_dim

    @classmethod
    def initialize(cls, num_layers: int, channels: int, attn_dim: int, embed_dim: int, seed: int,
                   dtype=np.float32) -> "ToyDenoiser":
        rng = np.random.default_rng([seed, 4])
        c, a, d = channels, attn_dim, embed_dim

        def he(shape):
            return rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)

        arrays = {
            "time.fc1.weight": he((c, c)), "time.fc1.bias": np.zeros((1, c)),
            "time.fc2.weight": he((c, c)), "time.fc2.bias": np.zeros((1, c)),
            "conv_in.weight": he((9 * IMAGE_CHANNELS, c)), "conv_in.bias": np.zeros((1, c)),
        }
        for l in range(num_layers):
            p = f"blocks.{l}."
            arrays.update({
                p + "time.weight": he((c, c)) * 0.1, p + "time.bias": np.zeros((1, c)),
                p + "norm1.weight": np.ones((1, c)), p + "norm1.bias": np.zeros((1, c)),
                p + "conv.weight": he((9 * c, c)) * 0.5, p + "conv.bias": np.zeros((1, c)),
                p + "norm2.weight": np.ones((1, c)), p + "norm2.bias": np.zeros((1, c)),
                p + "attn.q.weight": rng.normal(0.0, 1.0 / np.sqrt(c), size=(c, a)),
                p + "attn.k.weight": rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, a)),
                p + "attn.v.weight": rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, a)),
                p + "attn.o.weight": rng.normal(0.0, 0.5 / np.sqrt(a), size=(a, c)),
                p + "attn.o.bias": np.zeros((1, c)),
            })
        arrays.update({
            "out_norm.weight": np.ones((1, c)), "out_norm.bias": np.zeros((1, c)),
            "conv_out.weight": rng.normal(0.0, 0.02, size=(9 * c, IMAGE_CHANNELS)),
            "conv_out.bias": np.zeros((1, IMAGE_CHANNELS)),
        })
        params = {PREFIX + k: Tensor(v, requires_grad=True, dtype=dtype, name=PREFIX + k) for k, v in arrays.items()}
        return cls(params, num_layers, c, a, d)

    @classmethod
    def from_sections(cls, sections: Mapping[str, np.ndarray]) -> "ToyDenoiser":
        params = {name: Tensor(arr, name=name) for name, arr in sections.items() if name.startswith(PREFIX)}
        num_layers = len({name.split(".")[2] for name in params if name.startswith(PREFIX + "blocks.")})
        channels = params[PREFIX + "conv_in.weight"].shape[1]
        attn_dim, embed_dim = params[PREFIX + "blocks.0.attn.q.weight"].shape[1], params[PREFIX + "blocks.0.attn.k.weight"].shape[0]
        return cls(params, num_layers, channels, attn_dim, embed_dim)

    def sections(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def _w(self, name: str) -> Tensor:
        return self.params[PREFIX + name]

    def cross_attention(self, h: Tensor, layer: int, key_seq: Tensor, value_seq: Tensor,
                        probe: Optional[List[np.ndarray]] = None) -> Tensor:
        """softmax(Q K^T / sqrt(d_a)) V with Q from h, K from key_seq, V from value_seq."""
        p = f"blocks.{layer}."
        q = matmul(h, self._w(p + "attn.q.weight"))
        k = matmul(key_seq, self._w(p + "attn.k.weight"))
        v = matmul(value_seq, self._w(p + "attn.v.weight"))
        weights = softmax_rows(scale(matmul(q, k, transpose_b=True), 1.0 / np.sqrt(self.attn_dim)))
        if probe is not None:
            probe.append(weights.data.copy())
        return linear(matmul(weights, v), self._w(p + "attn.o.weight"), self._w(p + "attn.o.bias"))

    def forward(self, z_t, t: float, cond: LayerConditioning,
                attention_probe: Optional[List[np.ndarray]] = None) -> Tensor:
        if cond.num_layers != self.num_layers:
            raise ShapeError(f"conditioning has {cond.num_layers} layers, denoiser has {self.num_layers}")
        z_t = as_tensor(z_t, self._w("conv_in.weight"))
        if z_t.shape != (LATENT_SIZE * LATENT_SIZE, IMAGE_CHANNELS):
            raise ShapeError(f"latent has shape {z_t.shape}")
        for key_seq, value_seq in zip(cond.keys, cond.values):
            if key_seq.shape[1] != self.embed_dim or value_seq.shape[1] != self.embed_dim:
                raise ShapeError(f"conditioning width {key_seq.shape[1]} != {self.embed_dim}")

        temb = constant(timestep_embedding(t, self.channels), self._w("time.fc1.weight"))
        temb = leaky_relu(linear(temb, self._w("time.fc1.weight"), self._w("time.fc1.bias")))
        temb = linear(temb, self._w("time.fc2.weight"), self._w("time.fc2.bias"))

        h = conv3x3(z_t, self._w("conv_in.weight"), self._w("conv_in.bias"))
        for l in range(self.num_layers):
            p = f"blocks.{l}."
            h = add(h, linear(temb, self._w(p + "time.weight"), self._w(p + "time.bias")))
            r = norm_act(h, self._w(p + "norm1.weight"), self._w(p + "norm1.bias"))
            h = add(h, conv3x3(r, self._w(p + "conv.weight"), self._w(p + "conv.bias")))
            a = layer_norm_affine(h, self._w(p + "norm2.weight"), self._w(p + "norm2.bias"))
            h = add(h, self.cross_attention(a, l, cond.keys[l], cond.values[l], attention_probe))
        h = norm_act(h, self._w("out_norm.weight"), self._w("out_norm.bias"))
        return conv3x3(h, self._w("conv_out.weight"), self._w("conv_out.bias"))


def predict_noise(z_t, t: float, cond: LayerConditioning, denoiser: ToyDenoiser,
                  attention_probe: Optional[List[np.ndarray]] = None) -> Tensor:
    """eps_hat for a (P, 3) latent; one cross-attention per conditioning layer."""
    return denoiser.forward(z_t, t, cond, attention_probe)
