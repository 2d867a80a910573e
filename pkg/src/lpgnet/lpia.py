"""Lightweight parallel interaction attention.

Both modalities are projected by a kernel-size-1 convolution, then four
independent single-head attention paths run side by side:

====  =====  ==========
path  query  key/value
====  =====  ==========
tt    text   text
aa    audio  audio
at    audio  text
ta    text   audio
====  =====  ==========

Each path ends in a two-stage enhancement: a masked mean over utterances is
compressed (1x1 conv on a degenerate grid, i.e. linear d->d, then batch norm
and LeakyReLU), broadcast back over the sequence and added to the path's
query together with a position-wise FFN of itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .nn import BatchNorm1d, LayerNorm, Linear, Module
from .rng import Streams
from .tensor import MASK_FILL, Tensor, dropout, gelu, leaky_relu, masked_fill, softmax_lastdim

PATHS = ("tt", "aa", "at", "ta")
PATH_STREAMS = {"tt": ("t", "t"), "aa": ("a", "a"), "at": ("a", "t"), "ta": ("t", "a")}


@dataclass
class LpiaOutput:
    x_tt: Tensor | None
    x_aa: Tensor | None
    x_at: Tensor | None
    x_ta: Tensor | None

    def get(self, path: str) -> Tensor | None:
        return getattr(self, f"x_{path}")


def _check_mask(mask: np.ndarray, batch: int, length: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (batch, length):
        raise DimensionError(f"mask shape {mask.shape} does not match sequence shape ({batch}, {length})")
    if (mask.sum(axis=1) == 0).any():
        raise ContractError("every dialogue needs at least one valid utterance")
    return mask


def project_conv1d(x: Tensor, proj: Linear) -> Tensor:
    """Kernel-size-1 Conv1D over the utterance axis (shared per-position affine map)."""
    if x.shape[-1] != proj.in_features:
        raise DimensionError(f"modality has {x.shape[-1]} features, projection expects {proj.in_features}")
    return proj(x)


def masked_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention with padded keys filled by -1e9.

    Returns ``(weights [B, U, U], out [B, U, d])``. Rows for padded queries are
    computed but carry no meaning.
    """
    if not (q.shape == k.shape == v.shape) or q.ndim != 3:
        raise DimensionError(f"attention expects equal [B, U, d] inputs, got {q.shape}, {k.shape}, {v.shape}")
    b, u, d = q.shape
    mask = _check_mask(mask, b, u)
    scores = (q @ k.swapaxes(-1, -2)) / math.sqrt(d)
    scores = masked_fill(scores, (mask == 0)[:, None, :], MASK_FILL)
    weights = softmax_lastdim(scores)
    return weights, weights @ v


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over the utterance axis of [B, U, d], counting valid positions only."""
    counts = mask.sum(axis=1, keepdims=True)
    return (x * mask[:, :, None]).sum(axis=1) / counts


class EnhancePath(Module):
    """Parameters and forward pass of one path's two-stage enhancement."""

    def __init__(self, d: int, d_ff: int, rng: np.random.Generator, dropout: float = 0.1, slope: float = 0.01):
        self.compress = Linear(d, d, rng)
        self.bn = BatchNorm1d(d)
        self.ln = LayerNorm(d)
        self.ffn_w1 = Linear(d, d_ff, rng, bias=False)
        self.ffn_w2 = Linear(d_ff, d, rng, bias=False)
        self.dropout = dropout
        self.slope = slope

    def ffn(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        hidden = gelu(self.ffn_w1(self.ln(x)))
        return self.ffn_w2(dropout(hidden, self.dropout, self.training, rng))

    def compress_global(self, attn_out: Tensor, mask: np.ndarray) -> Tensor:
        pooled = masked_mean(attn_out, mask)
        return leaky_relu(self.bn(self.compress(pooled)), self.slope)

    def __call__(self, q: Tensor, attn_out: Tensor, mask: np.ndarray, rng=None, use_ffn: bool = True) -> Tensor:
        b, u, d = q.shape
        a_conv = self.compress_global(attn_out, mask).reshape(b, 1, d).broadcast_to((b, u, d))
        out = q + a_conv
        if use_ffn:
            out = out + self.ffn(a_conv, rng)
        return out


def enhance(q: Tensor, attn_out: Tensor, mask: np.ndarray, params: EnhancePath, rng=None, use_ffn: bool = True) -> Tensor:
    """X_final = Q + A_conv + FFN(A_conv) for one path."""
    if params.training and q.shape[0] < 2:
        raise ContractError("training-mode enhancement needs at least 2 dialogues per batch (batch norm)")
    return params(q, attn_out, mask, rng, use_ffn)


class Lpia(Module):
    def __init__(self, f_t: int, f_a: int, d: int, d_ff: int, rng: np.random.Generator,
                 dropout: float = 0.1, slope: float = 0.01):
        self.d = d
        self.d_ff = d_ff
        self.proj_t = Linear(f_t, d, rng)
        self.proj_a = Linear(f_a, d, rng)
        self.paths = {name: EnhancePath(d, d_ff, rng, dropout, slope) for name in PATHS}

    def project(self, x_t: Tensor | None, x_a: Tensor | None) -> dict[str, Tensor | None]:
        return {
            "t": None if x_t is None else project_conv1d(x_t, self.proj_t),
            "a": None if x_a is None else project_conv1d(x_a, self.proj_a),
        }

    def run_path(self, name: str, streams: dict, mask: np.ndarray, noise: Streams | None = None,
                 use_ffn: bool = True) -> Tensor:
        q_key, kv_key = PATH_STREAMS[name]
        q, kv = streams[q_key], streams[kv_key]
        _, attn_out = masked_attention(q, kv, kv, mask)
        rng = noise.get("lpia", name) if (noise is not None and self.training) else None
        return enhance(q, attn_out, mask, self.paths[name], rng, use_ffn)

    def __call__(self, x_t: Tensor | None, x_a: Tensor | None, mask: np.ndarray, noise: Streams | None = None,
                 paths=PATHS, use_ffn: bool = True) -> LpiaOutput:
        return lpia_forward(self, x_t, x_a, mask, noise, paths, use_ffn)


def lpia_forward(block: Lpia, x_t, x_a, mask, noise=None, paths=PATHS, use_ffn: bool = True) -> LpiaOutput:
    """Project raw features and run the requested paths independently."""
    streams = block.project(x_t, x_a)
    out = {}
    for name in PATHS:
        if name in paths:
            if any(streams[s] is None for s in PATH_STREAMS[name]):
                raise ContractError(f"path {name} needs a modality that was not supplied")
            out[f"x_{name}"] = block.run_path(name, streams, mask, noise, use_ffn)
        else:
            out[f"x_{name}"] = None
    return LpiaOutput(**out)
