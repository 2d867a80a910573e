"""Dual-gated fusion of the four attention streams.

Stage one gates every stream with its own sigmoid gate and projects the
text-side pair ``[H_t; H_at]`` and the audio-side pair ``[H_a; H_ta]`` back to
``d``. Stage two scores each modality with one shared vector ``w`` and mixes
them with a two-way softmax, so the weights compete and sum to one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .lpia import LpiaOutput
from .nn import Linear, Module, uniform_init
from .tensor import Tensor, concat, sigmoid, softmax_lastdim

GATES = ("tt", "at", "aa", "ta")


@dataclass
class FusedFeatures:
    t_fused: Tensor | None
    a_fused: Tensor | None
    alpha_t: Tensor | None
    alpha_a: Tensor | None
    f_final: Tensor


def gated_fusion(h: Tensor, w_g: Tensor) -> Tensor:
    """``sigmoid(H W_g^T) * H``."""
    if w_g.shape != (h.shape[-1], h.shape[-1]):
        raise DimensionError(f"gate weight {w_g.shape} does not match stream width {h.shape[-1]}")
    z = sigmoid(h @ w_g.T)
    return z * h


class DualGatedFusion(Module):
    def __init__(self, d: int, rng: np.random.Generator):
        self.d = d
        self.gates = {name: uniform_init(rng, (d, d), d) for name in GATES}
        self.proj_t = Linear(2 * d, d, rng)
        self.proj_a = Linear(2 * d, d, rng)
        self.score = uniform_init(rng, (d, 1), d)


def _gate(fusion: DualGatedFusion, name: str, x: Tensor, use_gates: bool) -> Tensor:
    return gated_fusion(x, fusion.gates[name]) if use_gates else x


def unimodal_fuse(out: LpiaOutput, fusion: DualGatedFusion, use_gates: bool = True,
                  modalities=("t", "a")) -> tuple[Tensor | None, Tensor | None]:
    """Gate each stream, then project each modality's pair back to ``d``.

    A missing partner stream (an ablated path) is replaced by its surviving
    sibling so the projection keeps its shape.
    """
    t_fused = a_fused = None
    if "t" in modalities:
        h_t = _gate(fusion, "tt", out.x_tt, use_gates) if out.x_tt is not None else None
        h_at = _gate(fusion, "at", out.x_at, use_gates) if out.x_at is not None else None
        h_t, h_at = h_t if h_t is not None else h_at, h_at if h_at is not None else h_t
        t_fused = fusion.proj_t(concat([h_t, h_at], axis=-1))
    if "a" in modalities:
        h_a = _gate(fusion, "aa", out.x_aa, use_gates) if out.x_aa is not None else None
        h_ta = _gate(fusion, "ta", out.x_ta, use_gates) if out.x_ta is not None else None
        h_a, h_ta = h_a if h_a is not None else h_ta, h_ta if h_ta is not None else h_a
        a_fused = fusion.proj_a(concat([h_a, h_ta], axis=-1))
    return t_fused, a_fused


def multimodal_fuse(t_fused: Tensor, a_fused: Tensor, w: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Return ``(alpha_t, alpha_a, f_final)`` with alphas shaped like the utterance grid."""
    if t_fused.shape != a_fused.shape:
        raise DimensionError(f"fused streams differ in shape: {t_fused.shape} vs {a_fused.shape}")
    scores = concat([t_fused @ w, a_fused @ w], axis=-1)
    alpha = softmax_lastdim(scores)
    alpha_t, alpha_a = alpha[..., 0:1], alpha[..., 1:2]
    f_final = alpha_t * t_fused + alpha_a * a_fused
    lead = t_fused.shape[:-1]
    return alpha_t.reshape(lead), alpha_a.reshape(lead), f_final
