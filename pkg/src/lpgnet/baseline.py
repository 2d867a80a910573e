"""Stacked Transformer encoder baseline used for the efficiency comparison.

Each modality goes through the same kernel-size-1 projection as LPGNet and
then a stack of standard post-norm encoder layers (single-head attention
with W_Q/W_K/W_V/W_O, GELU FFN, two layer norms). The two sequences are
concatenated per utterance and classified by one linear layer.
"""
from __future__ import annotations

import numpy as np

from .data import DialogueBatch
from .fusion import FusedFeatures
from .heads import LossBundle, classify, task_loss, total_loss
from .lpia import _check_mask, masked_attention
from .model import ModelOutput
from .nn import LayerNorm, Linear, Module
from .rng import Streams
from .tensor import Tensor, concat, dropout, gelu


class EncoderLayer(Module):
    def __init__(self, d: int, d_ff: int, rng: np.random.Generator, dropout: float = 0.1):
        self.w_q = Linear(d, d, rng)
        self.w_k = Linear(d, d, rng)
        self.w_v = Linear(d, d, rng)
        self.w_o = Linear(d, d, rng)
        self.ln1 = LayerNorm(d)
        self.ffn_w1 = Linear(d, d_ff, rng)
        self.ffn_w2 = Linear(d_ff, d, rng)
        self.ln2 = LayerNorm(d)
        self.dropout = dropout

    def __call__(self, x: Tensor, mask: np.ndarray, rng: np.random.Generator | None = None) -> Tensor:
        _, attn = masked_attention(self.w_q(x), self.w_k(x), self.w_v(x), mask)
        x = self.ln1(x + self.w_o(attn))
        hidden = dropout(gelu(self.ffn_w1(x)), self.dropout, self.training, rng)
        return self.ln2(x + self.ffn_w2(hidden))


class StackedTransformer(Module):
    arch = "stacked"

    def __init__(self, f_t: int, f_a: int, num_classes: int, d: int = 768, d_ff: int | None = None,
                 dropout: float = 0.1, rng: np.random.Generator | None = None, layers: int = 2, **_ignored):
        d_ff = 2 * d if d_ff is None else d_ff
        rng = np.random.default_rng(0) if rng is None else rng
        self.hparams = dict(f_t=f_t, f_a=f_a, num_classes=num_classes, d=d, d_ff=d_ff, dropout=dropout,
                            layers=layers)
        self.proj_t = Linear(f_t, d, rng)
        self.proj_a = Linear(f_a, d, rng)
        self.enc_t = [EncoderLayer(d, d_ff, rng, dropout) for _ in range(layers)]
        self.enc_a = [EncoderLayer(d, d_ff, rng, dropout) for _ in range(layers)]
        self.classifier = Linear(2 * d, num_classes, rng)

    has_students = False

    def _encode(self, x: Tensor, layers, mask, noise: Streams | None, tag: str) -> Tensor:
        for i, layer in enumerate(layers):
            rng = noise.get("enc", tag, i) if (noise is not None and self.training) else None
            x = layer(x, mask, rng)
        return x

    def forward(self, batch: DialogueBatch, noise: Streams | None = None) -> ModelOutput:
        mask = _check_mask(batch.mask, batch.batch_size, batch.max_len)
        h_t = self._encode(self.proj_t(Tensor(batch.text_feats)), self.enc_t, mask, noise, "t")
        h_a = self._encode(self.proj_a(Tensor(batch.audio_feats)), self.enc_a, mask, noise, "a")
        f = concat([h_t, h_a], axis=-1)
        logits, probs = classify(f, self.classifier)
        return ModelOutput(logits, probs, None, FusedFeatures(h_t, h_a, None, None, f))

    __call__ = forward

    def loss(self, batch: DialogueBatch, noise: Streams | None = None, teacher_soft=None) -> tuple[LossBundle, ModelOutput]:
        out = self.forward(batch, noise)
        task = task_loss(out.probs, batch.labels, batch.mask)
        zero = Tensor(0.0)
        return total_loss(task, zero, zero, zero, zero, (1.0, 0.0, 0.0)), out

