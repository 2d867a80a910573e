"""Parameter containers and the small set of layers the models share."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor, layer_norm, linear


class Module:
    """Base class that discovers parameters and buffers from attributes.

    Parameters are ``Tensor`` attributes with ``requires_grad``; buffers are
    plain ``np.ndarray`` attributes. Sub-modules may be stored directly or
    inside a ``dict``/``list``. Names follow attribute paths, e.g.
    ``lpia.paths.tt.ffn_w1.weight``.
    """

    training: bool = True

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, dict):
                for key, item in value.items():
                    yield f"{name}.{key}", item
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    yield f"{name}.{i}", item
            else:
                yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self._children():
            if isinstance(value, np.ndarray):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            if isinstance(child, Module):
                child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        targets = {name: p.data for name, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = set(targets) - set(state)
        unexpected = set(state) - set(targets)
        if missing or unexpected:
            raise ContractError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, dst in targets.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != dst.shape:
                raise DimensionError(f"{name}: checkpoint shape {src.shape} vs model shape {dst.shape}")
            np.copyto(dst, src)


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    """``y = x @ weight + bias`` with ``weight`` stored as [in, out]."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = uniform_init(rng, (in_features, out_features), in_features)
        self.bias = uniform_init(rng, (out_features,), in_features) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class BatchNorm1d(Module):
    """Batch normalisation over the batch axis of a [B, d] input.

    Training mode normalises with batch statistics and updates the running
    estimates (momentum 0.1, unbiased variance); eval mode uses the running
    estimates only.
    """

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2:
            raise DimensionError(f"BatchNorm1d expects [B, d], got {x.shape}")
        if not self.training:
            scale = 1.0 / np.sqrt(self.running_var + self.eps)
            return (x - self.running_mean) * (scale * self.gamma) + self.beta
        n = x.shape[0]
        if n < 2:
            raise ContractError("batch-norm statistics are undefined for a training batch of size 1")
        mu = x.mean(axis=0, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=0, keepdims=True)
        out = centered * (var + self.eps) ** -0.5 * self.gamma + self.beta
        m = self.momentum
        self.running_mean *= 1.0 - m
        self.running_mean += m * mu.data.reshape(-1)
        self.running_var *= 1.0 - m
        self.running_var += m * var.data.reshape(-1) * n / (n - 1)
        return out
