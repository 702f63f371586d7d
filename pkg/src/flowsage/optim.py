"""Adam with decoupled weight decay, and deterministic parameter init."""

from __future__ import annotations

import math
import zlib
from typing import Mapping

import numpy as np

from .autodiff import Tensor, parameter
from .errors import NaNGradient


class Adam:
    """Bias-corrected Adam.

    With ``weight_decay > 0`` every step first shrinks each parameter by
    ``lr * weight_decay`` (decoupled, not folded into the gradient), then
    applies the Adam update.  Gradients are zeroed after the step.
    """

    def __init__(self, params: Mapping[str, Tensor], lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.0):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        for name, p in self.params.items():
            if not np.all(np.isfinite(p.grad)):
                raise NaNGradient(name)
        self.t += 1
        t = self.t
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.zero_grad()


def param_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])


def _fans(shape: tuple) -> tuple[int, int]:
    if len(shape) == 1:
        return shape[0], shape[0]
    if len(shape) == 2:
        return shape[0], shape[1]
    # conv kernels (K, C_in, C_out)
    receptive = int(np.prod(shape[:-2]))
    return shape[-2] * receptive, shape[-1] * receptive


def glorot_bound(shape: tuple) -> float:
    fan_in, fan_out = _fans(shape)
    return math.sqrt(6.0 / (fan_in + fan_out))


def seeded_init(shape, scheme: str = "glorot_uniform", seed: int = 0, name: str = "") -> Tensor:
    """Deterministic in (seed, name).

    Schemes: ``glorot_uniform``; ``recurrent_uniform`` (U(-1/sqrt(H), 1/sqrt(H))
    with H the hidden width, taken as ``shape[0]``); ``zeros``.
    """
    shape = tuple(shape)
    if scheme == "zeros":
        data = np.zeros(shape)
    elif scheme == "glorot_uniform":
        bound = glorot_bound(shape)
        data = param_rng(seed, name).uniform(-bound, bound, size=shape)
    elif scheme == "recurrent_uniform":
        bound = 1.0 / math.sqrt(shape[0])
        data = param_rng(seed, name).uniform(-bound, bound, size=shape)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return parameter(data, name=name)
