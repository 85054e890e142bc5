"""Trainable maps: Euclidean MLPs, the Möbius linear layer and hyperbolic MLR.

Layers are plain functions of their parameter tensors so that a flat
name -> tensor dict can be differentiated directly (see :mod:`hae.grad`).
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from hae.geometry import DTYPE, PoincareBall, as_tensor, safe_norm

LEAKY_SLOPE = 0.2

Layer = tuple  # (weight[out, in], bias[out])


def leaky_relu(x: torch.Tensor) -> torch.Tensor:
    return F.leaky_relu(x, LEAKY_SLOPE)


def mlp_forward(layers: Sequence[Layer], v) -> torch.Tensor:
    """Affine layers with LeakyReLU(0.2) between them and a linear output."""
    h = as_tensor(v)
    for i, (weight, bias) in enumerate(layers):
        if h.shape[-1] != weight.shape[1]:
            raise ValueError(f"layer {i}: expected input dim {weight.shape[1]}, got {h.shape[-1]}")
        h = h @ weight.T + bias
        if i < len(layers) - 1:
            h = leaky_relu(h)
    return h


def mobius_linear(ball: PoincareBall, weight, bias, x, activation=None) -> torch.Tensor:
    """``exp0(M log0(x)) (+) b``; ``bias`` is a point of the ball."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"expected input dim {weight.shape[1]}, got {x.shape[-1]}")
    out = ball.mobius_add(ball.expmap0(ball.logmap0(x) @ weight.T), bias)
    if activation is not None:
        out = ball.expmap0(activation(ball.logmap0(out)))
    return out


def mlr_logits(ball: PoincareBall, prototypes, normals, x) -> torch.Tensor:
    """Hyperbolic multinomial logistic regression logits.

    ``prototypes`` (K, n) are points p_k of the ball, ``normals`` (K, n) the
    tangent normals a_k at p_k.  Returns logits of shape (..., K).
    """
    p = as_tensor(prototypes)
    a = as_tensor(normals)
    x = as_tensor(x)
    if x.shape[-1] != p.shape[-1]:
        raise ValueError(f"expected point dim {p.shape[-1]}, got {x.shape[-1]}")
    a_norm = safe_norm(a, keepdim=False)
    if (a_norm < 1e-12).any():
        bad = torch.nonzero(a_norm < 1e-12).flatten().tolist()
        raise ValueError(f"degenerate MLR normals for classes {bad}")
    sqrt_c = ball.sqrt_c
    # (..., 1, n) against (K, n) -> (..., K, n)
    diff = ball.mobius_add(-p, x.unsqueeze(-2))
    diff2 = (diff * diff).sum(dim=-1)
    inner = (diff * a).sum(dim=-1)
    lam = ball.conformal_factor(p).squeeze(-1)
    arg = 2 * sqrt_c * inner / ((1 - ball.c * diff2) * a_norm)
    return lam * a_norm / sqrt_c * torch.asinh(arg)


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> torch.Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return torch.as_tensor(rng.uniform(-bound, bound, size=(fan_out, fan_in)), dtype=DTYPE)


def init_mlp(rng: np.random.Generator, dims: Sequence[int]) -> list[Layer]:
    """Layers chaining ``dims[0] -> dims[1] -> ... -> dims[-1]`` with zero biases."""
    return [
        (xavier_uniform(rng, d_out, d_in), torch.zeros(d_out, dtype=DTYPE))
        for d_in, d_out in zip(dims[:-1], dims[1:])
    ]


def init_mlr(rng: np.random.Generator, n_classes: int, dim: int):
    """Tangent prototype offsets q_k ~ N(0, 1e-2 I) and normals a_k ~ N(0, I)."""
    if n_classes < 2:
        raise ValueError("hyperbolic MLR needs at least two classes")
    q = torch.as_tensor(rng.normal(0.0, 0.1, size=(n_classes, dim)), dtype=DTYPE)
    a = torch.as_tensor(rng.normal(0.0, 1.0, size=(n_classes, dim)), dtype=DTYPE)
    return q, a
