"""Gradients of scalar losses over named parameter sets, plus a finite-difference verifier.

A ``ParamSet`` is a ``dict[str, torch.Tensor]`` of float64 tensors.  Analytic
gradients come from torch autograd; :func:`finite_diff_check` is the
independent check and never calls autograd.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import torch
from torch.overrides import TorchFunctionMode

ParamSet = dict  # name -> float64 tensor
LossFn = Callable[[Mapping[str, torch.Tensor]], torch.Tensor]


class NonFiniteError(FloatingPointError):
    """A loss or one of its intermediates evaluated to inf/nan."""

    def __init__(self, message: str, primitive: str | None = None):
        super().__init__(message)
        self.primitive = primitive


class _FirstNonFinite(TorchFunctionMode):
    def __init__(self):
        super().__init__()
        self.culprit = None

    def __torch_function__(self, func, types, args=(), kwargs=None):
        out = func(*args, **(kwargs or {}))
        if self.culprit is None and isinstance(out, torch.Tensor) and out.is_floating_point():
            if not torch.isfinite(out).all():
                self.culprit = getattr(func, "__name__", repr(func))
        return out


def _locate_non_finite(loss_fn: LossFn, params: Mapping[str, torch.Tensor]) -> str | None:
    with torch.no_grad(), _FirstNonFinite() as mode:
        try:
            loss_fn(params)
        except Exception:
            pass
    return mode.culprit


def value_and_grad(loss_fn: LossFn, params: Mapping[str, torch.Tensor]) -> tuple[float, ParamSet]:
    """Evaluate ``loss_fn(params)`` and its gradient with respect to every entry.

    Entries the loss does not depend on get zero gradients.
    """
    leaves = {name: t.detach().clone().requires_grad_(True) for name, t in params.items()}
    loss = loss_fn(leaves)
    if loss.dim() != 0:
        raise ValueError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    if not torch.isfinite(loss):
        culprit = _locate_non_finite(loss_fn, params)
        raise NonFiniteError(f"non-finite loss (first produced by {culprit})", culprit)
    names = list(leaves)
    if not names:
        return float(loss.detach()), {}
    grads = torch.autograd.grad(loss, [leaves[n] for n in names], allow_unused=True)
    out = {}
    for name, g in zip(names, grads):
        g = torch.zeros_like(leaves[name]) if g is None else g.detach()
        if not torch.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}", name)
        out[name] = g
    return float(loss.detach()), out


@dataclass
class GradReport:
    errors: dict = field(default_factory=dict)  # name -> max relative error
    tol: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def worst(self) -> tuple[str, float] | None:
        if not self.errors:
            return None
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]


def finite_diff_check(
    loss_fn: LossFn,
    params: Mapping[str, torch.Tensor],
    h: float = 1e-6,
    tol: float = 1e-4,
    max_coords: int = 64,
    seed: int = 0,
) -> GradReport:
    """Compare analytic gradients against central differences.

    At most ``max_coords`` coordinates per tensor are probed, chosen by a
    seeded RNG.  Relative error is ``|a - n| / max(1, |a|, |n|)``.
    """
    _, analytic = value_and_grad(loss_fn, params)
    rng = np.random.default_rng(seed)
    base = {name: t.detach().clone() for name, t in params.items()}
    report = GradReport(tol=tol)

    def evaluate(p):
        with torch.no_grad():
            value = float(loss_fn(p))
        if not np.isfinite(value):
            raise NonFiniteError("loss non-finite at a perturbed point")
        return value

    for name, tensor in base.items():
        size = tensor.numel()
        if size == 0:
            continue
        coords = np.arange(size) if size <= max_coords else rng.choice(size, max_coords, replace=False)
        worst = 0.0
        flat_grad = analytic[name].reshape(-1)
        for idx in coords:
            idx = int(idx)
            plus = tensor.clone()
            plus.view(-1)[idx] += h
            minus = tensor.clone()
            minus.view(-1)[idx] -= h
            f_plus = evaluate({**base, name: plus})
            f_minus = evaluate({**base, name: minus})
            numeric = (f_plus - f_minus) / (2 * h)
            a = float(flat_grad[idx])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
        report.errors[name] = worst
    return report
