"""Training objective: pixel L2, perceptual proxy, latent round-trip and hyperbolic NLL."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from hae.geometry import as_tensor
from hae.layers import leaky_relu


@dataclass(frozen=True)
class LossWeights:
    perceptual: float = 1.0  # lambda_1
    latent: float = 0.5  # lambda_2
    hyper: float = 0.3  # lambda_3

    def __post_init__(self):
        for name in ("perceptual", "latent", "hyper"):
            value = getattr(self, name)
            if not (value >= 0 and value < float("inf")):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {value}")


@dataclass
class LossBreakdown:
    l2: torch.Tensor
    perceptual_proxy: torch.Tensor
    latent_rec: torch.Tensor
    hyper: torch.Tensor
    total: torch.Tensor
    latent_weight: float

    def as_floats(self) -> dict:
        return {
            "l2": self.l2.item(),
            "perceptual_proxy": self.perceptual_proxy.item(),
            "latent_rec": self.latent_rec.item(),
            "hyper": self.hyper.item(),
            "total": self.total.item(),
            "latent_weight": self.latent_weight,
        }


def _rows(x) -> torch.Tensor:
    x = as_tensor(x)
    return x.unsqueeze(0) if x.dim() == 1 else x


ZERO_RESIDUAL = 1e-12


def _mean_norm(diff: torch.Tensor) -> torch.Tensor:
    # Residuals below ZERO_RESIDUAL are rounding noise: value and gradient are
    # zeroed, otherwise the unit-length gradient of a norm at ~1e-16 would be
    # amplified into full-size optimizer steps.
    sq = (diff * diff).sum(dim=-1)
    live = sq > ZERO_RESIDUAL ** 2
    norm = torch.sqrt(torch.where(live, sq, torch.ones_like(sq)))
    return torch.where(live, norm, torch.zeros_like(norm)).mean()


def nll_loss(logits, labels) -> torch.Tensor:
    """Mean negative log softmax probability of the labelled class."""
    logits = _rows(logits)
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    if logits.shape[0] == 0:
        raise ValueError("empty batch")
    if labels.shape[0] != logits.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {logits.shape[0]} rows")
    k = logits.shape[-1]
    if (labels < 0).any() or (labels >= k).any():
        raise ValueError(f"labels must lie in [0, {k})")
    logp = torch.log_softmax(logits, dim=-1)
    return -logp.gather(-1, labels.unsqueeze(-1)).mean()


def l2_loss(x, x_hat) -> torch.Tensor:
    x, x_hat = _rows(x), _rows(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return _mean_norm(x - x_hat)


def probe_features(probe, x) -> torch.Tensor:
    """Frozen random feature map ``LeakyReLU(P x)``; ``probe=None`` is the identity."""
    x = as_tensor(x)
    if probe is None:
        return x
    return leaky_relu(x @ probe.T)


def perceptual_proxy_loss(x, x_hat, probe) -> torch.Tensor:
    return l2_loss(probe_features(probe, x), probe_features(probe, x_hat))


def latent_rec_loss(w, w_prime) -> torch.Tensor:
    return l2_loss(w, w_prime)


def dynamic_latent_weight(latent_rec: float) -> float:
    """Optional schedule: ``clamp(0.6 min(1, L_rec / 0.3), 0.3, 0.6)``."""
    return min(max(0.6 * min(1.0, latent_rec / 0.3), 0.3), 0.6)


def total_loss(l2, perceptual_proxy, latent_rec, hyper, weights: LossWeights = LossWeights(),
               dynamic_latent: bool = False) -> LossBreakdown:
    parts = [as_tensor(p) for p in (l2, perceptual_proxy, latent_rec, hyper)]
    for p in parts:
        if not torch.isfinite(p).all():
            raise ValueError("loss components must be finite")
    l2, perc, rec, hyp = parts
    lam2 = dynamic_latent_weight(float(rec)) if dynamic_latent else weights.latent
    total = l2 + weights.perceptual * perc + lam2 * rec + weights.hyper * hyp
    return LossBreakdown(l2, perc, rec, hyp, total, lam2)
