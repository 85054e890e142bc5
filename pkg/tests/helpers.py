"""Shared test fixtures that are plain functions rather than pytest fixtures."""

import numpy as np
import torch

from hae.data import HierDataset, HierSpec, gen_hierarchy
from hae.model import HaeModel, ModelConfig

D = torch.float64


def identity_model(input_dim: int = 10, dim: int = 4, seen=(0, 1)) -> HaeModel:
    """Single-layer identity MLPs, M = I, b = 0, so that z = exp0(w)."""
    cfg = ModelConfig(input_dim=input_dim, backbone_dim=dim, euclid_dim=dim, ball_dim=dim, hidden=dim,
                      encoder_layers=1, decoder_layers=1, probe_dim=6, seen_classes=list(seen))
    model = HaeModel(cfg)
    eye, zero = torch.eye(dim, dtype=D), torch.zeros(dim, dtype=D)
    model.params.update({
        "encoder.0.weight": eye.clone(), "encoder.0.bias": zero.clone(),
        "hyper.weight": eye.clone(), "hyper.bias": zero.clone(),
        "decoder.0.weight": eye.clone(), "decoder.0.bias": zero.clone(),
    })
    return model


def row_space_points(model: HaeModel, n: int, seed: int = 0, max_latent: float = 1.0) -> torch.Tensor:
    """Inputs in the backbone's row space whose latents stay well inside the ball's reach."""
    rng = np.random.default_rng(seed)
    w = torch.as_tensor(rng.uniform(-1, 1, size=(n, model.config.backbone_dim)), dtype=D)
    w = w / w.norm(dim=-1, keepdim=True).clamp_min(1.0) * max_latent
    return model.generate(w)


def row_space_dataset(model: HaeModel, per_class: int = 6, seed: int = 0) -> HierDataset:
    """Noise-free dataset whose features lie in the backbone row space."""
    k = len(model.config.seen_classes)
    x = row_space_points(model, k * per_class, seed)
    classes = np.repeat(np.asarray(model.config.seen_classes), per_class)
    n = len(classes)
    return HierDataset(np.arange(n), np.zeros(n, dtype=np.int64), classes.astype(np.int64),
                       np.array(["seen"] * n), x.numpy(), {})


def tiny_dataset(**overrides) -> HierDataset:
    spec = dict(n_super=2, classes_per_super=2, per_class=10, dim=8, n_unseen_classes=1)
    spec.update(overrides)
    return gen_hierarchy(HierSpec(**spec))
