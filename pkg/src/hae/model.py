"""End-to-end pipeline: frozen backbone -> MLP -> exp0 -> Möbius linear -> ball,
and back through log0 -> MLP -> frozen generator.

The backbone is a seeded random full-row-rank affine map standing in for the
pretrained inversion encoder; the generator is its Moore-Penrose
pseudo-inverse.  Only the maps between them are trained.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import torch

from hae.geometry import DEFAULT_EPS, DTYPE, PoincareBall, as_tensor
from hae.layers import init_mlp, init_mlr, mlp_forward, mlr_logits, mobius_linear
from hae.losses import (
    LossBreakdown,
    LossWeights,
    l2_loss,
    latent_rec_loss,
    nll_loss,
    perceptual_proxy_loss,
    total_loss,
)


@dataclass
class ModelConfig:
    input_dim: int = 64  # D
    backbone_dim: int = 48  # d_w
    euclid_dim: int = 16  # d_z
    ball_dim: int = 16  # n
    hidden: int = 64
    encoder_layers: int = 3
    decoder_layers: int = 3
    probe_dim: int = 64
    hyper_gain: float = 1.0
    seen_classes: list = field(default_factory=list)
    c: float = 1.0
    eps: float = DEFAULT_EPS
    init_seed: int = 0
    backbone_seed: int = 1
    probe_seed: int = 2

    @property
    def n_classes(self) -> int:
        return len(self.seen_classes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _mlp_dims(d_in: int, hidden: int, d_out: int, n_layers: int) -> list[int]:
    if n_layers < 1:
        raise ValueError("an MLP needs at least one layer")
    return [d_in] + [hidden] * (n_layers - 1) + [d_out]


def make_backbone(seed: int, d_w: int, d_in: int):
    rng = np.random.default_rng(seed)
    weight = rng.normal(size=(d_w, d_in)) / np.sqrt(d_in)
    bias = rng.normal(scale=0.1, size=d_w)
    if np.linalg.matrix_rank(weight) < min(d_w, d_in):
        raise ValueError("backbone projection is rank deficient")
    return torch.as_tensor(weight, dtype=DTYPE), torch.as_tensor(bias, dtype=DTYPE)


def make_probe(seed: int, d_out: int, d_in: int) -> torch.Tensor:
    rng = np.random.default_rng(seed)
    return torch.as_tensor(rng.normal(size=(d_out, d_in)) / np.sqrt(d_in), dtype=DTYPE)


@dataclass
class ForwardOutput:
    w: torch.Tensor
    z: torch.Tensor
    w_prime: torch.Tensor
    x_hat: torch.Tensor
    logits: torch.Tensor


class HaeModel:
    """Frozen stand-ins plus a flat dict of trainable float64 tensors.

    Trainable names: ``encoder.{i}.weight``/``bias``, ``hyper.weight``,
    ``hyper.bias`` (tangent vector at the origin), ``decoder.{i}.weight``/``bias``,
    ``mlr.offset`` (prototypes are ``exp0(offset)``) and ``mlr.normal``.
    """

    def __init__(self, config: ModelConfig, params: dict | None = None):
        self.config = config
        self.ball = PoincareBall(config.c, config.eps)
        self.backbone_weight, self.backbone_bias = make_backbone(
            config.backbone_seed, config.backbone_dim, config.input_dim)
        self.generator = torch.linalg.pinv(self.backbone_weight)
        self.probe = make_probe(config.probe_seed, config.probe_dim, config.input_dim)
        self.params = params if params is not None else self.init_params()

    def init_params(self) -> dict:
        cfg = self.config
        rng = np.random.default_rng(cfg.init_seed)
        params = {}
        enc = init_mlp(rng, _mlp_dims(cfg.backbone_dim, cfg.hidden, cfg.euclid_dim, cfg.encoder_layers))
        for i, (w, b) in enumerate(enc):
            params[f"encoder.{i}.weight"], params[f"encoder.{i}.bias"] = w, b
        (m, _), = init_mlp(rng, [cfg.euclid_dim, cfg.ball_dim])
        params["hyper.weight"] = cfg.hyper_gain * m
        params["hyper.bias"] = torch.zeros(cfg.ball_dim, dtype=DTYPE)
        dec = init_mlp(rng, _mlp_dims(cfg.ball_dim, cfg.hidden, cfg.backbone_dim, cfg.decoder_layers))
        for i, (w, b) in enumerate(dec):
            params[f"decoder.{i}.weight"], params[f"decoder.{i}.bias"] = w, b
        if cfg.n_classes:
            q, a = init_mlr(rng, cfg.n_classes, cfg.ball_dim)
            params["mlr.offset"], params["mlr.normal"] = q, a
        return params

    # -- parameter views -------------------------------------------------
    def _p(self, params):
        return self.params if params is None else params

    @staticmethod
    def _layers(params, prefix: str) -> list:
        layers = []
        i = 0
        while f"{prefix}.{i}.weight" in params:
            layers.append((params[f"{prefix}.{i}.weight"], params[f"{prefix}.{i}.bias"]))
            i += 1
        return layers

    def prototypes(self, params=None) -> torch.Tensor:
        return self.ball.expmap0(self._p(params)["mlr.offset"])

    # -- pipeline --------------------------------------------------------
    def backbone(self, x) -> torch.Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.config.input_dim:
            raise ValueError(f"expected input dim {self.config.input_dim}, got {x.shape[-1]}")
        return x @ self.backbone_weight.T + self.backbone_bias

    def generate(self, w_prime) -> torch.Tensor:
        return (as_tensor(w_prime) - self.backbone_bias) @ self.generator.T

    def embed(self, w, params=None) -> torch.Tensor:
        p = self._p(params)
        z_euclid = mlp_forward(self._layers(p, "encoder"), w)
        bias = self.ball.expmap0(p["hyper.bias"])
        return mobius_linear(self.ball, p["hyper.weight"], bias, self.ball.expmap0(z_euclid))

    def encode(self, x, params=None) -> tuple[torch.Tensor, torch.Tensor]:
        w = self.backbone(x)
        return w, self.embed(w, params)

    def decode(self, z, params=None) -> tuple[torch.Tensor, torch.Tensor]:
        p = self._p(params)
        w_prime = mlp_forward(self._layers(p, "decoder"), self.ball.logmap0(z))
        return w_prime, self.generate(w_prime)

    def logits(self, z, params=None) -> torch.Tensor:
        p = self._p(params)
        return mlr_logits(self.ball, self.prototypes(p), p["mlr.normal"], z)

    def classify(self, z, params=None) -> torch.Tensor:
        return torch.softmax(self.logits(z, params), dim=-1)

    def forward(self, x, params=None) -> ForwardOutput:
        w, z = self.encode(x, params)
        w_prime, x_hat = self.decode(z, params)
        logits = self.logits(z, params) if "mlr.offset" in self._p(params) else None
        return ForwardOutput(w, z, w_prime, x_hat, logits)

    def loss(self, x, labels, params=None, weights: LossWeights = LossWeights(),
             dynamic_latent: bool = False) -> LossBreakdown:
        """Loss breakdown for a batch; ``labels`` index ``config.seen_classes``."""
        x = as_tensor(x)
        out = self.forward(x, params)
        hyper = nll_loss(out.logits, labels) if out.logits is not None else torch.zeros((), dtype=DTYPE)
        return total_loss(
            l2_loss(x, out.x_hat),
            perceptual_proxy_loss(x, out.x_hat, self.probe),
            latent_rec_loss(out.w, out.w_prime),
            hyper,
            weights,
            dynamic_latent,
        )

    def class_index(self, labels) -> torch.Tensor:
        lookup = {c: i for i, c in enumerate(self.config.seen_classes)}
        try:
            return torch.as_tensor([lookup[int(c)] for c in labels], dtype=torch.long)
        except KeyError as exc:
            raise ValueError(f"class {exc.args[0]} is not a seen class of this model") from None

    def copy(self) -> "HaeModel":
        return HaeModel(dataclasses.replace(self.config),
                        {k: v.detach().clone() for k, v in self.params.items()})
