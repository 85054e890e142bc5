"""Adam, the training loop and JSON checkpoints."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from hae.data import HierDataset
from hae.geometry import DTYPE
from hae.grad import NonFiniteError, value_and_grad
from hae.losses import LossWeights
from hae.model import HaeModel, ModelConfig

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    steps: int = 5000
    batch_size: int = 8
    learning_rate: float = 1e-3  # desk-scale rate; 1e-4 is the full-scale preset
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    perceptual_weight: float = 1.0
    latent_weight: float = 0.5
    hyper_weight: float = 0.3
    dynamic_latent: bool = False
    seed: int = 0
    holdout_every: int = 5

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.perceptual_weight, self.latent_weight, self.hyper_weight)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name!r} at step {state.step + 1}", name)
    t = state.step + 1
    b1, b2 = config.beta1, config.beta2
    new_params, m, v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new_params[name] = p
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} does not match {name} {tuple(p.shape)}")
        m[name] = b1 * state.m.get(name, torch.zeros_like(p)) + (1 - b1) * g
        v[name] = b2 * state.v.get(name, torch.zeros_like(p)) + (1 - b2) * g * g
        m_hat = m[name] / (1 - b1 ** t)
        v_hat = v[name] / (1 - b2 ** t)
        new_params[name] = p - config.learning_rate * m_hat / (torch.sqrt(v_hat) + config.adam_eps)
    return new_params, AdamState(t, m, v)


@dataclass
class Checkpoint:
    config: dict
    frozen_seeds: dict
    step: int
    params: dict  # name -> float64 tensor
    metrics: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def model(self) -> HaeModel:
        model_cfg = ModelConfig.from_dict({**self.config["model"], **self.frozen_seeds})
        return HaeModel(model_cfg, {k: v.clone() for k, v in self.params.items()})


def make_checkpoint(model: HaeModel, config: TrainConfig | None, step: int, metrics: dict | None = None) -> Checkpoint:
    model_cfg = model.config.to_dict()
    frozen = {k: model_cfg.pop(k) for k in ("backbone_seed", "probe_seed")}
    return Checkpoint(
        config={"model": model_cfg, "train": config.to_dict() if config else None},
        frozen_seeds=frozen,
        step=step,
        params={k: v.detach().clone() for k, v in model.params.items()},
        metrics=metrics or {},
    )


def _num(v) -> str:
    v = float(v)
    if not math.isfinite(v):
        raise ValueError("checkpoint values must be finite")
    return format(v, ".17g")


def dumps_checkpoint(ckpt: Checkpoint) -> str:
    head = {
        "format_version": ckpt.format_version,
        "config": ckpt.config,
        "frozen_seeds": ckpt.frozen_seeds,
        "step": ckpt.step,
        "metrics": ckpt.metrics,
    }
    lines = [json.dumps(head, sort_keys=True)[:-1] + ', "params": {']
    entries = []
    for name in sorted(ckpt.params):
        t = ckpt.params[name]
        data = ", ".join(_num(v) for v in t.reshape(-1).tolist())
        entries.append(f'{json.dumps(name)}: {{"shape": {json.dumps(list(t.shape))}, "data": [{data}]}}')
    lines.append(",\n".join(entries))
    lines.append("}}")
    return "\n".join(lines) + "\n"


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_text(dumps_checkpoint(ckpt), encoding="utf-8")


class CheckpointError(ValueError):
    pass


def loads_checkpoint(text: str) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if not isinstance(doc, dict):
        raise CheckpointError("malformed checkpoint: top level must be an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        params = {}
        for name, entry in doc["params"].items():
            shape = [int(s) for s in entry["shape"]]
            data = np.asarray(entry["data"], dtype=np.float64)
            if data.size != int(np.prod(shape)):
                raise CheckpointError(f"parameter {name}: {data.size} values for shape {shape}")
            params[name] = torch.as_tensor(data.reshape(shape), dtype=DTYPE)
        return Checkpoint(doc["config"], doc["frozen_seeds"], int(doc["step"]), params,
                          doc.get("metrics", {}), version)
    except (KeyError, TypeError, AttributeError) as exc:
        raise CheckpointError(f"malformed checkpoint: missing or invalid {exc}") from None


def load_checkpoint(path) -> Checkpoint:
    return loads_checkpoint(Path(path).read_text(encoding="utf-8"))


def checkpoint_hash(ckpt: Checkpoint) -> str:
    return hashlib.sha256(dumps_checkpoint(ckpt).encode()).hexdigest()


def training_split(dataset: HierDataset, config: TrainConfig) -> tuple[HierDataset, HierDataset]:
    """Seen-class rows, split into (train, held-out) by a per-class index rule."""
    seen = dataset.seen()
    hold = seen.holdout_mask(config.holdout_every)
    return seen.subset(~hold), seen.subset(hold)


def default_model_config(dataset: HierDataset, **overrides) -> ModelConfig:
    return ModelConfig(input_dim=dataset.dim, seen_classes=dataset.seen_classes, **overrides)


def mlr_accuracy(model: HaeModel, dataset: HierDataset) -> float:
    with torch.no_grad():
        _, z = model.encode(dataset.features)
        pred = model.logits(z).argmax(dim=-1)
    return float((pred == model.class_index(dataset.classes)).double().mean())


def fit(model: HaeModel, dataset: HierDataset, config: TrainConfig, progress=None, trainable=None):
    """Train ``model`` in place on the seen split of ``dataset``.

    Returns ``(model, checkpoint, history)`` where history holds one loss
    breakdown dict per step.  A non-finite loss aborts training and raises
    :class:`NonFiniteError` carrying the last good checkpoint as ``.checkpoint``.
    ``trainable`` restricts updates to the given parameter names.
    """
    train, held = training_split(dataset, config)
    if len(train) == 0:
        raise ValueError("no seen-class training samples")
    features = torch.as_tensor(train.features, dtype=DTYPE)
    labels = model.class_index(train.classes)
    weights = config.weights
    # shuffling has its own stream so it never interacts with initialisation
    order_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))

    frozen = {} if trainable is None else {k: v for k, v in model.params.items() if k not in trainable}
    record = []

    def loss_for(idx):
        xb, yb = features[idx], labels[idx]

        def loss_fn(p):
            parts = model.loss(xb, yb, {**p, **frozen}, weights, config.dynamic_latent)
            record.append(parts)
            return parts.total
        return loss_fn

    state = AdamState()
    history = []
    perm, cursor = order_rng.permutation(len(train)), 0
    params = {k: v for k, v in model.params.items() if k not in frozen}
    for step in range(1, config.steps + 1):
        if cursor + config.batch_size > len(perm):
            perm, cursor = order_rng.permutation(len(train)), 0
        idx = torch.as_tensor(perm[cursor:cursor + config.batch_size])
        cursor += config.batch_size
        try:
            _, grads = value_and_grad(loss_for(idx), params)
        except NonFiniteError as exc:
            model.params = {**params, **frozen}
            exc.checkpoint = make_checkpoint(model, config, step - 1)
            raise
        history.append({"step": step, **record.pop().as_floats()})
        params, state = adam_step(params, grads, state, config)
        if progress is not None:
            progress(step, history[-1])
    model.params = {**params, **frozen}
    metrics = {
        "train_accuracy": mlr_accuracy(model, train),
        "heldout_accuracy": mlr_accuracy(model, held) if len(held) else None,
        "final_total": history[-1]["total"],
    }
    return model, make_checkpoint(model, config, config.steps, metrics), history
