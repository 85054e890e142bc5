"""Desk-scale evaluations: oracle classifier, category preservation under
perturbation, diversity, radius structure and the radius sweep.

FID is not computed; preservation (oracle agreement) and the diversity proxy
(mean pairwise distance) together stand in for the FID/LPIPS pair.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import torch

from hae.data import HierDataset
from hae.geometry import DTYPE, as_tensor
from hae.grad import value_and_grad
from hae.layers import init_mlp, mlp_forward
from hae.losses import nll_loss
from hae.model import HaeModel
from hae.train import AdamState, TrainConfig, adam_step


@dataclass
class OracleClassifier:
    layers: list
    classes: list  # output index -> dataset class label
    heldout_accuracy: float

    def predict(self, x) -> np.ndarray:
        with torch.no_grad():
            idx = mlp_forward(self.layers, as_tensor(x)).argmax(dim=-1).numpy()
        return np.asarray(self.classes)[idx]


def train_oracle(dataset: HierDataset, seed: int = 0, hidden: int = 64, steps: int = 400,
                 lr: float = 1e-2, holdout_every: int = 5) -> OracleClassifier:
    """Full-batch Adam on a two-layer MLP over raw features of every class."""
    classes = sorted(int(c) for c in np.unique(dataset.classes))
    lookup = {c: i for i, c in enumerate(classes)}
    hold = dataset.holdout_mask(holdout_every)
    train, held = dataset.subset(~hold), dataset.subset(hold)
    x = torch.as_tensor(train.features, dtype=DTYPE)
    y = torch.as_tensor([lookup[int(c)] for c in train.classes])
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0AC1E]))
    layers = init_mlp(rng, [dataset.dim, hidden, len(classes)])
    params = {f"{i}.{k}": t for i, layer in enumerate(layers) for k, t in zip(("w", "b"), layer)}

    def unpack(p):
        return [(p[f"{i}.w"], p[f"{i}.b"]) for i in range(len(layers))]

    config = TrainConfig(steps=steps, learning_rate=lr)
    state = AdamState()
    for _ in range(steps):
        _, grads = value_and_grad(lambda p: nll_loss(mlp_forward(unpack(p), x), y), params)
        params, state = adam_step(params, grads, state, config)
    oracle = OracleClassifier(unpack(params), classes, float("nan"))
    if len(held):
        oracle.heldout_accuracy = float(np.mean(oracle.predict(held.features) == held.classes))
    return oracle


def diversity_proxy(samples) -> float:
    """Mean pairwise Euclidean distance."""
    x = as_tensor(samples)
    if x.dim() != 2 or x.shape[0] < 2:
        raise ValueError("diversity needs at least two samples")
    d = torch.cdist(x, x)
    n = x.shape[0]
    return float(d.sum() / (n * (n - 1)))


@dataclass
class PerturbationBatch:
    source_rows: np.ndarray
    codes: torch.Tensor
    decoded: torch.Tensor
    reference_labels: np.ndarray
    predicted: np.ndarray


def perturb_batch(model: HaeModel, oracle: OracleClassifier, sources: HierDataset, pool,
                  radius: float, n_sources: int, per_source: int, t: float, seed: int,
                  reference: str = "reconstruction") -> PerturbationBatch:
    """Perturb ``per_source`` times each of ``n_sources`` seeded source rows.

    Each perturbation rescales the source code and a uniformly drawn pool code
    to ``radius`` and takes fraction ``t`` of the geodesic between them.  The
    reference label is the oracle's label for the unperturbed reconstruction
    (``reference="reconstruction"``) or the dataset label (``"label"``).
    """
    ball = model.ball
    pool = as_tensor(pool)
    rng = np.random.default_rng(seed)
    rows = rng.choice(len(sources), size=n_sources, replace=n_sources > len(sources))
    refs = rng.integers(pool.shape[0], size=(n_sources, per_source))
    with torch.no_grad():
        _, z = model.encode(sources.features[rows])
        if reference == "reconstruction":
            ref_labels = oracle.predict(model.decode(z)[1])
        elif reference == "label":
            ref_labels = sources.classes[rows]
        else:
            raise ValueError(f"unknown reference {reference!r}")
        z_r = ball.rescale_to_radius(z, radius).repeat_interleave(per_source, dim=0)
        ref_r = ball.rescale_to_radius(pool[refs.reshape(-1)], radius)
        codes = ball.geodesic(z_r, ref_r, t)
        decoded = model.decode(codes)[1]
    return PerturbationBatch(np.repeat(rows, per_source), codes, decoded,
                             np.repeat(ref_labels, per_source), oracle.predict(decoded))


def preservation_rate(model: HaeModel, oracle: OracleClassifier, sources: HierDataset, pool,
                      radius: float, n_samples: int = 256, t: float = 0.2, seed: int = 0,
                      reference: str = "reconstruction") -> float:
    batch = perturb_batch(model, oracle, sources, pool, radius, n_samples, 1, t, seed, reference)
    return float(np.mean(batch.predicted == batch.reference_labels))


def radius_structure(model: HaeModel, dataset: HierDataset, max_cross_pairs: int = 4096,
                     seed: int = 0) -> dict:
    """Mean radius of instances, same-class midpoints and cross-superclass midpoints.

    Classes with a single sample report ``None`` for the midpoint mean.
    """
    ball = model.ball
    with torch.no_grad():
        _, z = model.encode(dataset.features)
        radii = ball.radius(z).numpy()
        per_class = {}
        for c in sorted(int(c) for c in np.unique(dataset.classes)):
            rows = np.flatnonzero(dataset.classes == c)
            i, j = np.triu_indices(len(rows), k=1)
            mid = None
            if len(i):
                mid = float(ball.radius(ball.geodesic(z[rows[i]], z[rows[j]], 0.5)).mean())
            per_class[str(c)] = {"instance": float(radii[rows].mean()), "midpoint": mid}
        rng = np.random.default_rng(seed)
        a = rng.integers(len(dataset), size=max_cross_pairs)
        b = rng.integers(len(dataset), size=max_cross_pairs)
        keep = dataset.supers[a] != dataset.supers[b]
        cross = None
        if keep.any():
            cross = float(ball.radius(ball.geodesic(z[a[keep]], z[b[keep]], 0.5)).mean())
    comparable = [v for v in per_class.values() if v["midpoint"] is not None]
    contracted = sum(v["midpoint"] < v["instance"] for v in comparable)
    return {
        "instance": float(radii.mean()),
        "same_class_midpoint": float(np.mean([v["midpoint"] for v in comparable])) if comparable else None,
        "cross_super_midpoint": cross,
        "contracted_fraction": contracted / len(comparable) if comparable else None,
        "per_class": per_class,
    }


@dataclass
class SweepConfig:
    n_sources: int = 32
    per_source: int = 8
    t: float = 0.2  # geodesic fraction toward the reference
    seed: int = 0
    source_split: str = "heldout"  # "heldout" (held-out seen rows), "seen" or "unseen"
    reference: str = "reconstruction"
    holdout_every: int = 5

    @property
    def n_samples(self) -> int:
        return self.n_sources * self.per_source


@dataclass
class RadiusSweepReport:
    radii: list
    preservation: list
    diversity: list
    mean_radius: list
    seed: int
    config: dict = field(default_factory=dict)
    radius_structure: dict | None = None

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def to_json(self) -> dict:
        return {
            "radii": self.radii,
            "preservation": self.preservation,
            "diversity": self.diversity,
            "mean_radius": self.mean_radius,
            "radius_structure": self.radius_structure,
            "seed": self.seed,
            "config_hash": self.config_hash,
        }

    def write(self, json_path, csv_path=None) -> None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if csv_path is not None:
            with open(csv_path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["radius", "preservation", "diversity", "mean_radius"])
                for row in zip(self.radii, self.preservation, self.diversity, self.mean_radius):
                    writer.writerow([format(v, ".17g") for v in row])


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def sweep_sources(dataset: HierDataset, config: SweepConfig) -> HierDataset:
    if config.source_split == "heldout":
        return dataset.subset((dataset.splits == "seen") & dataset.holdout_mask(config.holdout_every))
    if config.source_split in ("seen", "unseen"):
        return dataset.subset(dataset.splits == config.source_split)
    raise ValueError(f"unknown source split {config.source_split!r}")


def sweep(model: HaeModel, oracle: OracleClassifier, dataset: HierDataset, radii,
          config: SweepConfig = SweepConfig(), pool_split: str = "seen") -> RadiusSweepReport:
    """Preservation rate and diversity of geodesic perturbations at each radius.

    Diversity is the mean over sources of the pairwise spread of that source's
    decoded perturbations.  The pool holds encoded codes of the ``pool_split``
    rows; sources come from ``config.source_split``.
    """
    radii = [float(r) for r in radii]
    if any(a < b for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be sorted in descending order")
    sources = sweep_sources(dataset, config)
    pool_rows = dataset.subset(dataset.splits == pool_split)
    if len(sources) == 0 or len(pool_rows) == 0:
        raise ValueError("sweep needs non-empty source and pool splits")
    with torch.no_grad():
        pool = model.encode(pool_rows.features)[1]
    report = RadiusSweepReport(radii, [], [], [], config.seed,
                               {"sweep": vars(config).copy(), "radii": radii, "pool_split": pool_split})
    for r in radii:
        batch = perturb_batch(model, oracle, sources, pool, r, config.n_sources, config.per_source,
                              config.t, config.seed, config.reference)
        report.preservation.append(float(np.mean(batch.predicted == batch.reference_labels)))
        groups = batch.decoded.reshape(config.n_sources, config.per_source, -1)
        if config.per_source >= 2:
            report.diversity.append(float(np.mean([diversity_proxy(g) for g in groups])))
        else:
            report.diversity.append(diversity_proxy(batch.decoded))
        report.mean_radius.append(float(model.ball.radius(batch.codes).mean()))
    return report


def is_monotone(values, increasing: bool, slack: float) -> bool:
    pairs = zip(values, values[1:])
    if increasing:
        return all(b >= a - slack for a, b in pairs)
    return all(b <= a + slack for a, b in pairs)
