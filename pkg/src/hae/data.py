"""Synthetic two-level (superclass / class) datasets and their CSV format.

Features are ``g_s u_super + g_c u_class + g_style v_instance + N(0, sigma^2)``
with unit-norm entity vectors drawn once per entity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("seen", "unseen")


@dataclass(frozen=True)
class HierSpec:
    n_super: int = 4
    classes_per_super: int = 4
    per_class: int = 128
    dim: int = 64
    super_gain: float = 1.0
    class_gain: float = 0.5
    style_gain: float = 0.25
    noise: float = 0.02
    n_unseen_classes: int = 4
    seed: int = 0

    def __post_init__(self):
        for name in ("n_super", "classes_per_super", "per_class", "dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.n_unseen_classes < self.n_classes:
            raise ValueError("n_unseen_classes must lie in [0, number of classes)")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")

    @property
    def n_classes(self) -> int:
        return self.n_super * self.classes_per_super


@dataclass
class HierDataset:
    ids: np.ndarray  # int64 (N,)
    supers: np.ndarray  # int64 (N,)
    classes: np.ndarray  # int64 (N,)
    splits: np.ndarray  # str (N,)
    features: np.ndarray  # float64 (N, D)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, mask) -> "HierDataset":
        mask = np.asarray(mask)
        return HierDataset(self.ids[mask], self.supers[mask], self.classes[mask],
                           self.splits[mask], self.features[mask], dict(self.meta))

    def seen(self) -> "HierDataset":
        return self.subset(self.splits == "seen")

    def unseen(self) -> "HierDataset":
        return self.subset(self.splits == "unseen")

    @property
    def seen_classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.classes[self.splits == "seen"]))

    def row(self, sample_id: int) -> int:
        hits = np.flatnonzero(self.ids == sample_id)
        if len(hits) == 0:
            raise KeyError(f"unknown sample id {sample_id}")
        return int(hits[0])

    def holdout_mask(self, every: int = 5) -> np.ndarray:
        """Deterministic per-class held-out rows: every ``every``-th instance of each class."""
        mask = np.zeros(len(self), dtype=bool)
        for c in np.unique(self.classes):
            rows = np.flatnonzero(self.classes == c)
            mask[rows[every - 1::every]] = True
        return mask

    def equals(self, other: "HierDataset") -> bool:
        return (np.array_equal(self.ids, other.ids) and np.array_equal(self.supers, other.supers)
                and np.array_equal(self.classes, other.classes)
                and np.array_equal(self.splits, other.splits)
                and np.array_equal(self.features, other.features))


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def gen_hierarchy(spec: HierSpec = HierSpec()) -> HierDataset:
    """Generate a dataset; the last ``n_unseen_classes`` classes (one per
    superclass, round-robin from the last superclass) are held out as unseen."""
    root = np.random.SeedSequence(spec.seed)
    entity_ss, noise_ss = root.spawn(2)
    rng = np.random.default_rng(entity_ss)
    supers = [_unit(rng, spec.dim) for _ in range(spec.n_super)]
    class_ss = noise_ss.spawn(spec.n_classes)

    unseen = _unseen_classes(spec)
    ids, sup, cls, split, feats = [], [], [], [], []
    for s in range(spec.n_super):
        for j in range(spec.classes_per_super):
            k = s * spec.classes_per_super + j
            u_class = _unit(rng, spec.dim)
            crng = np.random.default_rng(class_ss[k])
            for i in range(spec.per_class):
                v = _unit(crng, spec.dim)
                x = spec.super_gain * supers[s] + spec.class_gain * u_class + spec.style_gain * v
                if spec.noise > 0:
                    x = x + crng.normal(scale=spec.noise, size=spec.dim)
                ids.append(k * spec.per_class + i)
                sup.append(s)
                cls.append(k)
                split.append("unseen" if k in unseen else "seen")
                feats.append(x)
    return HierDataset(
        np.asarray(ids, dtype=np.int64),
        np.asarray(sup, dtype=np.int64),
        np.asarray(cls, dtype=np.int64),
        np.asarray(split),
        np.asarray(feats, dtype=np.float64).reshape(-1, spec.dim),
    )


def _unseen_classes(spec: HierSpec) -> set[int]:
    out = set()
    s, j = spec.n_super - 1, spec.classes_per_super - 1
    while len(out) < spec.n_unseen_classes:
        out.add(s * spec.classes_per_super + j)
        s -= 1
        if s < 0:
            s, j = spec.n_super - 1, j - 1
    return out


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_dataset(ds: HierDataset, path) -> None:
    header = ["id", "super", "class", "split"] + [f"f{i}" for i in range(ds.dim)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(ds)):
            writer.writerow([int(ds.ids[i]), int(ds.supers[i]), int(ds.classes[i]), ds.splits[i]]
                            + [_fmt(v) for v in ds.features[i]])


class DatasetFormatError(ValueError):
    pass


def read_dataset(path) -> HierDataset:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        if header[:4] != ["id", "super", "class", "split"]:
            raise DatasetFormatError(f"{path}: header must start with id,super,class,split")
        dim = len(header) - 4
        if dim < 1 or header[4:] != [f"f{i}" for i in range(dim)]:
            raise DatasetFormatError(f"{path}: feature columns must be f0..f{{D-1}}")
        ids, sup, cls, split, feats = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DatasetFormatError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            if row[3] not in SPLITS:
                raise DatasetFormatError(f"{path}: row {lineno} has unknown split {row[3]!r}")
            try:
                ids.append(int(row[0]))
                sup.append(int(row[1]))
                cls.append(int(row[2]))
                values = [float(v) for v in row[4:]]
            except ValueError as exc:
                raise DatasetFormatError(f"{path}: row {lineno}: {exc}") from None
            if not np.all(np.isfinite(values)):
                raise DatasetFormatError(f"{path}: row {lineno} has non-finite features")
            split.append(row[3])
            feats.append(values)
    ds = HierDataset(np.asarray(ids, dtype=np.int64), np.asarray(sup, dtype=np.int64),
                     np.asarray(cls, dtype=np.int64), np.asarray(split, dtype="<U6"),
                     np.asarray(feats, dtype=np.float64).reshape(-1, dim))
    if len(np.unique(ds.ids)) != len(ds):
        raise DatasetFormatError(f"{path}: duplicate sample ids")
    leaked = set(ds.classes[ds.splits == "seen"]) & set(ds.classes[ds.splits == "unseen"])
    if leaked:
        raise DatasetFormatError(f"{path}: classes {sorted(leaked)} appear in both splits")
    return ds
