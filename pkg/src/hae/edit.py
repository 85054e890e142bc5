"""Latent editing on the ball: geodesic interpolation, radius-controlled
perturbation towards seen-class codes, and shared tangent edits."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import torch

from hae.geometry import DTYPE, PoincareBall, as_tensor


def random_direction(dim: int, seed: int) -> torch.Tensor:
    """Unit tangent vector at the origin drawn uniformly from the sphere."""
    v = np.random.default_rng(seed).normal(size=dim)
    return torch.as_tensor(v / np.linalg.norm(v), dtype=DTYPE)


def check_direction(u) -> torch.Tensor:
    u = as_tensor(u)
    if abs(float(torch.linalg.vector_norm(u)) - 1.0) > 1e-10:
        raise ValueError("edit direction must have unit norm")
    return u


@dataclass(frozen=True)
class PerturbSpec:
    target_radius: float
    t: float | None = 0.2  # geodesic fraction
    s: float | None = None  # tangent magnitude
    seed: int = 0

    def __post_init__(self):
        if (self.t is None) == (self.s is None):
            raise ValueError("set exactly one of t (geodesic) or s (tangent)")
        if self.t is not None and not 0 <= self.t <= 1:
            raise ValueError("geodesic fraction t must lie in [0, 1]")
        if self.s is not None and self.s < 0:
            raise ValueError("tangent magnitude s must be >= 0")
        if self.target_radius < 0:
            raise ValueError("target radius must be >= 0")

    @property
    def mode(self) -> str:
        return "geodesic" if self.t is not None else "tangent"


def interpolate(ball: PoincareBall, z_i, z_j, steps: int) -> list[torch.Tensor]:
    """``steps`` evenly spaced points of the geodesic, endpoints included exactly."""
    if steps < 2:
        raise ValueError("interpolate needs steps >= 2")
    z_i, z_j = as_tensor(z_i), as_tensor(z_j)
    if z_i.shape != z_j.shape:
        raise ValueError(f"dimension mismatch: {tuple(z_i.shape)} vs {tuple(z_j.shape)}")
    points = [z_i.clone()]
    for k in range(1, steps - 1):
        points.append(ball.geodesic(z_i, z_j, k / (steps - 1)))
    points.append(z_j.clone())
    return points


def perturb_geodesic(ball: PoincareBall, z, pool, t: float, radius: float, rng: np.random.Generator) -> torch.Tensor:
    """Rescale ``z`` and a random pool code to ``radius`` and step fraction ``t`` between them."""
    pool = as_tensor(pool)
    if pool.dim() != 2 or pool.shape[0] == 0:
        raise ValueError("reference pool must be a non-empty (N, n) array")
    z_r = ball.rescale_to_radius(z, radius)
    ref = ball.rescale_to_radius(pool[int(rng.integers(pool.shape[0]))], radius)
    if t == 0:
        return z_r
    if t == 1:
        return ref
    return ball.geodesic(z_r, ref, t)


def perturb(ball: PoincareBall, z, pool, spec: PerturbSpec, direction=None) -> torch.Tensor:
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "geodesic":
        return perturb_geodesic(ball, z, pool, spec.t, spec.target_radius, rng)
    u = direction if direction is not None else random_direction(as_tensor(z).shape[-1], spec.seed)
    return perturb_tangent(ball, z, u, spec.s, spec.target_radius)


def perturb_tangent(ball: PoincareBall, z, u, s: float, radius: float) -> torch.Tensor:
    """``rescale(exp0(log0(z) + s u), radius)``."""
    z = as_tensor(z)
    if float(torch.linalg.vector_norm(z)) <= 1e-15:
        raise ValueError("cannot perturb the origin: direction undefined")
    u = check_direction(u)
    moved = ball.expmap0(ball.logmap0(z) + s * u)
    return ball.rescale_to_radius(moved, radius)


def transfer_edit(ball: PoincareBall, u, s: float, radius: float, codes) -> list[torch.Tensor]:
    """Apply one shared tangent edit to every code."""
    codes = list(codes)
    if not codes:
        raise ValueError("transfer_edit needs at least one code")
    return [perturb_tangent(ball, z, u, s, radius) for z in codes]


def write_codes_csv(path, rows, decoded=None) -> None:
    """Rows of ``(id, t_or_step, code)``; optional decoded samples append x-columns."""
    rows = list(rows)
    n = len(rows[0][2]) if rows else 0
    header = ["id", "t_or_step"] + [f"z{i}" for i in range(n)]
    if decoded is not None and rows:
        header += [f"x{i}" for i in range(len(decoded[0]))]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for k, (ident, t, code) in enumerate(rows):
            line = [ident, format(float(t), ".17g")] + [format(float(v), ".17g") for v in code]
            if decoded is not None:
                line += [format(float(v), ".17g") for v in decoded[k]]
            writer.writerow(line)
