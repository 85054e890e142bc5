"""Numerical self-check suites: gyrovector identities and finite-difference gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from hae.geometry import DTYPE, PoincareBall
from hae.grad import finite_diff_check
from hae.layers import mlp_forward, mlr_logits, mobius_linear
from hae.losses import (
    LossWeights,
    l2_loss,
    latent_rec_loss,
    nll_loss,
    perceptual_proxy_loss,
    total_loss,
)
from hae.model import HaeModel, ModelConfig

IDENTITY_TOL = 1e-8
GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    worst: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.worst <= self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: worst={self.worst:.3e} tol={self.tol:.0e}"


def sample_ball(rng: np.random.Generator, n: int, dim: int, max_radius: float, c: float = 1.0) -> torch.Tensor:
    """Points with uniformly distributed direction and hyperbolic radius in [0, max_radius]."""
    d = rng.normal(size=(n, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.uniform(0, max_radius, size=(n, 1))
    return torch.as_tensor(np.tanh(math.sqrt(c) * r / 2) / math.sqrt(c) * d, dtype=DTYPE)


def _max(t: torch.Tensor) -> float:
    return float(t.max()) if t.numel() else 0.0


def _err(a, b) -> float:
    return _max(torch.linalg.vector_norm(a - b, dim=-1))


def identity_suite(n_pairs: int = 10_000, dim: int = 16, max_radius: float = 6.0, seed: int = 0,
                   ball: PoincareBall | None = None) -> list[CheckResult]:
    """Gyrogroup identities, exp/log inversion and distance axioms on random points.

    The default ball uses eps = 1e-5 so sums of two radius-6 points (radius up
    to 12) are not clamped.
    """
    ball = ball or PoincareBall(1.0, 1e-5)
    rng = np.random.default_rng(seed)
    x = sample_ball(rng, n_pairs, dim, max_radius, ball.c)
    y = sample_ball(rng, n_pairs, dim, max_radius, ball.c)
    w = sample_ball(rng, n_pairs, dim, max_radius, ball.c)
    zero = torch.zeros_like(x)
    results = []

    def add(name, value, tol=IDENTITY_TOL):
        results.append(CheckResult(name, float(value), tol))

    add("x (+) 0 = x", _err(ball.mobius_add(x, zero), x))
    add("0 (+) x = x", _err(ball.mobius_add(zero, x), x))
    add("(-x) (+) x = 0", _err(ball.mobius_add(-x, x), zero))
    add("left cancellation", _err(ball.mobius_add(-x, ball.mobius_add(x, y)), y))
    norms = torch.linalg.vector_norm(ball.mobius_add(x, y), dim=-1) * ball.sqrt_c
    add("closure ||x (+) y|| < 1/sqrt(c) (violations)", float((norms >= 1).sum()), 0.0)

    # exp/log: tangent vectors whose image stays within the radius budget
    v = torch.as_tensor(rng.normal(size=(n_pairs, dim)), dtype=DTYPE)
    v = v / torch.linalg.vector_norm(v, dim=-1, keepdim=True)
    v = v * torch.as_tensor(rng.uniform(0, max_radius, size=(n_pairs, 1))) / ball.conformal_factor(x)
    ex = ball.expmap(x, v)
    ok = ball.radius(ex) <= max_radius
    vn = torch.linalg.vector_norm(v, dim=-1)
    add("log_b(exp_b(v)) = v", _max(torch.linalg.vector_norm(ball.logmap(x, ex) - v, dim=-1)[ok] / (1 + vn[ok])))
    add("exp_b(log_b(y)) = y", _err(ball.expmap(x, ball.logmap(x, y)), y))
    u = v * ball.conformal_factor(x) / 2  # |u| <= max_radius / 2
    add("radius(exp_0(v)) = 2|v|", _max((ball.radius(ball.expmap0(u)) - 2 * torch.linalg.vector_norm(u, dim=-1)).abs()))

    dxy, dyx = ball.distance(x, y), ball.distance(y, x)
    add("distance symmetry", _max((dxy - dyx).abs()))
    add("distance formulas agree", _max((dxy - ball.distance_gyro(x, y)).abs()))
    tri = ball.distance(x, w) - ball.distance(x, y) - ball.distance(y, w)
    add("triangle inequality", max(0.0, _max(tri)))
    add("d(x, x) = 0", _max(ball.distance(x, x).abs()))

    t = torch.as_tensor(rng.uniform(0, 2, size=n_pairs), dtype=DTYPE)
    small = sample_ball(rng, n_pairs, dim, max_radius / 2, ball.c)
    add("radius(t (x) x) = t radius(x)",
        _max((ball.radius(ball.mobius_scalar_mul(t, small)) - t * ball.radius(small)).abs()))

    # midpoint contraction for equal-radius pairs
    y_eq = ball.rescale_to_radius(y, ball.radius(x).clamp_min(1e-3))
    x_eq = ball.rescale_to_radius(x, ball.radius(x).clamp_min(1e-3))
    keep = ball.distance(x_eq, y_eq) > 1e-6
    mid = ball.geodesic(x_eq, y_eq, 0.5)
    excess = (ball.radius(mid) - ball.radius(x_eq))[keep]
    add("midpoint contraction (violations)", float((excess >= 0).sum()), 0.0)
    return results


# -- gradient suite ------------------------------------------------------------

def _probe_loss(rng, out_dim):
    g = torch.as_tensor(rng.normal(size=out_dim), dtype=DTYPE)
    return lambda out: (out * g).sum()


def _within(ball: PoincareBall, limit: float, *points) -> bool:
    return all(float(ball.radius(p).max()) <= limit for p in points)


def _geometry_cases(rng, ball: PoincareBall, dim: int, limit: float):
    """Yield (name, loss_fn, params) for one random configuration of each primitive."""

    def pts(n=1, r=limit):
        return [sample_ball(rng, 1, dim, r, ball.c)[0] for _ in range(n)]

    probe = _probe_loss(rng, dim)
    while True:
        x, y = pts(2, limit / 2)
        if _within(ball, limit, ball.mobius_add(x, y)):
            break
    yield "mobius_add", lambda p: probe(ball.mobius_add(p["x"], p["y"])), {"x": x, "y": y}

    x, = pts(1, limit / 2)
    t = torch.tensor(float(rng.uniform(0.1, 2.0)), dtype=DTYPE)
    yield "mobius_scalar_mul", lambda p: probe(ball.mobius_scalar_mul(p["t"], p["x"])), {"t": t, "x": x}

    x, = pts()
    yield "conformal_factor", lambda p: ball.conformal_factor(p["x"]).sum(), {"x": x}
    yield "radius", lambda p: ball.radius(p["x"]), {"x": x}
    yield "logmap0", lambda p: probe(ball.logmap0(p["x"])), {"x": x}
    yield "project (interior)", lambda p: probe(ball.project(p["x"])), {"x": x}

    v = torch.as_tensor(rng.normal(size=dim), dtype=DTYPE)
    v = v / v.norm() * float(rng.uniform(0.05, limit / 2))
    yield "expmap0", lambda p: probe(ball.expmap0(p["v"])), {"v": v}

    while True:
        b, = pts(1, limit / 2)
        v = torch.as_tensor(rng.normal(size=dim), dtype=DTYPE)
        v = v / v.norm() * float(rng.uniform(0.05, limit / 2)) / ball.conformal_factor(b)
        if _within(ball, limit, ball.expmap(b, v)):
            break
    yield "expmap", lambda p: probe(ball.expmap(p["b"], p["v"])), {"b": b, "v": v}

    while True:
        b, y = pts(2, limit / 2)
        if _within(ball, limit, ball.mobius_add(-b, y)):
            break
    yield "logmap", lambda p: probe(ball.logmap(p["b"], p["y"])), {"b": b, "y": y}
    yield "distance", lambda p: ball.distance(p["x"], p["y"]), {"x": b, "y": y}
    yield "distance_gyro", lambda p: ball.distance_gyro(p["x"], p["y"]), {"x": b, "y": y}
    s = float(rng.uniform(0.05, 0.95))
    yield "geodesic", lambda p: probe(ball.geodesic(p["x"], p["y"], s)), {"x": b, "y": y}

    x, = pts()
    r = float(rng.uniform(0.1, limit))
    yield "rescale_to_radius", lambda p: probe(ball.rescale_to_radius(p["x"], r)), {"x": x}


def _layer_cases(rng, ball: PoincareBall, dim: int, limit: float):
    def mat(*shape, scale=1.0):
        return torch.as_tensor(rng.normal(scale=scale, size=shape), dtype=DTYPE)

    v = mat(dim)
    probe = _probe_loss(rng, 5)
    yield ("mlp_forward",
           lambda p: probe(mlp_forward([(p["w0"], p["b0"]), (p["w1"], p["b1"])], p["v"])),
           {"w0": mat(7, dim, scale=0.5), "b0": mat(7, scale=0.1), "w1": mat(5, 7, scale=0.5),
            "b1": mat(5, scale=0.1), "v": v})

    probe_b = _probe_loss(rng, dim)
    while True:
        x = sample_ball(rng, 1, dim, limit / 2, ball.c)[0]
        params = {"m": mat(dim, dim, scale=0.5 / math.sqrt(dim)), "b": sample_ball(rng, 1, dim, 1.0, ball.c)[0], "x": x}
        if _within(ball, limit, mobius_linear(ball, params["m"], params["b"], x)):
            break
    yield "mobius_linear", lambda p: probe_b(mobius_linear(ball, p["m"], p["b"], p["x"])), params

    k = 4
    probe_k = _probe_loss(rng, k)
    q = mat(k, dim, scale=0.3)
    params = {"q": q, "a": mat(k, dim), "x": sample_ball(rng, 1, dim, limit / 2, ball.c)[0]}
    yield ("mlr_logits",
           lambda p: probe_k(mlr_logits(ball, ball.expmap0(p["q"]), p["a"], p["x"])), params)

    labels = torch.as_tensor(rng.integers(k, size=3))
    yield "nll_loss", lambda p: nll_loss(p["logits"], labels), {"logits": mat(3, k)}
    yield "l2_loss", lambda p: l2_loss(p["x"], p["y"]), {"x": mat(3, dim), "y": mat(3, dim)}
    probe_m = mat(6, dim)
    yield ("perceptual_proxy_loss", lambda p: perceptual_proxy_loss(p["x"], p["y"], probe_m),
           {"x": mat(3, dim), "y": mat(3, dim)})
    yield "latent_rec_loss", lambda p: latent_rec_loss(p["x"], p["y"]), {"x": mat(3, dim), "y": mat(3, dim)}
    weights = LossWeights(*rng.uniform(0, 1, size=3))
    yield ("total_loss",
           lambda p: total_loss(p["a"], p["b"], p["c"], p["d"], weights).total,
           {n: torch.tensor(float(rng.uniform(0, 2)), dtype=DTYPE) for n in "abcd"})
    yield ("mlr + nll",
           lambda p: nll_loss(mlr_logits(ball, ball.expmap0(p["q"]), p["a"], p["x"]), labels),
           {"q": q, "a": mat(k, dim), "x": sample_ball(rng, 3, dim, limit / 2, ball.c)})


def end_to_end_case(rng, seed: int, limit: float = 5.5, batch: int = 4):
    """Full model loss over every trainable tensor at a small model size."""
    cfg = ModelConfig(input_dim=12, backbone_dim=10, euclid_dim=6, ball_dim=5, hidden=8,
                      probe_dim=7, seen_classes=[0, 1, 2], init_seed=seed,
                      backbone_seed=seed + 1, probe_seed=seed + 2)
    model = HaeModel(cfg)
    x = torch.as_tensor(rng.normal(size=(batch, cfg.input_dim)), dtype=DTYPE)
    labels = torch.as_tensor(rng.integers(3, size=batch))
    with torch.no_grad():
        z = model.encode(x)[1]
    if float(model.ball.radius(z).max()) > limit:
        return None
    return lambda p: model.loss(x, labels, p).total, model.params


def grad_suite(n_configs: int = 100, dim: int = 4, limit: float = 5.5, seed: int = 0,
               ball: PoincareBall | None = None, h: float = 1e-6, tol: float = GRAD_TOL,
               e2e_coords: int = 8) -> list[CheckResult]:
    """Central-difference checks of every differentiable primitive and the full loss."""
    ball = ball or PoincareBall()
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for i in range(n_configs):
        cases = list(_geometry_cases(rng, ball, dim, limit)) + list(_layer_cases(rng, ball, dim, limit))
        for name, fn, params in cases:
            report = finite_diff_check(fn, params, h=h, tol=tol, seed=i)
            worst[name] = max(worst.get(name, 0.0), report.max_error)
        case = None
        while case is None:
            case = end_to_end_case(rng, seed * 1000 + i, limit)
        fn, params = case
        report = finite_diff_check(fn, params, h=h, tol=tol, max_coords=e2e_coords, seed=i)
        worst["end-to-end loss"] = max(worst.get("end-to-end loss", 0.0), report.max_error)
    return [CheckResult(name, value, tol) for name, value in worst.items()]
