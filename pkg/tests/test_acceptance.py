"""Acceptance criteria 1-8, each at its stated tolerance.

Every test records one PASS/FAIL line, printed in an "acceptance criteria"
section at the end of the pytest run.
"""

import hashlib
import math
import time

import numpy as np
import pytest
import torch

from hae.checks import grad_suite, identity_suite
from hae.cli import main
from hae.edit import interpolate, perturb_tangent, random_direction, transfer_edit
from hae.evaluation import SweepConfig, is_monotone, radius_structure, sweep
from hae.geometry import PoincareBall
from hae.layers import mlr_logits
from hae.model import HaeModel
from hae.train import default_model_config

D = torch.float64
SLACK = 0.03
pytestmark = pytest.mark.slow


def _worst(results):
    failed = [r for r in results if not r.passed]
    if failed:
        return "; ".join(r.line() for r in failed)
    worst = max(results, key=lambda r: r.worst / r.tol if r.tol else 0.0)
    return f"worst {worst.name} {worst.worst:.2e} (tol {worst.tol:.0e})"


def test_criterion_1_identity_suite(report_criterion):
    start = time.perf_counter()
    results = identity_suite(n_pairs=10_000, dim=16, max_radius=6.0)
    seconds = time.perf_counter() - start
    ok = all(r.passed for r in results) and seconds <= 10
    assert report_criterion(1, ok, f"{_worst(results)}; {seconds:.1f}s")


def test_criterion_2_closed_forms(report_criterion):
    ball = PoincareBall()
    ln3 = math.log(3)
    checks = {
        "collinear add": (float(ball.mobius_add(torch.tensor([0.3, 0.0], dtype=D),
                                                torch.tensor([0.4, 0.0], dtype=D))[0]), 0.625),
        "scalar doubling": (float(ball.mobius_scalar_mul(2.0, torch.tensor([0.5, 0.0], dtype=D))[0]), 0.8),
        "distance from origin": (float(ball.distance(torch.zeros(2, dtype=D), torch.tensor([0.5, 0.0], dtype=D))),
                                 ln3),
        "mlr logit": (float(mlr_logits(ball, torch.zeros(1, 2, dtype=D), torch.tensor([[1.0, 0.0]], dtype=D),
                                       torch.tensor([0.5, 0.0], dtype=D))[0]), 2 * ln3),
        "r_max": (ball.max_radius, math.log((2 - 4e-3) / 4e-3)),
        "r_max 6.2126": (round(ball.max_radius, 4), 6.2126),
    }
    errors = {k: abs(got - want) / abs(want) for k, (got, want) in checks.items()}
    worst = max(errors, key=errors.get)
    ok = all(e <= 1e-9 for e in errors.values())
    assert report_criterion(2, ok, f"worst {worst} rel {errors[worst]:.1e}")


def test_criterion_3_gradient_suite(report_criterion):
    results = grad_suite(n_configs=100, limit=5.5, h=1e-6, tol=1e-4)
    ok = all(r.passed for r in results)
    assert report_criterion(3, ok, _worst(results))


def test_criterion_4_desk_scale_training(default_run, report_criterion):
    ds, model = default_run["dataset"], default_run["model"]
    seen = ds.seen()
    labels = model.class_index(seen.classes)
    with torch.no_grad():
        initial = float(HaeModel(default_model_config(ds)).loss(seen.features, labels).l2)
        final = float(model.loss(seen.features, labels).l2)
    accuracy = default_run["ckpt"].metrics["heldout_accuracy"]
    seconds = default_run["seconds"]
    ok = accuracy >= 0.90 and final <= 0.1 * initial and seconds <= 600
    detail = (f"held-out accuracy {accuracy:.3f} (>= 0.90); l2 {final:.4f} vs 0.1 x initial "
              f"{0.1 * initial:.4f}; {seconds:.0f}s")
    assert report_criterion(4, ok, detail)


def test_criterion_5_hierarchy_structure(default_run, report_criterion):
    report = radius_structure(default_run["model"], default_run["dataset"])
    frac = report["contracted_fraction"]
    ok = frac is not None and frac >= 0.90
    assert report_criterion(5, ok, f"midpoint below instance radius for {frac:.3f} of classes")


def test_criterion_6_radius_sweep_trend(default_run, default_oracle, report_criterion):
    model = default_run["model"]
    config = SweepConfig()
    assert config.n_samples >= 256
    radii = [f * model.ball.max_radius for f in (1.0, 0.85, 0.7, 0.55)]
    report = sweep(model, default_oracle, default_run["dataset"], radii, config)
    ok = (is_monotone(report.preservation, increasing=False, slack=SLACK)
          and is_monotone(report.diversity, increasing=True, slack=SLACK))
    detail = ("preservation " + " ".join(f"{p:.3f}" for p in report.preservation)
              + "; diversity " + " ".join(f"{d:.3f}" for d in report.diversity))
    assert report_criterion(6, ok, detail)


def test_criterion_7_editing_contracts(default_run, report_criterion):
    model, ds = default_run["model"], default_run["dataset"]
    ball = model.ball
    with torch.no_grad():
        z = model.encode(ds.features)[1]
    rng = np.random.default_rng(0)
    endpoint_ok, step_err, radius_err = True, 0.0, 0.0
    for _ in range(50):
        i, j = rng.integers(len(ds), size=2)
        steps = int(rng.integers(2, 12))
        path = interpolate(ball, z[i], z[j], steps)
        endpoint_ok &= torch.equal(path[0], z[i]) and torch.equal(path[-1], z[j])
        gaps = torch.stack([ball.distance(p, q) for p, q in zip(path, path[1:])])
        step_err = max(step_err, float((gaps - gaps.mean()).abs().max()))
    for k in range(50):
        u = random_direction(z.shape[-1], k)
        r = float(rng.uniform(0, ball.max_radius))
        s = float(rng.uniform(0, 3))
        rows = rng.integers(len(ds), size=4)
        edited = transfer_edit(ball, u, s, r, list(z[rows])) + [perturb_tangent(ball, z[rows[0]], u, s, r)]
        radius_err = max(radius_err, max(abs(float(ball.radius(e)) - r) for e in edited))
    ok = endpoint_ok and step_err <= 1e-8 and radius_err <= 1e-8
    detail = f"endpoints exact: {endpoint_ok}; step spread {step_err:.1e}; radius error {radius_err:.1e}"
    assert report_criterion(7, ok, detail)


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_criterion_8_determinism(tmp_path, report_criterion):
    digests = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        assert main(["gen-data", "--out", str(d / "data.csv"), "--quiet"]) == 0
        assert main(["train", "--data", str(d / "data.csv"), "--out", str(d / "ck.json"), "--quiet"]) == 0
        assert main(["eval", "--ckpt", str(d / "ck.json"), "--data", str(d / "data.csv"),
                     "--out", str(d / "metrics.json"), "--quiet"]) == 0
        digests.append({name: _sha(d / name) for name in ("data.csv", "ck.json", "metrics.json")})
    ok = digests[0] == digests[1]
    differing = [k for k in digests[0] if digests[0][k] != digests[1][k]]
    assert report_criterion(8, ok, "dataset, checkpoint and metrics hashes "
                            + ("identical" if ok else f"differ: {differing}"))
