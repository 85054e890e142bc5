import csv

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from hae.checks import sample_ball
from hae.edit import (
    PerturbSpec,
    check_direction,
    interpolate,
    perturb,
    perturb_geodesic,
    perturb_tangent,
    random_direction,
    transfer_edit,
    write_codes_csv,
)
from hae.geometry import PoincareBall

BALL = PoincareBall()
D = torch.float64
seeds = st.integers(0, 2**32 - 1)


def pts(seed, n=2, dim=5, r=5.5):
    return sample_ball(np.random.default_rng(seed), n, dim, r)


def test_perturb_spec_validation():
    assert PerturbSpec(3.0).mode == "geodesic"
    assert PerturbSpec(3.0, t=None, s=1.0).mode == "tangent"
    for bad in (dict(t=None), dict(t=0.5, s=1.0), dict(t=1.5), dict(t=None, s=-1.0)):
        with pytest.raises(ValueError):
            PerturbSpec(3.0, **bad)
    with pytest.raises(ValueError):
        PerturbSpec(-1.0)


def test_interpolate_two_steps_is_endpoints():
    a, b = pts(0)
    out = interpolate(BALL, a, b, 2)
    assert len(out) == 2 and torch.equal(out[0], a) and torch.equal(out[1], b)


def test_interpolate_constant_and_errors():
    a, _ = pts(1)
    out = interpolate(BALL, a, a, 5)
    assert all(torch.allclose(p, a, atol=1e-15) for p in out)
    with pytest.raises(ValueError):
        interpolate(BALL, a, a, 1)
    with pytest.raises(ValueError):
        interpolate(BALL, a, a[:3], 3)


@given(seed=seeds, steps=st.integers(2, 12))
def test_interpolate_constant_speed(seed, steps):
    a, b = pts(seed)
    out = interpolate(BALL, a, b, steps)
    assert torch.equal(out[0], a) and torch.equal(out[-1], b)
    gaps = [float(BALL.distance(p, q)) for p, q in zip(out, out[1:])]
    total = float(BALL.distance(a, b))
    assert max(abs(g - total / (steps - 1)) for g in gaps) <= 1e-8


def test_perturb_geodesic_endpoints(rng):
    z, pool = pts(2, 1)[0], pts(3, 6)
    r = 4.0
    assert torch.equal(perturb_geodesic(BALL, z, pool, 0.0, r, np.random.default_rng(0)),
                       BALL.rescale_to_radius(z, r))
    ref_idx = int(np.random.default_rng(0).integers(6))
    assert torch.equal(perturb_geodesic(BALL, z, pool, 1.0, r, np.random.default_rng(0)),
                       BALL.rescale_to_radius(pool[ref_idx], r))


@given(seed=seeds, r=st.floats(0.5, 6.0))
def test_midpoint_perturbation_contracts(seed, r):
    z, ref = pts(seed)
    out = perturb_geodesic(BALL, z, ref.unsqueeze(0), 0.5, r, np.random.default_rng(0))
    z_r, ref_r = BALL.rescale_to_radius(z, r), BALL.rescale_to_radius(ref, r)
    assert float(BALL.radius(out)) <= r + 1e-9
    if float(BALL.distance(z_r, ref_r)) > 1e-6:
        assert float(BALL.radius(out)) < r


def test_perturb_errors():
    z = pts(4, 1)[0]
    with pytest.raises(ValueError):
        perturb_geodesic(BALL, z, torch.zeros(0, 5, dtype=D), 0.2, 3.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        perturb_geodesic(BALL, torch.zeros(5, dtype=D), pts(5, 3), 0.2, 3.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        perturb_tangent(BALL, torch.zeros(5, dtype=D), random_direction(5, 0), 1.0, 3.0)
    with pytest.raises(ValueError):
        perturb_tangent(BALL, z, torch.ones(5, dtype=D), 1.0, 3.0)


def test_perturb_is_seed_deterministic():
    z, pool = pts(6, 1)[0], pts(7, 20)
    spec = PerturbSpec(3.0, t=0.4, seed=9)
    assert torch.equal(perturb(BALL, z, pool, spec), perturb(BALL, z, pool, spec))
    assert not torch.equal(perturb(BALL, z, pool, spec), perturb(BALL, z, pool, PerturbSpec(3.0, t=0.4, seed=10)))
    tangent = PerturbSpec(3.0, t=None, s=0.7, seed=2)
    assert torch.equal(perturb(BALL, z, pool, tangent), perturb_tangent(BALL, z, random_direction(5, 2), 0.7, 3.0))


def test_tangent_zero_step_is_rescale():
    z = pts(8, 1)[0]
    out = perturb_tangent(BALL, z, random_direction(5, 1), 0.0, 2.5)
    assert torch.allclose(out, BALL.rescale_to_radius(z, 2.5), atol=1e-15)


def test_tangent_aligned_direction_keeps_direction():
    z = pts(9, 1)[0]
    u = BALL.logmap0(z) / BALL.logmap0(z).norm()
    out = perturb_tangent(BALL, z, u, 0.8, 3.3)
    assert torch.allclose(out / out.norm(), z / z.norm(), atol=1e-14)


def test_random_direction_unit():
    u = random_direction(7, 3)
    assert abs(float(u.norm()) - 1) <= 1e-10
    assert torch.equal(u, random_direction(7, 3))
    check_direction(u)


@given(seed=seeds, s=st.floats(0.0, 3.0), r=st.floats(0.0, 6.2))
def test_transfer_edit_radius_contract(seed, s, r):
    codes = list(pts(seed, 4))
    u = random_direction(5, seed % 1000)
    out = transfer_edit(BALL, u, s, r, codes)
    assert len(out) == 4
    for z in out:
        assert abs(float(BALL.radius(z)) - r) <= 1e-8
        assert float(z.norm()) < 1
    assert torch.equal(transfer_edit(BALL, u, s, r, codes[:1])[0], perturb_tangent(BALL, codes[0], u, s, r))
    with pytest.raises(ValueError):
        transfer_edit(BALL, u, s, r, [])


def test_write_codes_csv(tmp_path):
    rows = [(3, 0, [0.1, 0.2]), (3, 0.5, [1 / 3, -0.25])]
    path = tmp_path / "codes.csv"
    write_codes_csv(path, rows, decoded=[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    with open(path) as fh:
        data = list(csv.reader(fh))
    assert data[0] == ["id", "t_or_step", "z0", "z1", "x0", "x1", "x2"]
    assert data[2][:4] == ["3", "0.5", "0.33333333333333331", "-0.25"]
    write_codes_csv(path, rows)
    with open(path) as fh:
        assert next(csv.reader(fh)) == ["id", "t_or_step", "z0", "z1"]
