import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from hae.losses import (
    LossWeights,
    dynamic_latent_weight,
    l2_loss,
    latent_rec_loss,
    nll_loss,
    perceptual_proxy_loss,
    total_loss,
)

D = torch.float64


def t(*v):
    return torch.tensor(v, dtype=D)


def test_nll_examples():
    assert float(nll_loss(torch.zeros(1, 4, dtype=D), [2])) == pytest.approx(math.log(4), rel=1e-14)
    assert float(nll_loss(t(2 * math.log(3), 0.0), [0])) == pytest.approx(-math.log(0.9), rel=1e-13)
    assert float(nll_loss(t(0.0, -1000.0), [0])) == 0.0


def test_nll_errors():
    with pytest.raises(ValueError):
        nll_loss(torch.zeros(0, 3, dtype=D), [])
    with pytest.raises(ValueError):
        nll_loss(torch.zeros(1, 3, dtype=D), [3])
    with pytest.raises(ValueError):
        nll_loss(torch.zeros(2, 3, dtype=D), [0])


@given(seed=st.integers(0, 2**32 - 1))
def test_nll_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    logits = torch.as_tensor(rng.normal(size=(4, 5)), dtype=D)
    labels = torch.as_tensor(rng.integers(5, size=4))
    perm = torch.as_tensor(rng.permutation(5))
    inv = torch.argsort(perm)
    assert float(nll_loss(logits[:, perm], inv[labels])) == pytest.approx(float(nll_loss(logits, labels)), rel=1e-14)


def test_l2_examples():
    assert float(l2_loss(t(1.0, 2.0), t(1.0, 2.0))) == 0.0
    assert float(l2_loss(t(1.0, 0.0), t(0.0, 0.0))) == 1.0
    assert float(l2_loss(t(3.0, 4.0), t(0.0, 0.0))) == 5.0
    assert float(l2_loss(torch.tensor([[3.0, 4.0], [0.0, 1.0]], dtype=D), torch.zeros(2, 2, dtype=D))) == 3.0
    with pytest.raises(ValueError):
        l2_loss(t(1.0), t(1.0, 2.0))


def test_latent_rec_examples():
    assert float(latent_rec_loss(t(1.0, 2.0, 3.0), t(1.0, 2.0, 3.0))) == 0.0
    assert float(latent_rec_loss(t(0.0, 1.0, 0.0), t(0.0, 0.0, 0.0))) == 1.0
    assert float(latent_rec_loss(t(1.0, 1.0), t(0.0, 0.0))) == pytest.approx(math.sqrt(2), rel=1e-15)


def test_perceptual_proxy(rng):
    x = torch.as_tensor(rng.normal(size=(3, 6)), dtype=D)
    y = torch.as_tensor(rng.normal(size=(3, 6)), dtype=D)
    probe = torch.as_tensor(rng.normal(size=(4, 6)), dtype=D)
    assert float(perceptual_proxy_loss(x, x, probe)) == 0.0
    assert float(perceptual_proxy_loss(x, y, None)) == float(l2_loss(x, y))
    brute = np.mean([np.linalg.norm(np.where(a > 0, a, 0.2 * a) - np.where(b > 0, b, 0.2 * b))
                     for a, b in zip(x.numpy() @ probe.numpy().T, y.numpy() @ probe.numpy().T)])
    got = float(perceptual_proxy_loss(x, y, probe))
    assert got > 0 and got == pytest.approx(brute, rel=1e-13)


def test_total_loss_examples():
    assert float(total_loss(0.0, 0.0, 0.0, 0.0).total) == 0.0
    assert float(total_loss(1.0, 1.0, 1.0, 1.0, LossWeights(1.0, 0.5, 0.3)).total) == pytest.approx(2.8, abs=1e-15)
    assert float(total_loss(0.7, 2.0, 3.0, 4.0, LossWeights(0.0, 0.0, 0.0)).total) == 0.7


@given(parts=st.lists(st.floats(0, 100), min_size=4, max_size=4),
       lam=st.lists(st.floats(0, 10), min_size=3, max_size=3))
def test_total_is_exact_weighted_sum(parts, lam):
    w = LossWeights(*lam)
    out = total_loss(*parts, w)
    l2, perc, rec, hyp = (torch.tensor(p, dtype=D) for p in parts)
    assert torch.equal(out.total, l2 + w.perceptual * perc + w.latent * rec + w.hyper * hyp)
    assert all(float(v) >= 0 for v in (out.l2, out.perceptual_proxy, out.latent_rec, out.hyper, out.total))


def test_total_loss_rejects_non_finite():
    with pytest.raises(ValueError):
        total_loss(float("nan"), 0.0, 0.0, 0.0)


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(perceptual=-1.0)
    with pytest.raises(ValueError):
        LossWeights(hyper=float("inf"))


def test_dynamic_latent_rule():
    assert dynamic_latent_weight(1.0) == 0.6
    assert dynamic_latent_weight(0.3) == pytest.approx(0.6)
    assert dynamic_latent_weight(0.2) == pytest.approx(0.4)
    assert dynamic_latent_weight(0.0) == 0.3
    out = total_loss(1.0, 0.0, 0.2, 0.0, dynamic_latent=True)
    assert out.latent_weight == pytest.approx(0.4)
    assert float(out.total) == pytest.approx(1.0 + 0.4 * 0.2)
    assert total_loss(1.0, 0.0, 0.2, 0.0).latent_weight == 0.5


def test_zero_difference_has_finite_gradient():
    x = torch.ones(2, 3, dtype=D, requires_grad=True)
    l2_loss(x, torch.ones(2, 3, dtype=D)).backward()
    assert torch.isfinite(x.grad).all()
