import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from vidharm.losses import (LAMBDA_ADV, LAMBDA_TEMPORAL, LossWeights, adversarial_generator_loss,
                            discriminator_loss, generator_total, global_temporal_loss,
                            reconstruction_loss, regional_temporal_loss)

from oracles import central_difference, loop_adv, loop_disc, loop_mse, loop_regional


def t(a):
    """(H,W,C) or (H,W) numpy -> (1,C,H,W) float64 tensor."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    return torch.tensor(a.transpose(2, 0, 1)[None].copy())


def test_reconstruction_identity_and_offset():
    x = torch.rand(1, 3, 5, 5, dtype=torch.float64)
    assert reconstruction_loss(x, x).item() == 0.0
    assert reconstruction_loss(x + 0.1, x).item() == pytest.approx(0.01, abs=1e-12)


def test_reconstruction_dim_mismatch():
    with pytest.raises(ValueError):
        reconstruction_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 5))


@pytest.mark.parametrize("seed", range(10))
def test_losses_match_loop_oracles(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, 9, size=2)
    a, b = rng.normal(size=(h, w, 3)), rng.normal(size=(h, w, 3))
    mask = (rng.random((h, w)) < 0.5).astype(float)
    valid = (rng.random((h, w)) < 0.8).astype(float)
    assert abs(reconstruction_loss(t(a), t(b)).item() - loop_mse(a, b)) < 1e-7
    assert abs(regional_temporal_loss(t(a), t(b), t(mask), t(valid)).item()
               - loop_regional(a, b, mask, valid)) < 1e-7
    assert abs(global_temporal_loss(t(a), t(b), t(valid)).item()
               - loop_regional(a, b, np.ones((h, w)), valid)) < 1e-7
    d = [rng.normal(size=(h, w)) for _ in range(3)]
    assert abs(discriminator_loss(t(d[0]), t(d[1]), t(d[2]), t(mask)).item()
               - loop_disc(d[0], d[1], d[2], mask)) < 1e-7
    assert abs(adversarial_generator_loss(t(d[0])).item() - loop_adv(d[0])) < 1e-7


def test_regional_identical_frames_zero():
    x = torch.rand(1, 3, 6, 6)
    m = (torch.rand(1, 1, 6, 6) > 0.5).float()
    assert regional_temporal_loss(x, x, m).item() == 0.0


def test_regional_full_mask_equals_reconstruction_and_global():
    rng = np.random.default_rng(1)
    a, b = t(rng.random((6, 7, 3))), t(rng.random((6, 7, 3)))
    ones = torch.ones(1, 1, 6, 7, dtype=torch.float64)
    r = regional_temporal_loss(a, b, ones, ones).item()
    assert r == pytest.approx(reconstruction_loss(a, b).item(), abs=1e-12)
    assert r == pytest.approx(global_temporal_loss(a, b, ones).item(), abs=1e-12)
    assert global_temporal_loss(a, b).item() == pytest.approx(r, abs=1e-12)


def test_regional_empty_foreground_is_zero_with_flag():
    a, b = torch.rand(1, 3, 4, 4), torch.rand(1, 3, 4, 4)
    loss, flag = regional_temporal_loss(a, b, torch.zeros(1, 1, 4, 4), return_flag=True)
    assert loss.item() == 0.0 and flag
    _, flag = regional_temporal_loss(a, b, torch.ones(1, 1, 4, 4), return_flag=True)
    assert not flag


def test_regional_is_per_sample_mean():
    rng = np.random.default_rng(2)
    a, b = rng.random((2, 4, 4, 3)), rng.random((2, 4, 4, 3))
    m = np.zeros((2, 4, 4))
    m[0, :2] = 1
    m[1, 1:] = 1
    batch = regional_temporal_loss(torch.tensor(a.transpose(0, 3, 1, 2)), torch.tensor(b.transpose(0, 3, 1, 2)),
                                   torch.tensor(m[:, None]))
    per = [loop_regional(a[i], b[i], m[i], np.ones((4, 4))) for i in range(2)]
    assert batch.item() == pytest.approx(np.mean(per), abs=1e-12)


def test_adversarial_constants():
    assert adversarial_generator_loss(torch.zeros(1, 1, 4, 4)).item() == 0.0
    assert adversarial_generator_loss(torch.ones(1, 1, 4, 4)).item() == 1.0


def test_discriminator_fixed_points():
    m = (torch.rand(1, 1, 5, 5) > 0.5).float()
    assert discriminator_loss(m, m, torch.zeros_like(m), m).item() == 0.0
    ones = torch.ones(1, 1, 5, 5)
    assert discriminator_loss(ones, ones, ones, ones).item() == pytest.approx(1.0)


def test_generator_total_and_defaults():
    assert LossWeights().lambda1 == LAMBDA_TEMPORAL == 0.02
    assert LossWeights().lambda2 == LAMBDA_ADV == 0.01
    assert generator_total(0.3, 5.0, 7.0, LossWeights(0, 0)) == 0.3
    rng = np.random.default_rng(0)
    for _ in range(20):
        r, tl, adv, l1, l2 = rng.random(5)
        assert abs(generator_total(r, tl, adv, LossWeights(l1, l2)) - (r + l1 * tl + l2 * adv)) < 1e-9
    with pytest.raises(ValueError):
        LossWeights(-1.0, 0.0)


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def _check_grad(fn, x):
    tx = torch.tensor(x, requires_grad=True)
    fn(tx).backward()
    num = central_difference(lambda v: fn(torch.tensor(v)).item(), x)
    assert _rel(tx.grad.numpy(), num) < 1e-3


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    o, x = rng.random((1, 3, 8, 8)), rng.random((1, 3, 8, 8))
    m = torch.tensor((rng.random((1, 1, 8, 8)) > 0.4).astype(float))
    v = torch.tensor((rng.random((1, 1, 8, 8)) > 0.2).astype(float))
    d = [rng.normal(size=(1, 1, 8, 8)) for _ in range(3)]
    _check_grad(lambda a: reconstruction_loss(a, torch.tensor(x)), o)
    _check_grad(lambda a: regional_temporal_loss(a, torch.tensor(x), m, v), o)
    _check_grad(lambda a: regional_temporal_loss(torch.tensor(o), a, m, v), x)
    _check_grad(lambda a: global_temporal_loss(a, torch.tensor(x), v), o)
    _check_grad(adversarial_generator_loss, d[0])
    dd = [torch.tensor(z) for z in d]
    _check_grad(lambda a: discriminator_loss(a, dd[1], dd[2], m), d[0])
    _check_grad(lambda a: discriminator_loss(dd[0], a, dd[2], m), d[1])
    _check_grad(lambda a: discriminator_loss(dd[0], dd[1], a, m), d[2])


arrays = st.integers(0, 2 ** 31 - 1).map(np.random.default_rng)


@settings(max_examples=40, deadline=None)
@given(arrays, st.integers(1, 8), st.integers(1, 8))
def test_losses_nonnegative_and_transpose_invariant(rng, h, w):
    a, b = torch.tensor(rng.normal(size=(1, 3, h, w))), torch.tensor(rng.normal(size=(1, 3, h, w)))
    m = torch.tensor((rng.random((1, 1, h, w)) > 0.5).astype(float))
    v = torch.tensor((rng.random((1, 1, h, w)) > 0.3).astype(float))
    d = [torch.tensor(rng.normal(size=(1, 1, h, w))) for _ in range(3)]
    T = lambda z: z.transpose(2, 3)  # noqa: E731
    pairs = [
        (reconstruction_loss(a, b), reconstruction_loss(T(a), T(b))),
        (regional_temporal_loss(a, b, m, v), regional_temporal_loss(T(a), T(b), T(m), T(v))),
        (global_temporal_loss(a, b, v), global_temporal_loss(T(a), T(b), T(v))),
        (adversarial_generator_loss(d[0]), adversarial_generator_loss(T(d[0]))),
        (discriminator_loss(*d, m), discriminator_loss(*map(T, d), T(m))),
    ]
    for x, y in pairs:
        assert x.item() >= 0
        assert x.item() == pytest.approx(y.item(), rel=1e-12, abs=1e-15)
