import pytest
import torch

from vidharm.losses import discriminator_loss
from vidharm.networks import (DiscriminatorConfig, GeneratorConfig, ModelBundle, build_discriminator,
                              build_generator, count_parameters, discriminate, generate,
                              load_checkpoint, save_checkpoint)

SMALL_G = GeneratorConfig(base_channels=8, depth=3)
SMALL_D = DiscriminatorConfig(base_channels=8, depth=3)


def rand_inputs(seed, b=2, size=32):
    g = torch.Generator().manual_seed(seed)
    frame = torch.rand(b, 3, size, size, generator=g) * 2 - 1
    mask = (torch.rand(b, 1, size, size, generator=g) > 0.5).float()
    return frame, mask


def test_generator_shape_and_range():
    gen = build_generator(GeneratorConfig(base_channels=16, depth=3), seed=0)
    frame, mask = rand_inputs(0, size=64)
    raw = gen(frame, mask)
    assert raw.shape == (2, 3, 64, 64)
    assert torch.isfinite(raw).all() and raw.abs().max() <= 1
    assert count_parameters(gen) > 0


def test_same_seed_same_parameters():
    a, b = build_generator(SMALL_G, seed=3), build_generator(SMALL_G, seed=3)
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q)
    c = build_generator(SMALL_G, seed=4)
    assert any(not torch.equal(p, q) for p, q in zip(a.parameters(), c.parameters()))


def test_seeded_build_leaves_global_rng_alone():
    torch.manual_seed(0)
    x = torch.rand(1)
    torch.manual_seed(0)
    build_generator(SMALL_G, seed=9)
    assert torch.equal(torch.rand(1), x)


def test_compositing_identities():
    gen = build_generator(SMALL_G, seed=0)
    frame, _ = rand_inputs(1)
    zeros = torch.zeros(2, 1, 32, 32)
    ones = torch.ones(2, 1, 32, 32)
    with torch.no_grad():
        assert torch.equal(generate(gen, frame, zeros), frame)
        assert torch.equal(generate(gen, frame, ones), gen(frame, ones))


@pytest.mark.parametrize("seed", range(5))
def test_background_bitwise_preserved(seed):
    gen = build_generator(SMALL_G, seed=seed)
    frame, mask = rand_inputs(seed)
    with torch.no_grad():
        out = generate(gen, frame, mask)
    bg = (mask == 0).expand_as(frame)
    assert torch.equal(out[bg], frame[bg])


@pytest.mark.parametrize("size", [16, 48, 64])
def test_any_divisible_size(size):
    gen, disc = build_generator(SMALL_G, 0), build_discriminator(SMALL_D, 0)
    frame, mask = rand_inputs(0, 1, size)
    with torch.no_grad():
        assert generate(gen, frame, mask).shape == frame.shape
        d = discriminate(disc, frame)
    assert d.shape == (1, 1, size, size) and torch.isfinite(d).all()


def test_indivisible_size_rejected():
    gen, disc = build_generator(SMALL_G, 0), build_discriminator(SMALL_D, 0)
    frame, mask = rand_inputs(0, 1, 20)
    with pytest.raises(ValueError, match="pad or resize"):
        generate(gen, frame, mask)
    with pytest.raises(ValueError):
        discriminate(disc, frame)


def test_gradients_reach_every_generator_parameter():
    gen = build_generator(SMALL_G, 0)
    frame, mask = rand_inputs(2)
    generate(gen, frame, mask).pow(2).mean().backward()
    grads = [p.grad for p in gen.parameters()]
    assert all(g is not None and torch.isfinite(g).all() for g in grads)
    assert sum(float(g.abs().sum()) for g in grads) > 0


def test_resnet_generator_swap():
    cfg = GeneratorConfig(base_channels=8, arch="resnet", residual_blocks=2)
    gen = build_generator(cfg, 0)
    frame, mask = rand_inputs(0, 1, 32)
    with torch.no_grad():
        out = generate(gen, frame, mask)
    assert out.shape == frame.shape
    assert torch.equal(out[(mask == 0).expand_as(frame)], frame[(mask == 0).expand_as(frame)])


def test_invalid_configs():
    with pytest.raises(ValueError):
        GeneratorConfig(depth=0)
    with pytest.raises(ValueError):
        GeneratorConfig(norm="group")
    with pytest.raises(ValueError):
        DiscriminatorConfig(depth=0)


def test_discriminator_overfits_one_triple():
    torch.manual_seed(0)
    disc = build_discriminator(DiscriminatorConfig(base_channels=8, depth=3), seed=0)
    g = torch.Generator().manual_seed(0)
    real = torch.rand(1, 3, 32, 32, generator=g) * 2 - 1
    mask = torch.zeros(1, 1, 32, 32)
    mask[..., 8:24, 10:22] = 1
    comp = real.clone()
    comp[:, 0:1] = torch.where(mask > 0, comp[:, 0:1] * 0.5 + 0.4, comp[:, 0:1])
    opt = torch.optim.Adam(disc.parameters(), lr=2e-3)
    for _ in range(500):
        s = discriminate(disc, torch.cat([comp, real]))
        loss = discriminator_loss(s[:1], s[:1], s[1:], mask)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        s = discriminate(disc, torch.cat([comp, real]))
    err = torch.cat([(s[:1] - mask).abs(), s[1:].abs()]).mean()
    assert err < 0.05


def test_checkpoint_roundtrip(tmp_path):
    bundle = ModelBundle.create(SMALL_G, SMALL_D, seed=5)
    bundle.opt_g = torch.optim.Adam(bundle.generator.parameters())
    bundle.step, bundle.epoch, bundle.extra = 17, 2, {"batch_in_epoch": 3}
    save_checkpoint(bundle, tmp_path / "c.pt")
    back, payload = load_checkpoint(tmp_path / "c.pt")
    assert back.generator.cfg == SMALL_G and back.discriminator.cfg == SMALL_D
    assert (back.step, back.epoch, back.extra) == (17, 2, {"batch_in_epoch": 3})
    assert "opt_g" in payload and "opt_d" not in payload
    for a, b in zip(bundle.generator.state_dict().values(), back.generator.state_dict().values()):
        assert torch.equal(a, b)
    frame, mask = rand_inputs(0)
    with torch.no_grad():
        assert torch.equal(generate(bundle.generator.eval(), frame, mask),
                           generate(back.generator.eval(), frame, mask))


def test_checkpoint_version_checked(tmp_path):
    bundle = ModelBundle.create(SMALL_G, SMALL_D)
    save_checkpoint(bundle, tmp_path / "c.pt")
    payload = torch.load(tmp_path / "c.pt", weights_only=True)
    payload["version"] = "other/9"
    torch.save(payload, tmp_path / "bad.pt")
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(tmp_path / "bad.pt")
