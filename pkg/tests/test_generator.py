import math

import numpy as np
import pytest
import torch

from setcollage.generator import (
    Generator,
    GeneratorConfig,
    assemble_input,
    blend_weights,
    colorize_weights,
    set_pool,
    warp_templates,
)
from setcollage.nn_core import identity_theta, module_gradcheck


def small_cfg(**kw) -> GeneratorConfig:
    base = dict(depth=1, base_channels=4, heads=2)
    base.update(kw)
    return GeneratorConfig(**base)


def test_assemble_input_unguided_passthrough():
    m = torch.randn(1, 5, 3, 8, 8)
    assert torch.equal(assemble_input(m, None), m)


def test_assemble_input_guided_replicates_content():
    m = torch.randn(1, 2, 3, 8, 8)
    c = torch.randn(1, 3, 8, 8)
    out = assemble_input(m, c)
    assert out.shape == (1, 2, 6, 8, 8)
    assert torch.equal(out[:, 0, 3:], c)
    assert torch.equal(out[:, 1, 3:], c)
    assert torch.equal(out[:, :, :3], m)


def test_assemble_input_commutes_with_permutation():
    m = torch.randn(1, 4, 3, 4, 4)
    c = torch.randn(1, 3, 4, 4)
    perm = torch.tensor([3, 1, 0, 2])
    assert torch.equal(assemble_input(m, c)[:, perm], assemble_input(m[:, perm], c))


def test_assemble_input_spatial_mismatch():
    with pytest.raises(ValueError, match="spatially"):
        assemble_input(torch.randn(1, 2, 3, 8, 8), torch.randn(1, 3, 4, 4))


def test_blend_weights_singleton():
    a = blend_weights(torch.randn(1, 1, 4, 4))
    assert torch.all(a == 1.0)


def test_blend_weights_values():
    logits = torch.zeros(2, 1, 1, 1)
    np.testing.assert_allclose(blend_weights(logits).flatten(), [0.5, 0.5], atol=1e-7)

    logits[0] = math.log(3.0)
    expected = np.array([math.e ** math.log(3.0), 1.0])
    expected /= expected.sum()  # = (0.75, 0.25)
    np.testing.assert_allclose(blend_weights(logits).flatten(), expected, atol=1e-6)


def test_warp_templates_identity_and_permutation():
    torch.manual_seed(0)
    m = torch.randn(3, 3, 5, 5)
    assert torch.equal(warp_templates(m, identity_theta(3)), m)

    theta = identity_theta(3) + 0.1 * torch.randn(3, 6)
    perm = torch.tensor([2, 0, 1])
    assert torch.equal(
        warp_templates(m, theta)[perm], warp_templates(m[perm], theta[perm])
    )


def test_warp_templates_one_pixel_shift():
    w = 6
    ramp = torch.arange(36, dtype=torch.float32).view(1, 1, 6, 6).repeat(1, 3, 1, 1)
    theta = torch.tensor([[1.0, 0.0, -2.0 / w, 0.0, 1.0, 0.0]])
    out = warp_templates(ramp, theta)
    expected = torch.zeros_like(ramp)
    expected[..., 1:] = ramp[..., :-1]
    assert torch.allclose(out, expected, atol=1e-5)


def test_set_pool_values():
    single = torch.randn(1, 3, 4, 4)
    assert torch.equal(set_pool(single, torch.ones(1, 4, 4)), single)

    pair = torch.tensor([-1.0, 1.0]).view(2, 1, 1, 1)
    a = torch.full((2, 1, 1), 0.5)
    assert set_pool(pair, a).item() == pytest.approx(0.0, abs=1e-7)

    vals = [0.2, -0.4, 1.0]
    weights = [0.5, 0.3, 0.2]
    trio = torch.tensor(vals).view(3, 1, 1, 1)
    a3 = torch.tensor(weights).view(3, 1, 1)
    expected = sum(v * w for v, w in zip(vals, weights))  # 0.18
    assert set_pool(trio, a3).item() == pytest.approx(expected, abs=1e-6)


def test_set_pool_rejects_bad_weights():
    t = torch.randn(2, 3, 2, 2)
    with pytest.raises(ValueError, match="non-negative"):
        set_pool(t, torch.tensor([[-0.1, 1.1]]).view(2, 1, 1).expand(2, 2, 2))
    with pytest.raises(ValueError, match="sum to 1"):
        set_pool(t, torch.full((2, 2, 2), 0.7))


def test_colorize_weights():
    a = torch.ones(1, 4, 4)
    img = colorize_weights(a, seed=7)
    colors = np.random.default_rng(7).uniform(-1, 1, (1, 3))
    for ch in range(3):
        assert torch.all(img[ch] == float(colors[0, ch]))

    onehot = torch.zeros(2, 2, 2)
    onehot[0, :, 0] = 1.0
    onehot[1, :, 1] = 1.0
    img2 = colorize_weights(onehot, seed=3)
    c2 = np.random.default_rng(3).uniform(-1, 1, (2, 3))
    np.testing.assert_allclose(img2[:, :, 0].numpy(), np.tile(c2[0][:, None], 2), atol=1e-6)
    np.testing.assert_allclose(img2[:, :, 1].numpy(), np.tile(c2[1][:, None], 2), atol=1e-6)

    half = torch.full((2, 1, 1), 0.5)
    img3 = colorize_weights(half, seed=3)
    np.testing.assert_allclose(img3.flatten().numpy(), c2.mean(axis=0), atol=1e-6)


def test_generator_k1_collage_is_template():
    torch.manual_seed(1)
    gen = Generator(small_cfg())
    m = torch.rand(1, 3, 8, 8) * 2 - 1
    out = gen(m)
    assert torch.allclose(out.collage[0], m[0], atol=1e-6)
    assert out.refined.abs().max() < 1.0
    assert out.refined.shape == (1, 3, 8, 8)


def test_generator_convexity():
    torch.manual_seed(2)
    gen = Generator(small_cfg())
    for k in (1, 2, 5):
        m = torch.rand(k, 3, 8, 8) * 2 - 1
        out = gen(m)
        assert (out.weights.sum(dim=0) - 1).abs().max() <= 1e-5
        assert out.weights.min() >= 0
        lo = m.min(dim=0).values - 1e-6
        hi = m.max(dim=0).values + 1e-6
        assert torch.all(out.collage[0] >= lo) and torch.all(out.collage[0] <= hi)


def test_generator_permutation_invariance():
    torch.manual_seed(3)
    for depth in (1, 2):
        gen = Generator(small_cfg(depth=depth, warping=True))
        m = torch.rand(4, 3, 8, 8) * 2 - 1
        out = gen(m)
        perm = torch.tensor([2, 3, 0, 1])
        pout = gen(m[perm])
        assert torch.equal(pout.weights, out.weights[perm])
        assert torch.equal(pout.theta, out.theta[perm])
        assert (pout.collage - out.collage).abs().max() <= 1e-5
        assert (pout.refined - out.refined).abs().max() <= 1e-5


def test_generator_variable_k_single_parameter_set():
    torch.manual_seed(4)
    gen = Generator(small_cfg())
    for k in (1, 2, 7):
        out = gen(torch.rand(k, 3, 8, 8) * 2 - 1)
        assert out.weights.shape == (k, 8, 8)
        assert out.refined.shape == (1, 3, 8, 8)


def test_generator_warp_head_starts_at_identity():
    torch.manual_seed(5)
    gen = Generator(small_cfg(warping=True))
    m = torch.rand(3, 3, 8, 8) * 2 - 1
    warped = gen(m, warping_enabled=True)
    plain = gen(m, warping_enabled=False)
    assert torch.equal(warped.theta, identity_theta(3))
    assert torch.equal(warped.collage, plain.collage)
    assert torch.equal(warped.refined, plain.refined)
    assert torch.equal(warped.weights, plain.weights)


def test_generator_guided_mode_contracts():
    torch.manual_seed(6)
    gen = Generator(small_cfg(guided=True))
    m = torch.rand(2, 3, 8, 8) * 2 - 1
    c = torch.rand(3, 8, 8) * 2 - 1
    out = gen(m, content=c)
    assert out.refined.shape == (1, 3, 8, 8)
    with pytest.raises(ValueError, match="content"):
        gen(m)
    with pytest.raises(ValueError, match="content"):
        Generator(small_cfg())(m, content=c)


def test_generator_warping_requires_capable_model():
    gen = Generator(small_cfg(warping=False))
    with pytest.raises(ValueError, match="warp"):
        gen(torch.rand(2, 3, 8, 8), warping_enabled=True)


def test_generator_batched_matches_unbatched():
    torch.manual_seed(7)
    gen = Generator(small_cfg())
    m = torch.rand(2, 3, 3, 8, 8) * 2 - 1
    batched = gen(m)
    for b in range(2):
        single = gen(m[b])
        assert torch.equal(batched.refined[b : b + 1], single.refined)
        assert torch.equal(batched.weights[b], single.weights)


def test_gradcheck_full_generator():
    torch.manual_seed(8)
    gen = Generator(small_cfg(base_channels=2, warping=True))
    with torch.no_grad():
        # nudge the warp head off the exact identity: bilinear sampling has
        # kinks at integer coordinates, where central differences are invalid
        gen.set_net.head.bias[1:].uniform_(-0.05, 0.05)
    m = (torch.rand(2, 3, 4, 4, dtype=torch.float64) * 2 - 1) * 0.9

    err = module_gradcheck(gen, lambda g: g(m).refined.square().sum())
    assert err <= 1e-4
