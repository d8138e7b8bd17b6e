import pytest
import torch

from setcollage.discriminator import PatchDiscriminator
from setcollage.nn_core import module_gradcheck


def test_output_is_spatial_map():
    torch.manual_seed(0)
    disc = PatchDiscriminator(depth=6, base_channels=1)
    out = disc(torch.randn(1, 3, 256, 256))
    assert out.shape == (1, 1, 4, 4)

    disc2 = PatchDiscriminator(depth=2, base_channels=4)
    assert disc2(torch.randn(1, 3, 16, 16)).shape == (1, 1, 4, 4)


def test_zero_parameters_give_zero_logits():
    disc = PatchDiscriminator(depth=3, base_channels=2)
    with torch.no_grad():
        for p in disc.parameters():
            p.zero_()
    assert torch.all(disc(torch.randn(1, 3, 32, 32)) == 0.0)


def test_first_layer_skips_normalization():
    disc = PatchDiscriminator(depth=3, base_channels=2)
    assert disc.blocks[0].norm is False
    assert all(b.norm for b in list(disc.blocks)[1:])


def test_locality_of_logits():
    # instance norm mixes global statistics in, so the exact-locality
    # contract is stated (and checked) for the norm-free variant
    torch.manual_seed(1)
    disc = PatchDiscriminator(depth=2, base_channels=4, norm=False)
    rf = disc.receptive_field()
    assert rf == 29  # 5x5 stride-2, 5x5 stride-2, 5x5 head

    x = torch.randn(1, 3, 64, 64)
    base = disc(x)
    # a pixel outside logit (0,0)'s field: logit centers advance by 4 px,
    # so (63, 63) is far beyond rf/2 from the (0,0) logit
    poked = x.clone()
    poked[0, :, 63, 63] += 10.0
    out = disc(poked)
    assert torch.equal(out[0, 0, 0, 0], base[0, 0, 0, 0])
    assert not torch.equal(out[0, 0, -1, -1], base[0, 0, -1, -1])

    # gradient support of one logit stays inside its receptive field
    x.requires_grad_(True)
    disc(x)[0, 0, 0, 0].backward()
    grad = x.grad[0].abs().sum(dim=0)
    assert grad[:, rf:].max() == 0.0 and grad[rf:, :].max() == 0.0


def test_divisibility_error():
    disc = PatchDiscriminator(depth=3, base_channels=2)
    with pytest.raises(ValueError, match="divisible"):
        disc(torch.randn(1, 3, 20, 20))


def test_activation_configurable():
    torch.manual_seed(2)
    x = torch.randn(1, 3, 16, 16)
    lrelu = PatchDiscriminator(depth=2, base_channels=4, activation="lrelu")
    torch.manual_seed(2)
    relu = PatchDiscriminator(depth=2, base_channels=4, activation="relu")
    assert not torch.equal(lrelu(x), relu(x))


def test_gradcheck_discriminator():
    torch.manual_seed(3)
    disc = PatchDiscriminator(depth=2, base_channels=2)
    x = torch.randn(1, 3, 16, 16, dtype=torch.float64)
    err = module_gradcheck(disc, lambda d: d(x).square().sum())
    assert err <= 1e-4
