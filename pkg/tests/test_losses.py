import math

import numpy as np
import pytest
import torch

from setcollage.losses import (
    LossWeights,
    adversarial_loss_d,
    adversarial_loss_g,
    content_loss,
    entropy_loss,
    generator_total_loss,
    max_usage_loss,
    tv_loss,
)
from setcollage.nn_core import gradcheck, ordered_softmax


def test_adversarial_d_values():
    zeros = torch.zeros(1, 1, 2, 2)
    assert adversarial_loss_d(zeros, zeros).item() == pytest.approx(2 * math.log(2), abs=1e-6)

    big = torch.full((1, 1, 1, 1), 100.0)
    assert adversarial_loss_d(big, -big).item() == pytest.approx(0.0, abs=1e-6)

    one = torch.ones(1, 1, 1, 1)
    expected = 2 * math.log(1 + math.exp(-1.0))  # softplus(-1) twice
    assert adversarial_loss_d(one, -one).item() == pytest.approx(expected, abs=1e-6)


def test_adversarial_d_symmetric_at_zero_logits():
    torch.manual_seed(0)
    r, f = torch.randn(1, 1, 3, 3), torch.randn(1, 1, 3, 3)
    assert adversarial_loss_d(r, f).item() != pytest.approx(
        adversarial_loss_d(f, r).item(), abs=1e-9
    ) or torch.equal(r, f)
    zeros = torch.zeros(1, 1, 3, 3)
    assert adversarial_loss_d(zeros, zeros).item() == pytest.approx(2 * math.log(2), abs=1e-7)


def test_adversarial_d_shape_and_finite_checks():
    with pytest.raises(ValueError, match="shape"):
        adversarial_loss_d(torch.zeros(1, 1, 2, 2), torch.zeros(1, 1, 3, 3))
    bad = torch.tensor([[float("inf")]])
    with pytest.raises(ValueError, match="non-finite"):
        adversarial_loss_d(bad, bad)


def test_adversarial_g_values():
    assert adversarial_loss_g(torch.zeros(2, 2)).item() == pytest.approx(math.log(2), abs=1e-6)
    assert adversarial_loss_g(torch.full((1,), 100.0)).item() == pytest.approx(0.0, abs=1e-6)
    expected = math.log(1 + math.e)  # softplus(1)
    assert adversarial_loss_g(torch.full((1,), -1.0)).item() == pytest.approx(expected, abs=1e-6)


def test_content_loss_values():
    x = torch.rand(1, 3, 4, 4)
    for levels in (0, 1, 2):
        assert content_loss(x, x, levels).item() == 0.0

    zeros, ones = torch.zeros(1, 1, 2, 2), torch.ones(1, 1, 2, 2)
    assert content_loss(zeros, ones, 0).item() == pytest.approx(1.0, abs=1e-7)

    ic = torch.zeros(1, 1, 2, 2)
    im = torch.tensor([[1.0, 0.0], [0.0, 1.0]]).view(1, 1, 2, 2)
    # one pooling: means 0 and 0.5, squared difference 0.25
    assert content_loss(ic, im, 1).item() == pytest.approx(0.25, abs=1e-7)


def test_content_loss_symmetric():
    torch.manual_seed(1)
    a, b = torch.randn(1, 3, 8, 8), torch.randn(1, 3, 8, 8)
    assert content_loss(a, b, 2).item() == pytest.approx(content_loss(b, a, 2).item(), rel=1e-7)
    with pytest.raises(ValueError):
        content_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 8, 8))


def test_entropy_values_and_bounds():
    onehot = torch.zeros(3, 2, 2)
    onehot[1] = 1.0
    assert abs(entropy_loss(onehot).item()) <= 1e-6

    uniform = torch.full((2, 4, 4), 0.5)
    assert entropy_loss(uniform).item() == pytest.approx(math.log(2), abs=1e-6)

    skew = torch.tensor([0.9, 0.1]).view(2, 1, 1)
    expected = -(0.9 * math.log(0.9) + 0.1 * math.log(0.1))  # ~0.3251
    assert entropy_loss(skew).item() == pytest.approx(expected, abs=1e-4)
    assert expected == pytest.approx(0.3251, abs=1e-4)

    torch.manual_seed(2)
    for k in (1, 2, 5):
        a = ordered_softmax(torch.randn(k, 6, 6) * 3, dim=0)
        val = entropy_loss(a).item()
        assert -1e-6 <= val <= math.log(max(k, 1)) + 1e-6


def test_tv_values():
    assert tv_loss(torch.full((3, 5, 5), 1 / 3)).item() == 0.0
    assert tv_loss(torch.rand(2, 1, 1)).item() == 0.0

    checker = torch.tensor([[0.0, 1.0], [1.0, 0.0]]).view(1, 2, 2)
    assert tv_loss(checker).item() == pytest.approx(1.0, abs=1e-7)

    torch.manual_seed(3)
    a = ordered_softmax(torch.randn(3, 4, 4), dim=0)
    assert tv_loss(a).item() >= 0.0


def test_max_usage_values():
    assert max_usage_loss(torch.ones(1, 3, 3)).item() == pytest.approx(1.0)
    assert max_usage_loss(torch.full((4, 2, 2), 0.25)).item() == pytest.approx(0.25)

    a = torch.zeros(2, 2, 2)
    a[0] = torch.tensor([[1.0, 1.0], [0.5, 0.0]])
    a[1] = 1 - a[0]
    expected = max(a[0].sum().item(), a[1].sum().item()) / 4  # 2.5 / 4
    assert expected == pytest.approx(0.625)
    assert max_usage_loss(a).item() == pytest.approx(expected, abs=1e-7)

    torch.manual_seed(4)
    for k in (1, 2, 5):
        w = ordered_softmax(torch.randn(k, 4, 4), dim=0)
        val = max_usage_loss(w).item()
        assert 1 / k - 1e-6 <= val <= 1 + 1e-6


def test_generator_total_loss_composition():
    adv = torch.tensor(0.8)
    zero = torch.tensor(0.0)
    w0 = LossWeights(content=0.0, tv=0.0, entropy=0.0, max_usage=0.0)
    assert generator_total_loss(adv, zero, zero, zero, zero, w0).item() == pytest.approx(0.8)

    ent = torch.tensor(0.3)
    lo = generator_total_loss(adv, zero, ent, zero, zero, LossWeights(entropy=0.5)).item()
    hi = generator_total_loss(adv, zero, ent, zero, zero, LossWeights(entropy=5.0)).item()
    assert hi - 0.8 == pytest.approx(10 * (lo - 0.8), rel=1e-6)

    with pytest.raises(ValueError):
        LossWeights(tv=-1.0)


def test_gradcheck_all_losses():
    torch.manual_seed(5)
    shape = (2, 2, 2)

    def through_softmax(loss):
        def op(vec):
            return loss(ordered_softmax(vec.view(shape), dim=0))

        return op

    logits = torch.randn(8)
    assert gradcheck(through_softmax(entropy_loss), logits) <= 1e-4
    assert gradcheck(through_softmax(tv_loss), logits) <= 1e-4
    # keep the per-plane sums well separated so the max has no ties
    skewed = torch.tensor([2.0, 1.8, 2.2, 1.9, -2.0, -1.7, -2.1, -1.6])
    assert gradcheck(through_softmax(max_usage_loss), skewed) <= 1e-4

    assert gradcheck(lambda v: adversarial_loss_g(v), torch.randn(4)) <= 1e-4
    assert (
        gradcheck(lambda v: adversarial_loss_d(v[:4].view(1, 4), v[4:].view(1, 4)), torch.randn(8))
        <= 1e-4
    )
    x_target = torch.rand(1, 1, 4, 4, dtype=torch.float64)
    assert (
        gradcheck(lambda v: content_loss(x_target, v.view(1, 1, 4, 4), 1), torch.randn(16))
        <= 1e-4
    )


def test_losses_accept_batched_weights():
    torch.manual_seed(6)
    a = ordered_softmax(torch.randn(3, 2, 4, 4), dim=1)
    per_sample = [entropy_loss(a[i]).item() for i in range(3)]
    assert entropy_loss(a).item() == pytest.approx(np.mean(per_sample), rel=1e-6)
    usage = [max_usage_loss(a[i]).item() for i in range(3)]
    assert max_usage_loss(a).item() == pytest.approx(np.mean(usage), rel=1e-6)
