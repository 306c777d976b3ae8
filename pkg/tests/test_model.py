import numpy as np
import pytest
import torch

from mcae.config import DecoderConfig, EncoderConfig
from mcae.model import aggregate, build_model, sincos_1d, sincos_2d
from mcae.tokenizer import sample_masks, stack_plans

from oracles import central_difference

TINY_ENC = EncoderConfig(embed_dim=8, depth=1, heads=1, patch_size=4, image_size=8)
TINY_DEC = DecoderConfig(width=8, depth=1, heads=1)


def test_init_deterministic_and_truncated():
    a = build_model(TINY_ENC, TINY_DEC, seed=3)
    b = build_model(TINY_ENC, TINY_DEC, seed=3)
    for (name, p), q in zip(a.named_parameters(), b.parameters()):
        assert torch.equal(p, q), name
        assert torch.isfinite(p).all()
        assert p.abs().max() <= 4 * 0.02 or "norm" in name


def test_positional_row_zero():
    table = sincos_2d(8, 2)
    expected = np.concatenate([sincos_1d(4, np.array([0.0])), sincos_1d(4, np.array([0.0]))], axis=1)[0]
    assert np.allclose(table[0], expected)
    # position 0: sin terms 0, cos terms 1
    assert np.allclose(table[0], [0, 0, 1, 1, 0, 0, 1, 1])


def test_default_shapes():
    model = build_model(EncoderConfig(depth=1), DecoderConfig(depth=1))
    x = torch.rand(2, 3, 256, 256)
    plans = sample_masks(2, 256, 0.85, np.random.default_rng(0))
    target, pred, latent = model.forward_masked(x, plans)
    assert latent.shape == (2, 38, 192)
    assert pred.shape == (2, 256, 768) and target.shape == pred.shape


def test_visible_only_dependence():
    model = build_model(EncoderConfig(embed_dim=16, depth=2, heads=2, patch_size=4, image_size=16), TINY_DEC)
    rng = np.random.default_rng(0)
    x = torch.rand(1, 3, 16, 16)
    plans = sample_masks(1, 16, 0.5, rng)
    _, _, ref = model.forward_masked(x, plans)
    m = int(plans[0].masked_idx[0])
    r, c = divmod(m, 4)
    y = x.clone()
    y[:, :, 4 * r : 4 * r + 4, 4 * c : 4 * c + 4] = torch.rand(1, 3, 4, 4)
    _, _, out = model.forward_masked(y, plans)
    assert torch.equal(ref, out)


def test_batch_permutation_equivariance():
    model = build_model(TINY_ENC, TINY_DEC)
    x = torch.rand(3, 3, 8, 8)
    plans = sample_masks(3, 4, 0.5, np.random.default_rng(0))
    _, _, lat = model.forward_masked(x, plans)
    perm = [2, 0, 1]
    _, _, lat_p = model.forward_masked(x[perm], [plans[i] for i in perm])
    assert torch.allclose(lat_p, lat[perm], atol=1e-6)


def test_aggregate_properties():
    u, v = torch.tensor([[3.0, 4.0]]), torch.tensor([[1.0, 0.0]])
    assert torch.allclose(aggregate(u[None]), torch.tensor([[0.6, 0.8]]))
    both = torch.cat([u, v])[None]
    mean = (u + v) / 2
    assert torch.allclose(aggregate(both), mean / mean.norm())
    lat = torch.randn(2, 5, 6)
    assert torch.allclose(aggregate(lat), aggregate(lat[:, torch.randperm(5)]), atol=1e-6)
    assert torch.allclose(aggregate(lat), aggregate(3.5 * lat), atol=1e-6)


def test_classify_contract():
    model = build_model(TINY_ENC, TINY_DEC)
    x = torch.rand(1, 3, 8, 8)
    assert torch.equal(model.classify(torch.cat([x, x]))[0], model.classify(torch.cat([x, x]))[1])
    assert torch.isfinite(model.classify(torch.rand(4, 3, 8, 8))).all()
    with torch.no_grad():
        model.head.weight.zero_()
    logits = model.classify(x)
    assert torch.equal(logits, torch.zeros(1, 2))
    assert torch.allclose(torch.softmax(logits, 1), torch.full((1, 2), 0.5))


def test_mask_token_receives_gradient():
    model = build_model(TINY_ENC, TINY_DEC, dtype=torch.float64)
    x = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    plans = sample_masks(2, 4, 0.5, np.random.default_rng(0))
    from mcae.losses import reconstruction_loss

    def loss():
        target, pred, _ = model.forward_masked(x, plans)
        return reconstruction_loss(pred, target, plans)

    (num,) = central_difference(loss, [model.mask_token])
    assert num.abs().max() > 0
    model.zero_grad()
    loss().backward()
    assert model.mask_token.grad.abs().max() > 0


def test_encoder_needs_visible_tokens():
    model = build_model(TINY_ENC, TINY_DEC)
    with pytest.raises(ValueError):
        model.encode(torch.zeros(1, 0, 48), torch.zeros(1, 0, dtype=torch.long))
