import numpy as np
import pytest
import torch

from conftest import GRAD_RTOL
from fetnet.fet import resize_confidence
from fetnet.model import FETGenerator, GeneratorConfig, count_parameters, threshold_mask


@pytest.fixture(scope="module")
def toy():
    torch.manual_seed(0)
    return FETGenerator(GeneratorConfig.toy()).eval()


def test_pyramid_scales(toy):
    for h, w in ((64, 64), (32, 48)):
        pyr = toy.encode(torch.rand(1, 3, h, w))
        assert [p.shape[-2:] for p in pyr] == [(h // s, w // s) for s in (1, 2, 4, 8, 16)]
        assert [p.shape[1] for p in pyr] == list(toy.config.widths)


def test_indivisible_input_rejected(toy):
    with pytest.raises(ValueError, match="divisible by 16"):
        toy(torch.rand(1, 3, 40, 64))


def test_zero_image_finite():
    torch.manual_seed(0)
    gen = FETGenerator()
    for m in gen.modules():
        if getattr(m, "bias", None) is not None:
            torch.nn.init.zeros_(m.bias)
    out, c = gen(torch.zeros(1, 3, 32, 32))
    assert torch.isfinite(out).all() and torch.isfinite(c).all()


def test_forward_contract(toy):
    x = torch.rand(2, 3, 64, 64)
    out, c = toy(x)
    assert out.shape == x.shape and out.min() >= 0 and out.max() <= 1
    assert c.shape == (2, 1, 16, 16) and c.min() >= 0 and c.max() <= 1
    up = resize_confidence(c, (64, 64))
    assert up.shape == (2, 1, 64, 64) and up.min() >= 0 and up.max() <= 1
    again, _ = toy(x)
    assert torch.equal(out, again)


def test_plain_skips_differ_from_full():
    torch.manual_seed(0)
    full = FETGenerator()
    plain = FETGenerator(GeneratorConfig(placement=("plain",) * 5, aggregate_fet=False))
    plain.load_state_dict(full.state_dict(), strict=False)
    x = torch.rand(1, 3, 64, 64)
    assert not torch.equal(full(x)[0], plain(x)[0])


def test_zero_confidence_makes_fem_identity(toy):
    x = torch.rand(1, 3, 64, 64)
    _, _, feats = toy(x, confidence_override=torch.zeros(1, 1, 16, 16), return_features=True)
    for i in range(1, 6):
        layer = feats[f"layer{i}"]
        assert torch.equal(layer["erased"], layer["input"])
    assert [feats[f"layer{i}"]["kind"] for i in range(1, 6)] == ["texture"] * 3 + ["structure"] * 2


def test_hard_mask_blocks_segmentation_gradient():
    torch.manual_seed(0)
    gen = FETGenerator(GeneratorConfig(hard_mask=True))
    out, _ = gen(torch.rand(1, 3, 32, 32))
    out.mean().backward()
    seg_grads = [p.grad for p in gen.segmenter.parameters()]
    assert all(g is None or torch.count_nonzero(g) == 0 for g in seg_grads)


def test_threshold_mask():
    assert threshold_mask(torch.full((1, 1, 4, 4), 0.9)).sum() == 16
    assert threshold_mask(torch.full((1, 1, 4, 4), 0.1)).sum() == 0
    c = torch.rand(1, 1, 16, 16, generator=torch.Generator().manual_seed(0))
    up = resize_confidence(c, (64, 64))
    brute = sum(1 for i in range(64) for j in range(64) if up[0, 0, i, j] > 0.3)
    m = threshold_mask(c, 0.3, (64, 64))
    assert m.shape == (1, 1, 64, 64) and int(m.sum()) == brute
    for theta in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            threshold_mask(c, theta)


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        GeneratorConfig(widths=(8, 16, 32, 64))
    with pytest.raises(ValueError):
        GeneratorConfig(placement=("texture",) * 4 + ("bogus",))
    cfg = GeneratorConfig.full()
    assert GeneratorConfig.from_dict(cfg.to_dict()) == cfg


def test_parameter_counts():
    assert count_parameters(FETGenerator(GeneratorConfig.toy())) == 477_190
    assert count_parameters(FETGenerator(GeneratorConfig.full())) == 7_539_854


def test_forward_parameter_gradients_match_finite_differences():
    torch.manual_seed(0)
    cfg = GeneratorConfig(widths=(4, 4, 4, 4, 4), aggregate_width=3, se_reduction=2)
    gen = FETGenerator(cfg).double()
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    w = torch.rand(1, 3, 16, 16, dtype=torch.float64)

    def loss():
        out, c = gen(x)
        return (out * w).sum() + c.sum()

    params = dict(gen.named_parameters())
    grads = torch.autograd.grad(loss(), list(params.values()))
    rng = np.random.default_rng(0)
    eps = 1e-6
    analytic, numeric = [], []
    with torch.no_grad():
        for p, g in zip(params.values(), grads):
            flat, gflat = p.view(-1), g.reshape(-1)
            for i in rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False):
                orig = flat[i].item()
                flat[i] = orig + eps
                hi = loss().item()
                flat[i] = orig - eps
                lo = loss().item()
                flat[i] = orig
                numeric.append((hi - lo) / (2 * eps))
                analytic.append(gflat[i].item())
    a, n = np.array(analytic), np.array(numeric)
    assert np.abs(a - n).max() / max(np.abs(a).max(), np.abs(n).max()) <= GRAD_RTOL
