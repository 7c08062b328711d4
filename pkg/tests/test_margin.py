import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from synthface.margin import ArcFaceHead, MarginConfig, arcface_logits, arcface_loss


def oracle_logits(emb, w, labels, m, s):
    """Angle-space reference: arccos, add the margin, cos back."""
    emb = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    w = w / np.linalg.norm(w, axis=1, keepdims=True)
    cos = np.clip(emb @ w.T, -1.0, 1.0)
    out = cos.copy()
    for i, y in enumerate(labels):
        theta = math.acos(cos[i, y])
        if theta + m <= math.pi:
            out[i, y] = math.cos(theta + m)
        else:
            out[i, y] = cos[i, y] - m * math.sin(m)
    return out * s


def oracle_ce(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -np.mean(logp[np.arange(len(labels)), labels])


def unit(x):
    return F.normalize(x, dim=1)


def random_case(rng, b=8, c=10, d=16):
    emb = rng.normal(size=(b, d))
    w = rng.normal(size=(c, d))
    labels = rng.integers(0, c, size=b)
    return emb, w, labels


def test_logits_match_angle_oracle():
    rng = np.random.default_rng(1)
    for _ in range(10):
        emb, w, labels = random_case(rng)
        got = arcface_logits(torch.tensor(emb), torch.tensor(w), torch.tensor(labels), normalize=True)
        np.testing.assert_allclose(got.numpy(), oracle_logits(emb, w, labels, 0.5, 64.0), atol=1e-9)


def test_target_at_zero_angle():
    e = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    w = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    out = arcface_logits(e, w, torch.tensor([0]))
    assert out[0, 0].item() == pytest.approx(64 * math.cos(0.5), abs=1e-9)
    assert out[0, 0].item() == pytest.approx(56.1652, abs=1e-4)
    assert out[0, 1].item() == 0.0


def test_target_at_sixty_degrees():
    t = math.pi / 3
    e = torch.tensor([[math.cos(t), math.sin(t)]], dtype=torch.float64)
    w = torch.tensor([[1.0, 0.0], [1.0, 0.0]], dtype=torch.float64)
    out = arcface_logits(e, w, torch.tensor([0]))
    assert out[0, 0].item() == pytest.approx(64 * math.cos(t + 0.5), abs=1e-9)
    assert out[0, 0].item() == pytest.approx(1.510, abs=1e-3)
    assert out[0, 1].item() == pytest.approx(32.0, abs=1e-9)


def test_fallback_branch_past_pi_minus_m():
    t = math.pi - 0.2
    e = torch.tensor([[math.cos(t), math.sin(t)]], dtype=torch.float64)
    w = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    out = arcface_logits(e, w, torch.tensor([0]), MarginConfig(0.5, 1.0))
    assert out[0, 0].item() == pytest.approx(math.cos(t) - 0.5 * math.sin(0.5), abs=1e-12)


def test_margin_free_reduction_is_cosine():
    rng = np.random.default_rng(2)
    emb, w, labels = random_case(rng)
    e, ww = unit(torch.tensor(emb)), unit(torch.tensor(w))
    out = arcface_logits(e, ww, torch.tensor(labels), MarginConfig(0.0, 1.0))
    assert torch.equal(out, (e @ ww.t()).clamp(-1, 1))


def test_easy_margin_keeps_negative_cosines():
    e = torch.tensor([[-0.6, 0.8]], dtype=torch.float64)
    w = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    out = arcface_logits(e, w, torch.tensor([0]), MarginConfig(0.5, 1.0, easy_margin=True))
    assert out[0, 0].item() == pytest.approx(-0.6)


def test_loss_matches_oracle_cross_entropy():
    rng = np.random.default_rng(3)
    emb, w, labels = random_case(rng)
    got = arcface_loss(torch.tensor(emb), torch.tensor(w), torch.tensor(labels), normalize=True).item()
    assert got == pytest.approx(oracle_ce(oracle_logits(emb, w, labels, 0.5, 64.0), labels), rel=1e-10)


def test_loss_saturates_to_zero():
    e = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    w = torch.tensor([[1.0, 0.0], [-1.0, 0.0]], dtype=torch.float64)
    assert arcface_loss(e, w, torch.tensor([0])).item() < 1e-40


def test_label_out_of_range():
    e = unit(torch.randn(2, 4))
    w = unit(torch.randn(3, 4))
    with pytest.raises(ValueError, match="labels"):
        arcface_logits(e, w, torch.tensor([0, 3]))
    with pytest.raises(ValueError, match="labels"):
        arcface_logits(e, w, torch.tensor([-1, 0]))


def test_unnormalized_rows_rejected():
    w = unit(torch.randn(3, 4))
    with pytest.raises(ValueError, match="norm"):
        arcface_logits(torch.randn(2, 4) * 3, w, torch.tensor([0, 1]))
    with pytest.raises(ValueError, match="norm"):
        arcface_logits(unit(torch.randn(2, 4)), torch.randn(3, 4) * 3, torch.tensor([0, 1]))


def test_config_validation():
    with pytest.raises(ValueError):
        MarginConfig(margin=-0.1).validate()
    with pytest.raises(ValueError):
        MarginConfig(margin=math.pi).validate()
    with pytest.raises(ValueError):
        MarginConfig(scale=0.0).validate()


def test_gradients_finite_at_exact_match():
    e = torch.tensor([[1.0, 0.0]], dtype=torch.float64, requires_grad=True)
    w = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64, requires_grad=True)
    arcface_loss(e, w, torch.tensor([0]), normalize=True).backward()
    assert torch.isfinite(e.grad).all() and torch.isfinite(w.grad).all()


def test_head_shapes_and_loss():
    torch.manual_seed(0)
    head = ArcFaceHead(7, 32)
    emb = torch.randn(5, 32)
    labels = torch.randint(0, 7, (5,))
    assert head(emb, labels).shape == (5, 7)
    loss = head.loss(emb, labels)
    loss.backward()
    assert head.weight.grad is not None and head.weight.grad.shape == (7, 32)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 1.2))
def test_margin_locality(seed, m):
    rng = np.random.default_rng(seed)
    emb, w, labels = random_case(rng, 4, 6, 8)
    args = (unit(torch.tensor(emb)), unit(torch.tensor(w)), torch.tensor(labels))
    a = arcface_logits(*args, MarginConfig(0.0, 64.0))
    b = arcface_logits(*args, MarginConfig(m, 64.0))
    mask = F.one_hot(args[2], 6).bool()
    assert torch.equal(a[~mask], b[~mask])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.5, 128.0))
def test_argmax_invariant_to_scale(seed, s):
    rng = np.random.default_rng(seed)
    emb, w, labels = random_case(rng, 4, 6, 8)
    args = (unit(torch.tensor(emb)), unit(torch.tensor(w)), torch.tensor(labels))
    a = arcface_logits(*args, MarginConfig(0.5, 1.0))
    b = arcface_logits(*args, MarginConfig(0.5, s))
    assert torch.equal(a.argmax(1), b.argmax(1))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_loss_monotone_in_margin(seed, m1, m2):
    lo, hi = sorted((m1, m2))
    rng = np.random.default_rng(seed)
    emb, w, labels = random_case(rng, 1, 5, 8)
    e, ww = unit(torch.tensor(emb)), unit(torch.tensor(w))
    y = torch.tensor(labels)
    theta = math.acos(float((e @ ww.t())[0, labels[0]].clamp(-1, 1)))
    if theta >= math.pi - hi:
        return
    l_lo = arcface_loss(e, ww, y, MarginConfig(lo, 16.0)).item()
    l_hi = arcface_loss(e, ww, y, MarginConfig(hi, 16.0)).item()
    assert l_hi >= l_lo - 1e-12
