import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from blacksmith.errors import BoundsError, ConfigError, NameResolutionError
from blacksmith.model import (
    ViTConfig, build_model, forward, logits_from_params, loss_and_input_grad, loss_and_param_grads,
)
from conftest import make_batch
import reference


def central_diff(fn, tensor, index, h=1e-5):
    orig = tensor[index].item()
    tensor[index] = orig + h
    up = fn()
    tensor[index] = orig - h
    down = fn()
    tensor[index] = orig
    return (up - down) / (2 * h)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


@pytest.mark.parametrize("changes", [
    dict(image_size=30, patch_size=4),
    dict(depth=3),
    dict(depth=0),
    dict(embed_dim=10, num_heads=3),
    dict(precision="fp16"),
])
def test_invalid_config_rejected(changes):
    with pytest.raises(ConfigError):
        ViTConfig(**changes)


def test_vit_b_depth_gives_half_depth_six():
    model = build_model(ViTConfig(depth=12, embed_dim=16, num_heads=2, image_size=8), seed=0)
    assert model.config.half_depth == 6
    assert len({n.split(".")[1] for n in model.params if n.startswith("layers.")}) == 12


def test_build_is_deterministic():
    cfg = ViTConfig(depth=2, embed_dim=8, num_heads=2, image_size=8)
    a, b = build_model(cfg, 7), build_model(cfg, 7)
    assert list(a.params) == list(b.params)
    for n in a.params:
        assert a.params[n].numpy().tobytes() == b.params[n].numpy().tobytes()
    c = build_model(cfg, 8)
    assert any(not torch.equal(a.params[n], c.params[n]) for n in a.params)


def test_parameter_count_matches_formula():
    cfg = ViTConfig(image_size=8, patch_size=4, in_channels=3, embed_dim=12, depth=4, num_heads=3,
                    mlp_ratio=2.0, num_classes=5)
    d, r, k, t = 12, 2.0, 5, 5
    per_layer = 4 * d * d + 2 * d * int(r * d) + 4 * d
    pe = d * 3 * 16 + d + d + t * d
    head = 2 * d + k * d + k
    model = build_model(cfg, 1)
    # enumerate the named map independently of num_parameters()
    enumerated = sum(math.prod(p.shape) for p in model.params.values())
    assert enumerated == cfg.depth * per_layer + pe + head
    assert model.num_parameters() == enumerated


def test_full_depth_equals_explicit_depth(toy_model, toy_batch):
    a, _ = forward(toy_model, toy_batch)
    b, _ = forward(toy_model, toy_batch, depth_k=toy_model.config.depth)
    assert torch.equal(a, b)


def test_trace_length_and_shapes():
    cfg = ViTConfig(image_size=8, patch_size=4, embed_dim=8, depth=12, num_heads=2, num_classes=3)
    model = build_model(cfg, 0)
    batch = make_batch(cfg, n=3)
    logits, trace = forward(model, batch, depth_k=7, capture_trace=True)
    assert logits.shape == (3, 3)
    assert len(trace) == 7
    assert all(t.shape == (3, cfg.num_tokens, cfg.embed_dim) for t in trace.layers)


@pytest.mark.parametrize("k", [0, 5])
def test_depth_out_of_range(toy_model, toy_batch, k):
    with pytest.raises(BoundsError):
        forward(toy_model, toy_batch, depth_k=k)


@pytest.mark.parametrize("depth_k", [1, 2])
def test_forward_matches_loop_reference(depth_k):
    cfg = ViTConfig(image_size=4, patch_size=2, embed_dim=8, depth=2, num_heads=2, num_classes=3,
                    precision="fp64", input_mean=(0.5, 0.4, 0.3), input_std=(0.2, 0.25, 0.3))
    model = build_model(cfg, 11)
    batch = make_batch(cfg, n=2, seed=4)
    logits, trace = forward(model, batch, depth_k=depth_k, capture_trace=True)
    for i in range(2):
        ref_logits, ref_trace = reference.forward_one(model.params, batch.pixels[i].numpy(), cfg, depth_k)
        np.testing.assert_allclose(logits[i].numpy(), ref_logits, rtol=1e-12, atol=1e-12)
        for k in range(depth_k):
            np.testing.assert_allclose(trace.layers[k][i].numpy(), ref_trace[k], rtol=1e-12, atol=1e-12)


def test_zero_head_gives_uniform_loss(toy_model, toy_batch):
    toy_model.params["head.fc.weight"].zero_()
    toy_model.params["head.fc.bias"].zero_()
    loss, grad = loss_and_input_grad(toy_model, toy_batch)
    assert loss.item() == pytest.approx(math.log(3), abs=1e-15)
    assert torch.count_nonzero(grad) == 0


def test_softmax_stable_on_huge_logits(toy_model, toy_batch):
    toy_model.params["head.fc.weight"].mul_(1e6)
    loss, grad = loss_and_input_grad(toy_model, toy_batch)
    assert torch.isfinite(loss) and torch.isfinite(grad).all()


@pytest.mark.parametrize("depth_k", [None, 3])
def test_input_grad_matches_finite_differences(toy_model, toy_batch, depth_k):
    _, grad = loss_and_input_grad(toy_model, toy_batch, depth_k)
    x = toy_batch.pixels.clone()

    def loss():
        logits = logits_from_params(toy_model.config, toy_model.params, x, depth_k)
        return torch.nn.functional.cross_entropy(logits, toy_batch.labels).item()

    g = torch.Generator().manual_seed(0)
    for _ in range(10):
        idx = tuple(int(torch.randint(s, (), generator=g)) for s in x.shape)
        fd = central_diff(loss, x, idx)
        assert rel_err(fd, grad[idx].item()) < 1e-6


def test_param_grads_match_finite_differences(toy_model, toy_batch):
    _, grads = loss_and_param_grads(toy_model, toy_batch)
    assert set(grads) == set(toy_model.params)

    def loss():
        logits = logits_from_params(toy_model.config, toy_model.params, toy_batch.pixels)
        return torch.nn.functional.cross_entropy(logits, toy_batch.labels).item()

    for name in ["pe.proj.weight", "pe.cls_token", "layers.1.attn.qkv.weight", "layers.4.norm2.bias",
                 "layers.3.mlp.fc1.weight", "head.fc.weight"]:
        p = toy_model.params[name]
        idx = tuple(s // 2 for s in p.shape)
        fd = central_diff(loss, p, idx)
        assert rel_err(fd, grads[name][idx].item()) < 1e-6, name


def test_freeze_mask_restricts_grads(toy_model, toy_batch):
    mask = toy_model.forge_freeze_mask()
    _, grads = loss_and_param_grads(toy_model, toy_batch, mask)
    assert not set(grads) & mask
    assert "pe.proj.weight" in grads and "pe.cls_token" in grads and "pe.pos_embed" in grads
    assert "layers.1.attn.qkv.weight" in grads and "layers.2.mlp.fc2.weight" in grads
    assert not any(n.startswith(("layers.3.", "layers.4.", "head.")) for n in grads)
    _, full = loss_and_param_grads(toy_model, toy_batch)
    for n, g in grads.items():
        assert torch.equal(g, full[n])


def test_unknown_mask_name(toy_model, toy_batch):
    with pytest.raises(NameResolutionError):
        loss_and_param_grads(toy_model, toy_batch, {"layers.9.nope"})


def test_truncated_grad_ignores_upper_layers(toy_model, toy_batch):
    l = toy_model.config.half_depth
    _, before = loss_and_input_grad(toy_model, toy_batch, l + 1)
    for n in toy_model.layer_names(range(l + 2, toy_model.config.depth + 1)):
        toy_model.params[n].add_(0.5)
    _, after = loss_and_input_grad(toy_model, toy_batch, l + 1)
    assert torch.equal(before, after)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_shape_invariance_any_depth(seed, depth_k):
    cfg = ViTConfig(image_size=4, patch_size=2, embed_dim=8, depth=4, num_heads=2, num_classes=3)
    model = build_model(cfg, seed % 1000)
    batch = make_batch(cfg, n=2, seed=seed)
    logits, trace = forward(model, batch, depth_k, capture_trace=True)
    assert logits.shape == (2, 3)
    assert {tuple(t.shape) for t in trace.layers} == {(2, 5, 8)}


def test_forward_is_repeatable(toy_model, toy_batch):
    a, _ = forward(toy_model, toy_batch, 3)
    b, _ = forward(toy_model, toy_batch, 3)
    assert a.numpy().tobytes() == b.numpy().tobytes()
