import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import assert_gradients_match
from protomix.protodisc import (DegeneratePrototypeError, MaskHead,
                                RigidTransform, aggregate_prototypes,
                                invert_mask_transform, pool_low_features,
                                transform_image)


@pytest.fixture
def mask_head():
    torch.manual_seed(0)
    return MaskHead(feat_dim=16, num_prototypes=6).eval()


def test_rows_sum_to_one(mask_head):
    high = torch.randn(2, 18 * 9, 16)
    masks = mask_head(high, (18, 9))
    assert masks.shape == (2, 162, 6)
    assert torch.allclose(masks.sum(dim=2), torch.ones(2, 162), atol=1e-6)
    assert (masks >= 0).all() and (masks <= 1).all()


def test_zero_final_layer_gives_uniform_masks(mask_head):
    torch.nn.init.zeros_(mask_head.out.weight)
    torch.nn.init.zeros_(mask_head.out.bias)
    masks = mask_head(torch.randn(1, 162, 16), (18, 9))
    assert torch.allclose(masks, torch.full_like(masks, 1 / 6))


def test_nonfinite_input_raises(mask_head):
    high = torch.full((1, 162, 16), float("nan"))
    with pytest.raises(FloatingPointError):
        mask_head(high, (18, 9))


# ---------------------------------------------------------------------------
# aggregation


def test_uniform_masks_give_global_mean():
    features = torch.randn(2, 10, 4)
    masks = torch.full((2, 10, 3), 1 / 3)
    protos = aggregate_prototypes(features, masks)
    expected = features.mean(dim=1, keepdim=True).expand(2, 3, 4)
    assert torch.allclose(protos, expected, atol=1e-6)


def test_one_hot_column_selects_pixel():
    features = torch.randn(1, 5, 4)
    masks = torch.zeros(1, 5, 2)
    masks[0, 2, 0] = 1.0
    masks[0, :, 1] = 0.2
    protos = aggregate_prototypes(features, masks)
    assert torch.allclose(protos[0, 0], features[0, 2])


def test_hand_weighted_mean():
    features = torch.tensor([[[0.0], [2.0]]])
    masks = torch.tensor([[[0.25, 0.75], [0.75, 0.25]]])
    protos = aggregate_prototypes(features, masks)
    assert torch.allclose(protos[0, 0], torch.tensor([1.5]))
    assert torch.allclose(protos[0, 1], torch.tensor([0.5]))


def test_degenerate_column_raises():
    features = torch.randn(1, 4, 2)
    masks = torch.zeros(1, 4, 2)
    masks[:, :, 0] = 1.0
    with pytest.raises(DegeneratePrototypeError):
        aggregate_prototypes(features, masks)


def test_permutation_equivariance():
    features = torch.randn(1, 8, 3)
    masks = torch.softmax(torch.randn(1, 8, 4), dim=2)
    perm = torch.tensor([2, 0, 3, 1])
    protos = aggregate_prototypes(features, masks)
    protos_perm = aggregate_prototypes(features, masks[:, :, perm])
    assert torch.allclose(protos_perm, protos[:, perm], atol=1e-6)


def test_aggregation_gradients():
    torch.manual_seed(1)
    features = torch.rand(1, 4, 3, dtype=torch.float64, requires_grad=True)
    masks = (torch.rand(1, 4, 2, dtype=torch.float64) + 0.1).requires_grad_()

    def fn(f, m):
        return aggregate_prototypes(f, m).pow(2).sum()

    assert_gradients_match(fn, [features, masks])


def test_pool_low_features_shape_and_mean():
    low = torch.arange(16, dtype=torch.float32).reshape(1, 16, 1)
    pooled = pool_low_features(low, (4, 4), (2, 2))
    assert pooled.shape == (1, 4, 1)
    assert pooled.mean() == pytest.approx(low.mean().item())


# ---------------------------------------------------------------------------
# rigid transforms


def _masks(h, w, k=3, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.softmax(torch.randn(2, h * w, k, generator=g), dim=2)


def test_identity_is_noop():
    masks = _masks(6, 4)
    t = RigidTransform("identity")
    assert torch.equal(transform_image(masks, t), masks)
    assert torch.equal(invert_mask_transform(masks, t, (6, 4)), masks)


@pytest.mark.parametrize("transform", [
    RigidTransform("hflip"),
    RigidTransform("translate", dy=1, dx=0),
    RigidTransform("translate", dy=-2, dx=3),
    RigidTransform("rotate90", quarter_turns=1),
    RigidTransform("rotate90", quarter_turns=3),
])
def test_apply_invert_round_trip_exact(transform):
    h, w = (6, 6) if transform.kind == "rotate90" else (6, 4)
    masks = _masks(h, w)
    grid = masks.transpose(1, 2).reshape(2, 3, h, w)
    assert torch.equal(transform.invert(transform.apply(grid)), grid)


def test_hflip_twice_restores_masks():
    masks = _masks(6, 4)
    t = RigidTransform("hflip")
    grid = masks.transpose(1, 2).reshape(2, 3, 6, 4)
    flipped = t.apply(grid).reshape(2, 3, -1).transpose(1, 2)
    assert torch.equal(invert_mask_transform(flipped, t, (6, 4)), masks)


def test_translate_one_hot_round_trip():
    h, w = 5, 4
    one_hot = torch.zeros(1, h * w, 1)
    one_hot[0, 2 * w + 1, 0] = 1.0  # interior pixel (row 2, col 1)
    t = RigidTransform("translate", dy=1, dx=1)
    grid = one_hot.transpose(1, 2).reshape(1, 1, h, w)
    moved = t.apply(grid)
    assert moved[0, 0, 3, 2] == 1.0  # direct index arithmetic
    restored = invert_mask_transform(
        moved.reshape(1, 1, -1).transpose(1, 2), t, (h, w))
    assert torch.equal(restored, one_hot)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        RigidTransform("shear")


@settings(max_examples=25, deadline=None)
@given(st.integers(-3, 3), st.integers(-3, 3), st.integers(0, 999))
def test_translate_round_trip_property(dy, dx, seed):
    masks = _masks(6, 4, seed=seed)
    t = RigidTransform("translate", dy=dy, dx=dx)
    grid = masks.transpose(1, 2).reshape(2, 3, 6, 4)
    transformed = t.apply(grid).reshape(2, 3, -1).transpose(1, 2)
    assert torch.equal(invert_mask_transform(transformed, t, (6, 4)), masks)
