"""Prototype discovery: per-pixel K-way masks, mask-weighted aggregation,
and exactly invertible rigid transforms for the equivariance objective."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F


class DegeneratePrototypeError(RuntimeError):
    """A mask column carries (numerically) zero total weight."""


# ---------------------------------------------------------------------------
# rigid transforms


@dataclass(frozen=True)
class RigidTransform:
    """Lossless rigid map on (N, C, H, W) tensors.

    kind: identity | hflip | translate | rotate90
    Translation wraps around (torch.roll) so apply/invert round-trips exactly;
    dy/dx are given at mask resolution and scaled up for image tensors.
    """

    kind: str = "identity"
    dy: int = 0
    dx: int = 0
    quarter_turns: int = 1

    def __post_init__(self):
        if self.kind not in ("identity", "hflip", "translate", "rotate90"):
            raise ValueError(f"unknown rigid transform kind {self.kind!r}")

    def apply(self, x: torch.Tensor, scale: int = 1) -> torch.Tensor:
        if self.kind == "identity":
            return x
        if self.kind == "hflip":
            return torch.flip(x, dims=[-1])
        if self.kind == "translate":
            return torch.roll(x, shifts=(self.dy * scale, self.dx * scale),
                              dims=(-2, -1))
        return torch.rot90(x, k=self.quarter_turns, dims=(-2, -1))

    def invert(self, x: torch.Tensor, scale: int = 1) -> torch.Tensor:
        if self.kind == "identity":
            return x
        if self.kind == "hflip":
            return torch.flip(x, dims=[-1])
        if self.kind == "translate":
            return torch.roll(x, shifts=(-self.dy * scale, -self.dx * scale),
                              dims=(-2, -1))
        return torch.rot90(x, k=-self.quarter_turns, dims=(-2, -1))


def transform_image(images: torch.Tensor, transform: RigidTransform,
                    scale: int = 1) -> torch.Tensor:
    return transform.apply(images, scale=scale)


def invert_mask_transform(masks: torch.Tensor, transform: RigidTransform,
                          hw: tuple[int, int]) -> torch.Tensor:
    """Invert a rigid transform on flattened (N, H*W, K) mask scores."""
    n, u, k = masks.shape
    grid = masks.transpose(1, 2).reshape(n, k, *hw)
    grid = transform.invert(grid)
    return grid.reshape(n, k, -1).transpose(1, 2)


def random_rigid_transform(rng, max_shift: int = 2) -> RigidTransform:
    """Draw a transform usable on non-square maps (no rotate90)."""
    kind = ["identity", "hflip", "translate"][int(rng.integers(3))]
    if kind == "translate":
        return RigidTransform("translate",
                              dy=int(rng.integers(-max_shift, max_shift + 1)),
                              dx=int(rng.integers(-max_shift, max_shift + 1)))
    return RigidTransform(kind)


# ---------------------------------------------------------------------------
# mask head


class MaskHead(nn.Module):
    """Shallow U-Net (2 down / 2 up, skip connections) predicting K mask logits."""

    def __init__(self, feat_dim: int, num_prototypes: int, width: int = 64):
        super().__init__()
        self.down1 = nn.Sequential(
            nn.Conv2d(feat_dim, width, 3, padding=1), nn.ReLU(inplace=True))
        self.down2 = nn.Sequential(
            nn.Conv2d(width, width, 3, stride=2, padding=1), nn.ReLU(inplace=True))
        self.bottom = nn.Sequential(
            nn.Conv2d(width, width, 3, stride=2, padding=1), nn.ReLU(inplace=True))
        self.up1 = nn.Sequential(
            nn.Conv2d(2 * width, width, 3, padding=1), nn.ReLU(inplace=True))
        self.up2 = nn.Sequential(
            nn.Conv2d(2 * width, width, 3, padding=1), nn.ReLU(inplace=True))
        self.out = nn.Conv2d(width, num_prototypes, 1)
        self.num_prototypes = num_prototypes

    def forward(self, high: torch.Tensor, hw: tuple[int, int]) -> torch.Tensor:
        """high: (N, H*W, d) -> row-stochastic mask scores (N, H*W, K)."""
        n, u, d = high.shape
        x = high.transpose(1, 2).reshape(n, d, *hw)
        s1 = self.down1(x)
        s2 = self.down2(s1)
        b = self.bottom(s2)
        y = F.interpolate(b, size=s2.shape[-2:], mode="nearest")
        y = self.up1(torch.cat([y, s2], dim=1))
        y = F.interpolate(y, size=s1.shape[-2:], mode="nearest")
        y = self.up2(torch.cat([y, s1], dim=1))
        logits = self.out(y).flatten(2).transpose(1, 2)  # (N, U, K)
        if not torch.isfinite(logits).all():
            raise FloatingPointError("non-finite mask logits")
        return torch.softmax(logits, dim=2)

    mask_scores = forward


def aggregate_prototypes(features: torch.Tensor, masks: torch.Tensor,
                         min_weight: float = 1e-8) -> torch.Tensor:
    """Mask-weighted mean of pixel features: (N,U,d), (N,U,K) -> (N,K,d)."""
    if features.shape[:2] != masks.shape[:2]:
        raise ValueError("features and masks disagree on (N, U)")
    totals = masks.sum(dim=1)  # (N, K)
    if (totals < min_weight).any():
        bad = int((totals < min_weight).nonzero()[0, 1])
        raise DegeneratePrototypeError(
            f"mask column {bad} has total weight below {min_weight}")
    weighted = torch.einsum("nuk,nud->nkd", masks, features)
    return weighted / totals.unsqueeze(2)


def pool_low_features(low: torch.Tensor, low_hw: tuple[int, int],
                      high_hw: tuple[int, int]) -> torch.Tensor:
    """Average-pool the low-level map (N, H'*W', d_low) to the mask resolution."""
    n, u, d = low.shape
    grid = low.transpose(1, 2).reshape(n, d, *low_hw)
    pooled = F.adaptive_avg_pool2d(grid, high_hw)
    return pooled.flatten(2).transpose(1, 2)
