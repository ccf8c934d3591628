"""Two-stream feature extractor: per-modality head, shared tail.

The head (stage 1) exists once per modality; the tail (stages 2-4) is shared.
`low` is tapped after the head, `high` after the tail, and the global vector
is the spatial mean of `high`.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class FeatureMaps:
    low: torch.Tensor        # (N, H'*W', d_low)
    high: torch.Tensor       # (N, H*W, d)
    global_vec: torch.Tensor  # (N, d)
    low_hw: tuple[int, int]
    high_hw: tuple[int, int]


def _block(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class TwoStreamBackbone(nn.Module):
    """Small 4-stage CNN; stage 1 is modality-specific, stages 2-4 shared.

    With default strides the spatial map is H/4 x W/4 after the tail
    (72x36 input -> 18x9 feature map).
    """

    def __init__(self, channels=32, low_dim=32, feat_dim=128):
        super().__init__()
        self.head = nn.ModuleDict({
            "V": nn.Sequential(_block(3, channels, stride=2),
                               _block(channels, low_dim)),
            "I": nn.Sequential(_block(3, channels, stride=2),
                               _block(channels, low_dim)),
        })
        self.tail = nn.Sequential(
            _block(low_dim, channels * 2, stride=2),
            _block(channels * 2, channels * 2),
            nn.Conv2d(channels * 2, feat_dim, 3, padding=1),
        )
        self.low_dim = low_dim
        self.feat_dim = feat_dim

    def forward(self, images: torch.Tensor, modality: str) -> FeatureMaps:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) images, got {tuple(images.shape)}")
        if modality not in ("V", "I"):
            raise ValueError(f"modality must be 'V' or 'I', got {modality!r}")
        low_map = self.head[modality](images)          # (N, d_low, H', W')
        high_map = self.tail(low_map)                  # (N, d, H, W)
        n, d, h, w = high_map.shape
        low = low_map.flatten(2).transpose(1, 2)
        high = high_map.flatten(2).transpose(1, 2)
        return FeatureMaps(
            low=low, high=high, global_vec=high.mean(dim=1),
            low_hw=(low_map.shape[2], low_map.shape[3]), high_hw=(h, w))

    extract = forward
