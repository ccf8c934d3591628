"""Full re-identification model: backbone + mask head + attentive embedding
+ identity classifiers."""

from __future__ import annotations

import torch
from torch import nn

from .backbone import TwoStreamBackbone
from .config import TrainConfig
from .embedding import AttentivePrototypeEmbedding, final_embedding
from .losses import PartClassifierBank
from .protodisc import MaskHead, aggregate_prototypes, pool_low_features


class ReIDModel(nn.Module):
    def __init__(self, cfg: TrainConfig, num_classes: int):
        super().__init__()
        self.cfg = cfg
        self.backbone = TwoStreamBackbone(
            channels=cfg.channels, low_dim=cfg.low_dim, feat_dim=cfg.feat_dim)
        self.mask_head = MaskHead(cfg.feat_dim, cfg.num_prototypes)
        self.ape = AttentivePrototypeEmbedding(
            cfg.num_prototypes, cfg.feat_dim, cfg.attn_dim, cfg.embed_dim)
        self.part_bank = PartClassifierBank(
            cfg.num_prototypes, cfg.feat_dim, num_classes,
            dropout=cfg.classifier_dropout)
        self.id_classifier = nn.Linear(cfg.embed_dim + cfg.feat_dim, num_classes)

    def forward_features(self, images: torch.Tensor, modality: str):
        """Returns (feature maps, mask scores, low prototypes, high prototypes)."""
        feats = self.backbone(images, modality)
        masks = self.mask_head(feats.high, feats.high_hw)
        high_protos = aggregate_prototypes(feats.high, masks)
        low_pooled = pool_low_features(feats.low, feats.low_hw, feats.high_hw)
        low_protos = aggregate_prototypes(low_pooled, masks)
        return feats, masks, low_protos, high_protos

    def embed(self, prototypes: torch.Tensor, global_vec: torch.Tensor) -> torch.Tensor:
        return final_embedding(self.ape(prototypes), global_vec)

    @torch.no_grad()
    def embed_images(self, images: torch.Tensor, modality: str) -> torch.Tensor:
        """Inference-time descriptor for a stack of images."""
        was_training = self.training
        self.eval()
        try:
            feats, _, _, high_protos = self.forward_features(images, modality)
            return self.embed(high_protos, feats.global_vec)
        finally:
            self.train(was_training)


def prototypes_from_image(model: ReIDModel, images: torch.Tensor, modality: str,
                          level: str = "high") -> torch.Tensor:
    """(N, 3, H_img, W_img) -> (N, K, d) or (N, K, d_low)."""
    if level not in ("low", "high"):
        raise ValueError(f"level must be 'low' or 'high', got {level!r}")
    _, _, low_protos, high_protos = model.forward_features(images, modality)
    return high_protos if level == "high" else low_protos
