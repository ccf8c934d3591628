"""Training objectives.

Naming: lc/hc = low/high-level prototype contrastive terms, compact = pixels
pulled toward their prototype, diverse = mask-overlap penalty, equivariance =
mask consistency under rigid transforms, part_id = per-prototype identity
cross-entropy, reid = identity cross-entropy + center-cluster terms on the
final embeddings.

All losses are batch means and accept float32 or float64 tensors.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .config import LossWeights


def _normalize(x: torch.Tensor) -> torch.Tensor:
    return F.normalize(x, dim=-1, eps=1e-12)


def _anchor_negative_logsumexp(protos_n: torch.Tensor, tau: float) -> torch.Tensor:
    """Sum over the anchor's own other-index prototypes: (N,K,d) -> (N,K)."""
    sims = torch.einsum("nkd,nqd->nkq", protos_n, protos_n) / tau
    k = sims.shape[1]
    eye = torch.eye(k, dtype=torch.bool, device=sims.device)
    return sims.masked_fill(eye, float("-inf")).exp().sum(dim=2)


def loss_lc(low_prototypes: torch.Tensor, tau: float) -> torch.Tensor:
    """Inter-person contrastive loss on low-level prototypes.

    Positives for anchor (n, k): prototype k of every other sample in the
    batch, regardless of identity. Negatives: the anchor's other-index
    prototypes. Features are L2-normalized; mean over (anchor, positive).
    """
    n, k, _ = low_prototypes.shape
    if k < 2:
        raise ValueError("need at least 2 prototypes for negatives")
    if n < 2:
        raise ValueError("need at least 2 samples in the batch")
    p = _normalize(low_prototypes)
    neg = _anchor_negative_logsumexp(p, tau)                     # (N, K)
    cross = torch.einsum("nkd,mkd->nkm", p, p) / tau             # (N, K, M)
    pos_exp = cross.exp()
    terms = -torch.log(pos_exp / (pos_exp + neg.unsqueeze(2)))
    off = ~torch.eye(n, dtype=torch.bool, device=p.device)       # m != n
    return terms.permute(0, 2, 1)[off].mean()


def loss_hc(high_prototypes: torch.Tensor, identities: torch.Tensor,
            tau: float) -> torch.Tensor:
    """Intra-person contrastive loss: positives restricted to the same identity.

    Identities with a single sample contribute no pairs; all-singleton batches
    give 0.
    """
    n, k, _ = high_prototypes.shape
    if k < 2:
        raise ValueError("need at least 2 prototypes for negatives")
    p = _normalize(high_prototypes)
    neg = _anchor_negative_logsumexp(p, tau)
    cross = torch.einsum("nkd,mkd->nkm", p, p) / tau
    pos_exp = cross.exp()
    terms = -torch.log(pos_exp / (pos_exp + neg.unsqueeze(2)))   # (N, K, M)
    same = identities.unsqueeze(0) == identities.unsqueeze(1)    # (N, M)
    pairs = same & ~torch.eye(n, dtype=torch.bool, device=p.device)
    if not pairs.any():
        return torch.zeros((), dtype=p.dtype, device=p.device)
    return terms.permute(0, 2, 1)[pairs].mean()


def loss_compact(features: torch.Tensor, masks: torch.Tensor,
                 prototypes: torch.Tensor) -> torch.Tensor:
    """Mask-weighted distance of each pixel feature to its prototype."""
    diff = prototypes.unsqueeze(1) - features.unsqueeze(2)  # (N, U, K, d)
    dist = torch.linalg.vector_norm(diff, dim=3)
    return (masks * dist).sum(dim=(1, 2)).mean()


def loss_diverse(masks: torch.Tensor) -> torch.Tensor:
    """Pairwise overlap mass between mask columns; 0 iff supports are disjoint."""
    gram = torch.einsum("nuk,nuq->nkq", masks, masks)
    total = gram.sum(dim=(1, 2)) - gram.diagonal(dim1=1, dim2=2).sum(dim=1)
    return (total / 2).mean()


def loss_equivariance(masks: torch.Tensor,
                      masks_transformed_inverted: torch.Tensor) -> torch.Tensor:
    """L1 distance between original and inverse-transformed mask scores."""
    return (masks - masks_transformed_inverted).abs().sum(dim=(1, 2)).mean()


class PartClassifierBank(nn.Module):
    """K independent linear identity classifiers, one per prototype index.

    Weights are not shared across indices; a proportion of classifier weights
    is dropped out in training mode so no single part dominates.
    """

    def __init__(self, num_prototypes: int, feat_dim: int, num_classes: int,
                 dropout: float = 0.2):
        super().__init__()
        self.classifiers = nn.ModuleList(
            nn.Linear(feat_dim, num_classes) for _ in range(num_prototypes))
        self.dropout = dropout

    def logits(self, prototypes: torch.Tensor) -> torch.Tensor:
        """(N, K, d) -> (N, K, C_y)."""
        outs = []
        for k, lin in enumerate(self.classifiers):
            w = F.dropout(lin.weight, p=self.dropout, training=self.training)
            outs.append(F.linear(prototypes[:, k, :], w, lin.bias))
        return torch.stack(outs, dim=1)


def loss_part_id(prototypes: torch.Tensor, identities: torch.Tensor,
                 bank: PartClassifierBank) -> torch.Tensor:
    """Mean over the K classifiers of identity cross-entropy."""
    logits = bank.logits(prototypes)  # (N, K, C)
    n, k, c = logits.shape
    labels = identities.unsqueeze(1).expand(n, k)
    return F.cross_entropy(logits.reshape(n * k, c), labels.reshape(n * k))


def center_cluster_loss(x: torch.Tensor, identities: torch.Tensor,
                        margin: float = 0.3) -> torch.Tensor:
    """Pull samples to their identity center, push distinct centers apart.

    mean_j ||x_j - c_{y_j}||^2 + sum over ordered pairs y != y' of
    max(0, margin - ||c_y - c_{y'}||).
    """
    ids = torch.unique(identities)
    centers = torch.stack([x[identities == y].mean(dim=0) for y in ids])
    idx = torch.searchsorted(ids, identities)
    pull = ((x - centers[idx]) ** 2).sum(dim=1).mean()
    if len(ids) < 2:
        return pull
    dists = torch.cdist(centers, centers)
    off = ~torch.eye(len(ids), dtype=torch.bool, device=x.device)
    push = F.relu(margin - dists[off]).sum()
    return pull + push


def loss_reid(embeddings_v, embeddings_i, embeddings_v_t, embeddings_i_t,
              identities, id_classifier: nn.Module,
              margin: float = 0.3) -> torch.Tensor:
    """Identity cross-entropy over all embedding sets plus the center-cluster
    pairing of each real-modality set with its intermediate counterpart.

    Both parts average over however many sets/pairings are present, so the
    objective keeps the same scale whether or not intermediates exist.
    Intermediate sets may be None (single-step or one-directional modes)."""
    ces = [F.cross_entropy(id_classifier(embeddings_v), identities),
           F.cross_entropy(id_classifier(embeddings_i), identities)]
    ccs = []
    if embeddings_v_t is not None:
        ces.append(F.cross_entropy(id_classifier(embeddings_v_t), identities))
        ccs.append(center_cluster_loss(
            torch.cat([embeddings_v, embeddings_v_t]),
            torch.cat([identities, identities]), margin))
    if embeddings_i_t is not None:
        ces.append(F.cross_entropy(id_classifier(embeddings_i_t), identities))
        ccs.append(center_cluster_loss(
            torch.cat([embeddings_i, embeddings_i_t]),
            torch.cat([identities, identities]), margin))
    out = torch.stack(ces).mean()
    if ccs:
        out = out + torch.stack(ccs).mean()
    return out


def total_loss(reid, lc, hc, diverse, compact, part_id, equivariance,
               weights: LossWeights) -> torch.Tensor:
    return (reid
            + weights.lambda_f * (lc + hc)
            + weights.lambda_v * diverse
            + weights.lambda_c * compact
            + weights.lambda_i * part_id
            + weights.lambda_e * equivariance)
