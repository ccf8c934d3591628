"""Attentive prototype embedding, final descriptors, prototype mixing, and
the epoch-to-step schedule."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn


class AttentivePrototypeEmbedding(nn.Module):
    """Gated self-attention over the K prototype rows.

    B = sigmoid(W_q(A) W_k(A)^T / sqrt(d_a)) is a K x K gate, C = B W_v(A),
    and the output is an MLP head on the flattened C.
    """

    def __init__(self, num_prototypes: int, feat_dim: int, attn_dim: int,
                 embed_dim: int):
        super().__init__()
        self.w_q = nn.Linear(feat_dim, attn_dim)
        self.w_k = nn.Linear(feat_dim, attn_dim)
        self.w_v = nn.Linear(feat_dim, attn_dim)
        self.w_mlp = nn.Linear(num_prototypes * attn_dim, embed_dim)
        self.attn_dim = attn_dim

    def forward(self, prototypes: torch.Tensor) -> torch.Tensor:
        """(N, K, d) -> (N, d_e)."""
        if prototypes.ndim != 3:
            raise ValueError("expected (N, K, d) prototype sets")
        q, k, v = self.w_q(prototypes), self.w_k(prototypes), self.w_v(prototypes)
        gate = torch.sigmoid(q @ k.transpose(1, 2) / self.attn_dim ** 0.5)
        mixed = gate @ v                       # (N, K, d_a)
        return self.w_mlp(mixed.flatten(1))


def final_embedding(ape_out: torch.Tensor, global_vec: torch.Tensor) -> torch.Tensor:
    """Concatenate the attentive embedding with the global pooled vector."""
    return torch.cat([ape_out, global_vec], dim=-1)


def mix_prototypes(a_own: torch.Tensor, a_other: torch.Tensor, t: int, T: int,
                   rng: np.random.Generator) -> torch.Tensor:
    """Per prototype row, keep the own-modality row if t/T <= u (u ~ U[0,1)),
    otherwise copy the other modality's row whole. No blending.

    t=0 returns a_own exactly; t=T returns a_other exactly.
    """
    if a_own.shape != a_other.shape:
        raise ValueError("prototype sets must share a shape")
    if T == 0:
        if t > 0:
            raise ValueError("t > 0 requires T > 0")
        return a_own.clone()
    if not 0 <= t <= T:
        raise ValueError(f"step t={t} outside [0, {T}]")
    n, k = a_own.shape[0], a_own.shape[1]
    u = rng.random((n, k))
    take_other = torch.from_numpy(t / T > u).to(a_own.device)
    return torch.where(take_other.unsqueeze(-1), a_other, a_own)


def mix_whole(a_own: torch.Tensor, a_other: torch.Tensor, t: int, T: int) -> torch.Tensor:
    """Whole-set mixup comparison mode: alpha-blend every row with alpha = 1 - t/T."""
    if T == 0:
        return a_own.clone()
    alpha = 1.0 - t / T
    return alpha * a_own + (1.0 - alpha) * a_other


def step_boundaries(epochs: int, total_steps: int) -> list[int]:
    """Uniform partition of the epoch range into total_steps segments."""
    if total_steps == 0:
        return []
    return [round(epochs * s / total_steps) for s in range(1, total_steps + 1)]


def step_for_epoch(epoch: int, boundaries: list[int], total_steps: int) -> int:
    """Map an epoch to its mixing step t in {1..T} (0 when T == 0).

    boundaries[i] is the first epoch beyond step i+1; epochs past the last
    boundary stay at t = T.
    """
    if total_steps == 0:
        return 0
    for i, b in enumerate(boundaries):
        if epoch < b:
            return i + 1
    return total_steps
