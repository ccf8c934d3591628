"""Training loop: gradual bidirectional prototype mixing over T steps,
per-step loss logging, checkpointing with full rng state, and resume."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
import torch
from torch import optim

from . import losses
from .config import TrainConfig, config_hash, _as_plain
from .embedding import (mix_prototypes, mix_whole, step_boundaries,
                        step_for_epoch)
from .evaluation import mmd_gap
from .model import ReIDModel
from .protodisc import invert_mask_transform, random_rigid_transform, transform_image
from .synthdata import Batch, Dataset, sample_batch

LOSS_COLUMNS = ["reid", "lc", "hc", "diverse", "compact", "part_id",
                "equivariance", "total"]


class NonFiniteLossError(RuntimeError):
    pass


def _augment(images: torch.Tensor, pad: int, erase_prob: float) -> torch.Tensor:
    """Pad-and-crop plus random erasing, consuming the global torch rng."""
    if pad > 0:
        n, c, h, w = images.shape
        padded = torch.nn.functional.pad(images, (pad, pad, pad, pad))
        dy = int(torch.randint(0, 2 * pad + 1, (1,)))
        dx = int(torch.randint(0, 2 * pad + 1, (1,)))
        images = padded[:, :, dy:dy + h, dx:dx + w]
    if erase_prob > 0:
        n, c, h, w = images.shape
        do = torch.rand(n) < erase_prob
        eh, ew = max(1, h // 4), max(1, w // 4)
        ys = torch.randint(0, h - eh + 1, (n,))
        xs = torch.randint(0, w - ew + 1, (n,))
        images = images.clone()
        for j in range(n):
            if do[j]:
                images[j, :, ys[j]:ys[j] + eh, xs[j]:xs[j] + ew] = 0.0
    return images


def _mix(cfg: TrainConfig, a_own, a_other, t, rng):
    if cfg.mixing == "whole_mixup":
        return mix_whole(a_own, a_other, t, cfg.num_steps)
    return mix_prototypes(a_own, a_other, t, cfg.num_steps, rng)


def compute_batch_loss(model: ReIDModel, batch: Batch, t: int,
                       cfg: TrainConfig, labels: torch.Tensor,
                       mix_rng: np.random.Generator,
                       transform_rng: np.random.Generator,
                       augment: bool = True) -> dict[str, torch.Tensor]:
    """All loss terms for one batch at mixing step t."""
    xv = torch.from_numpy(batch.images_v)
    xi = torch.from_numpy(batch.images_i)
    if augment:
        xv = _augment(xv, cfg.crop_pad, cfg.erase_prob)
        xi = _augment(xi, cfg.crop_pad, cfg.erase_prob)

    feats_v, masks_v, low_v, high_v = model.forward_features(xv, "V")
    feats_i, masks_i, low_i, high_i = model.forward_features(xi, "I")
    mask_hw = feats_v.high_hw
    scale = xv.shape[2] // mask_hw[0]

    # equivariance: one random rigid transform per modality, second forward pass
    eq = xv.new_zeros(())
    for x, modality, masks in ((xv, "V", masks_v), (xi, "I", masks_i)):
        transform = random_rigid_transform(transform_rng)
        _, masks_t, _, _ = model.forward_features(
            transform_image(x, transform, scale=scale), modality)
        inverted = invert_mask_transform(masks_t, transform, mask_hw)
        eq = eq + losses.loss_equivariance(masks, inverted)

    both_labels = torch.cat([labels, labels])
    low_all = torch.cat([low_v, low_i])
    high_all = torch.cat([high_v, high_i])
    masks_all = torch.cat([masks_v, masks_i])
    feats_all = torch.cat([feats_v.high, feats_i.high])

    lc = losses.loss_lc(low_all, cfg.weights.tau)
    hc = losses.loss_hc(high_all, both_labels, cfg.weights.tau)
    diverse = losses.loss_diverse(masks_all)
    compact = losses.loss_compact(feats_all, masks_all, high_all)
    part_id = losses.loss_part_id(high_all, both_labels, model.part_bank)

    f_v = model.embed(high_v, feats_v.global_vec)
    f_i = model.embed(high_i, feats_i.global_vec)
    f_v_t = f_i_t = None
    if cfg.num_steps > 0 and t > 0 and cfg.direction != "single_step":
        last = t == cfg.num_steps
        if cfg.direction in ("bidirectional", "v_to_i"):
            a_v_t = _mix(cfg, high_v, high_i, t, mix_rng)
            g = feats_i.global_vec if last else feats_v.global_vec
            f_v_t = model.embed(a_v_t, g)
        if cfg.direction in ("bidirectional", "i_to_v"):
            a_i_t = _mix(cfg, high_i, high_v, t, mix_rng)
            g = feats_v.global_vec if last else feats_i.global_vec
            f_i_t = model.embed(a_i_t, g)
    reid = losses.loss_reid(f_v, f_i, f_v_t, f_i_t, labels,
                            model.id_classifier, cfg.weights.center_margin)

    total = losses.total_loss(reid, lc, hc, diverse, compact, part_id, eq,
                              cfg.weights)
    return {"reid": reid, "lc": lc, "hc": hc, "diverse": diverse,
            "compact": compact, "part_id": part_id, "equivariance": eq,
            "total": total}


def baseline_objective(model: ReIDModel, batch: Batch, cfg: TrainConfig,
                       labels: torch.Tensor,
                       transform_rng: np.random.Generator,
                       augment: bool = True) -> torch.Tensor:
    """Single-step objective written without any intermediate machinery;
    reference for the T=0 equivalence check."""
    xv = torch.from_numpy(batch.images_v)
    xi = torch.from_numpy(batch.images_i)
    if augment:
        xv = _augment(xv, cfg.crop_pad, cfg.erase_prob)
        xi = _augment(xi, cfg.crop_pad, cfg.erase_prob)
    feats_v, masks_v, low_v, high_v = model.forward_features(xv, "V")
    feats_i, masks_i, low_i, high_i = model.forward_features(xi, "I")
    mask_hw = feats_v.high_hw
    scale = xv.shape[2] // mask_hw[0]
    eq = xv.new_zeros(())
    for x, modality, masks in ((xv, "V", masks_v), (xi, "I", masks_i)):
        transform = random_rigid_transform(transform_rng)
        _, masks_t, _, _ = model.forward_features(
            transform_image(x, transform, scale=scale), modality)
        eq = eq + losses.loss_equivariance(
            masks, invert_mask_transform(masks_t, transform, mask_hw))
    both_labels = torch.cat([labels, labels])
    high_all = torch.cat([high_v, high_i])
    masks_all = torch.cat([masks_v, masks_i])
    reid = losses.loss_reid(
        model.embed(high_v, feats_v.global_vec),
        model.embed(high_i, feats_i.global_vec),
        None, None, labels, model.id_classifier, cfg.weights.center_margin)
    return losses.total_loss(
        reid,
        losses.loss_lc(torch.cat([low_v, low_i]), cfg.weights.tau),
        losses.loss_hc(high_all, both_labels, cfg.weights.tau),
        losses.loss_diverse(masks_all),
        losses.loss_compact(torch.cat([feats_v.high, feats_i.high]),
                            masks_all, high_all),
        losses.loss_part_id(high_all, both_labels, model.part_bank),
        eq, cfg.weights)


class Trainer:
    def __init__(self, cfg: TrainConfig, dataset: Dataset, out_dir,
                 quiet: bool = True):
        cfg.validate()
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.quiet = quiet

        ids = dataset.identities
        if cfg.eval_identities > 0:
            train_ids = ids[:-cfg.eval_identities]
            self.eval_dataset = dataset.subset(ids[-cfg.eval_identities:])
        else:
            train_ids = ids
            self.eval_dataset = None
        self.dataset = dataset.subset(train_ids)
        self.id_map = {y: j for j, y in enumerate(train_ids)}
        self.num_classes = len(train_ids)

        torch.manual_seed(cfg.seed)
        self.model = ReIDModel(cfg, self.num_classes)
        self.optimizer = optim.Adam(self.model.parameters(), lr=cfg.lr)
        self.scheduler = optim.lr_scheduler.LambdaLR(
            self.optimizer, self._lr_factor)
        self.batch_rng = np.random.default_rng([cfg.seed, 1])
        self.mix_rng = np.random.default_rng([cfg.seed, 2])
        self.transform_rng = np.random.default_rng([cfg.seed, 3])
        self.epoch = 0
        self.boundaries = (list(cfg.step_boundaries) if cfg.step_boundaries
                           else step_boundaries(cfg.epochs, cfg.num_steps))
        per_mod = sum(len(v) for (_, m), v in self.dataset.by_group.items()
                      if m == "V")
        self.iters_per_epoch = max(
            1, per_mod // (cfg.batch_identities * cfg.batch_images_per_identity))
        self._metrics_path = self.out_dir / "metrics.csv"
        self._epochs_path = self.out_dir / "epochs.csv"
        with open(self._metrics_path, "w", newline="") as fh:
            csv.writer(fh).writerow(["epoch", "step_t"] + LOSS_COLUMNS)
        with open(self._epochs_path, "w", newline="") as fh:
            csv.writer(fh).writerow(["epoch", "step_t", "mean_total", "mmd_gap"])

    def _lr_factor(self, epoch: int) -> float:
        cfg = self.cfg
        if cfg.warmup_epochs > 0 and epoch < cfg.warmup_epochs:
            return (epoch + 1) / (cfg.warmup_epochs + 1)
        m1 = math.ceil(cfg.milestone_fractions[0] * cfg.epochs)
        m2 = math.ceil(cfg.milestone_fractions[1] * cfg.epochs)
        if epoch >= m2:
            return 0.01
        if epoch >= m1:
            return 0.1
        return 1.0

    def _labels(self, batch: Batch) -> torch.Tensor:
        return torch.as_tensor([self.id_map[int(y)] for y in batch.identities])

    def train_one_epoch(self) -> float:
        cfg = self.cfg
        t = step_for_epoch(self.epoch, self.boundaries, cfg.num_steps)
        self.model.train()
        totals = []
        rows = []
        for _ in range(self.iters_per_epoch):
            batch = sample_batch(self.dataset, cfg.batch_identities,
                                 cfg.batch_images_per_identity, self.batch_rng)
            terms = compute_batch_loss(self.model, batch, t, cfg,
                                       self._labels(batch), self.mix_rng,
                                       self.transform_rng)
            total = terms["total"]
            if not torch.isfinite(total):
                dump = {k: float(v.detach()) for k, v in terms.items()}
                raise NonFiniteLossError(f"non-finite loss at epoch "
                                         f"{self.epoch}: {dump}")
            self.optimizer.zero_grad()
            total.backward()
            if cfg.clip_grad_norm > 0:
                torch.nn.utils.clip_grad_norm_(self.model.parameters(),
                                               cfg.clip_grad_norm)
            self.optimizer.step()
            totals.append(float(total.detach()))
            rows.append([self.epoch, t]
                        + [float(terms[c].detach()) for c in LOSS_COLUMNS])
        with open(self._metrics_path, "a", newline="") as fh:
            csv.writer(fh).writerows(rows)
        gap = self._train_mmd_gap()
        with open(self._epochs_path, "a", newline="") as fh:
            csv.writer(fh).writerow(
                [self.epoch, t, float(np.mean(totals)), gap])
        if not self.quiet:
            print(f"epoch {self.epoch:3d} t={t} mean_loss={np.mean(totals):.4f} "
                  f"mmd={gap:.4f}")
        self.scheduler.step()
        self.epoch += 1
        return float(np.mean(totals))

    def _train_mmd_gap(self, max_images: int = 64) -> float:
        ev, _ = embed_dataset(self.model, self.dataset, "V", max_images)
        ei, _ = embed_dataset(self.model, self.dataset, "I", max_images)
        return mmd_gap(ev, ei)

    def train(self):
        while self.epoch < self.cfg.epochs:
            self.train_one_epoch()
            if (self.cfg.checkpoint_every
                    and self.epoch % self.cfg.checkpoint_every == 0
                    and self.epoch < self.cfg.epochs):
                self.save_checkpoint(self.out_dir / f"ckpt_{self.epoch:04d}.pt")
        return self.save_checkpoint(self.out_dir / "ckpt_final.pt")

    def save_checkpoint(self, path) -> Path:
        t = step_for_epoch(max(self.epoch - 1, 0), self.boundaries,
                           self.cfg.num_steps)
        torch.save({
            "version": 1,
            "model": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "scheduler": self.scheduler.state_dict(),
            "epoch": self.epoch,
            "step_t": t,
            "config": _as_plain(self.cfg),
            "config_hash": config_hash(self.cfg),
            "num_classes": self.num_classes,
            "id_map": self.id_map,
            "torch_rng": torch.get_rng_state(),
            "batch_rng": self.batch_rng.bit_generator.state,
            "mix_rng": self.mix_rng.bit_generator.state,
            "transform_rng": self.transform_rng.bit_generator.state,
        }, path)
        return Path(path)

    def restore(self, path):
        state = torch.load(path, weights_only=False)
        self.model.load_state_dict(state["model"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.scheduler.load_state_dict(state["scheduler"])
        self.epoch = state["epoch"]
        torch.set_rng_state(state["torch_rng"])
        self.batch_rng.bit_generator.state = state["batch_rng"]
        self.mix_rng.bit_generator.state = state["mix_rng"]
        self.transform_rng.bit_generator.state = state["transform_rng"]
        return state


def load_model(checkpoint_path) -> tuple[ReIDModel, dict]:
    from .config import _from_dict  # local import to avoid cycle at module load
    state = torch.load(checkpoint_path, weights_only=False)
    cfg = _from_dict(TrainConfig, state["config"])
    model = ReIDModel(cfg, state["num_classes"])
    model.load_state_dict(state["model"])
    model.eval()
    return model, state


def embed_dataset(model: ReIDModel, dataset: Dataset, modality: str,
                  max_images: int | None = None, batch_size: int = 64):
    """Descriptors + labels + cameras for every image of one modality."""
    entries = [e for e in dataset.entries if e.modality == modality]
    if max_images is not None:
        entries = entries[:max_images]
    embs, labels, cams = [], [], []
    for start in range(0, len(entries), batch_size):
        chunk = entries[start:start + batch_size]
        images = torch.from_numpy(
            np.stack([dataset.load_image(e) for e in chunk]))
        embs.append(model.embed_images(images, modality).numpy())
        labels.extend(e.identity for e in chunk)
        cams.extend(e.camera for e in chunk)
    return (np.concatenate(embs),
            {"labels": np.asarray(labels), "cameras": np.asarray(cams)})
