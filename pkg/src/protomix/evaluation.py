"""Cross-modal retrieval metrics (CMC / mAP), modality-gap measurement, and
deterministic 2-D projection for plots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RetrievalResult:
    rank_1: float
    rank_5: float
    rank_10: float
    rank_20: float
    mAP: float
    protocol: str
    direction: str
    excluded_queries: int = 0

    def as_row(self) -> dict:
        return {"direction": self.direction, "protocol": self.protocol,
                "R1": self.rank_1, "R5": self.rank_5, "R10": self.rank_10,
                "R20": self.rank_20, "mAP": self.mAP}


def match_score(f_query: np.ndarray, f_gallery: np.ndarray) -> float:
    """Cosine similarity of two descriptors."""
    num = float(np.dot(f_query, f_gallery))
    den = float(np.linalg.norm(f_query) * np.linalg.norm(f_gallery))
    return num / den


def _similarity_matrix(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    qn = queries / np.linalg.norm(queries, axis=1, keepdims=True)
    gn = gallery / np.linalg.norm(gallery, axis=1, keepdims=True)
    return qn @ gn.T


def _cmc_map(sim: np.ndarray, query_labels: np.ndarray,
             gallery_labels: np.ndarray, ranks=(1, 5, 10, 20)):
    """Per-query ranking with ties broken by gallery index (stable sort on -sim)."""
    n_gallery = sim.shape[1]
    cmc_hits = np.zeros(len(ranks))
    aps = []
    excluded = 0
    for qi in range(sim.shape[0]):
        if query_labels[qi] not in gallery_labels:
            excluded += 1
            continue
        order = np.argsort(-sim[qi], kind="stable")
        correct = gallery_labels[order] == query_labels[qi]
        first_hit = int(np.flatnonzero(correct)[0])
        for ri, r in enumerate(ranks):
            if first_hit < min(r, n_gallery):
                cmc_hits[ri] += 1
        hit_positions = np.flatnonzero(correct)
        precision = (np.arange(len(hit_positions)) + 1) / (hit_positions + 1)
        aps.append(precision.mean())
    n_valid = sim.shape[0] - excluded
    if n_valid == 0:
        raise ValueError("no query identity appears in the gallery")
    cmc = 100.0 * cmc_hits / n_valid
    return cmc, 100.0 * float(np.mean(aps)), excluded


def evaluate(query_embeddings: np.ndarray, query_labels: np.ndarray,
             gallery_embeddings: np.ndarray, gallery_labels: np.ndarray,
             protocol: str = "multi_shot", direction: str = "I->V",
             gallery_cameras: np.ndarray | None = None,
             repetitions: int = 10, seed: int = 0) -> RetrievalResult:
    """CMC rank-k and mAP for a cross-modal query/gallery split.

    single_shot keeps one gallery image per (identity, camera), redrawn with a
    seeded rng and averaged over `repetitions` draws.
    """
    sim = _similarity_matrix(query_embeddings, gallery_embeddings)
    if protocol == "multi_shot":
        cmc, mean_ap, excluded = _cmc_map(sim, query_labels, gallery_labels)
    elif protocol == "single_shot":
        if gallery_cameras is None:
            gallery_cameras = np.zeros(len(gallery_labels), dtype=int)
        rng = np.random.default_rng(seed)
        acc = np.zeros(4)
        ap_acc = 0.0
        excluded = 0
        for _ in range(repetitions):
            keep = []
            groups: dict[tuple, list[int]] = {}
            for gi, (lab, cam) in enumerate(zip(gallery_labels, gallery_cameras)):
                groups.setdefault((lab, cam), []).append(gi)
            for idxs in groups.values():
                keep.append(idxs[rng.integers(len(idxs))])
            keep = np.sort(np.asarray(keep))
            cmc, mean_ap, excluded = _cmc_map(
                sim[:, keep], query_labels, gallery_labels[keep])
            acc += cmc
            ap_acc += mean_ap
        cmc, mean_ap = acc / repetitions, ap_acc / repetitions
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    return RetrievalResult(cmc[0], cmc[1], cmc[2], cmc[3], mean_ap,
                           protocol, direction, excluded)


def mmd_gap(features_v: np.ndarray, features_i: np.ndarray,
            identities_v: np.ndarray | None = None,
            identities_i: np.ndarray | None = None,
            kernel: str | None = None) -> float:
    """Distance between modality feature centers.

    Default: Euclidean distance between the two mean vectors. With identity
    labels, center distances are averaged per identity. kernel="rbf" switches
    to an unbiased-free (biased V-statistic) RBF kernel MMD^2 estimate.
    """
    if kernel == "rbf":
        z = np.concatenate([features_v, features_i])
        d2 = ((z[:, None, :] - z[None, :, :]) ** 2).sum(-1)
        med = np.median(d2[d2 > 0]) if (d2 > 0).any() else 1.0
        k = np.exp(-d2 / med)
        nv = len(features_v)
        kvv, kii, kvi = k[:nv, :nv], k[nv:, nv:], k[:nv, nv:]
        return float(kvv.mean() + kii.mean() - 2 * kvi.mean())
    if identities_v is not None and identities_i is not None:
        ids = np.intersect1d(np.unique(identities_v), np.unique(identities_i))
        gaps = [np.linalg.norm(features_v[identities_v == y].mean(0)
                               - features_i[identities_i == y].mean(0))
                for y in ids]
        return float(np.mean(gaps))
    return float(np.linalg.norm(features_v.mean(axis=0) - features_i.mean(axis=0)))


def project_2d(embeddings: np.ndarray) -> np.ndarray:
    """Top-2 PCA projection with a deterministic sign convention (the first
    nonzero loading of each component is positive)."""
    x = embeddings - embeddings.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    comps = vt[:2]
    if comps.shape[0] < 2:
        comps = np.vstack([comps, np.zeros_like(comps[0])])
    for i in range(2):
        nz = np.flatnonzero(np.abs(comps[i]) > 1e-12)
        if len(nz) and comps[i, nz[0]] < 0:
            comps[i] = -comps[i]
    return x @ comps.T
