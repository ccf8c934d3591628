"""Procedural paired-modality person data, manifest I/O, and batch sampling.

Each synthetic identity is a composite sprite of vertically stacked attribute
bands with identity-specific colors and stripe textures. The visible rendering
keeps 3 channels; the infrared rendering collapses channels through a
luminance-like mix with per-image gamma jitter plus additive noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .config import DatasetSpec

MODALITIES = ("V", "I")

# fixed channel mix for the infrared rendering
_IR_MIX = np.array([0.50, 0.35, 0.15])


class CoverageError(ValueError):
    """A dataset is missing one modality for some identity."""


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    identity: int
    modality: str
    camera: int


@dataclass
class Batch:
    images_v: np.ndarray   # (N_b*N_p, 3, H, W) float32
    images_i: np.ndarray
    identities: np.ndarray  # (N_b*N_p,) shared by both modality stacks
    cameras_v: np.ndarray
    cameras_i: np.ndarray


def _identity_style(spec: DatasetSpec, identity: int):
    rng = np.random.default_rng([spec.seed, 9173, identity])
    k = spec.num_body_parts
    colors = rng.uniform(0.15, 1.0, size=(k, 3))
    freqs = rng.integers(1, 5, size=k)
    phases = rng.uniform(0, 2 * np.pi, size=k)
    return colors, freqs, phases


def _render_person(spec: DatasetSpec, identity: int, rng: np.random.Generator):
    """Render one visible-light sprite (H, W, 3) in [0, 1] with pose jitter."""
    h, w, k = spec.image_height, spec.image_width, spec.num_body_parts
    colors, freqs, phases = _identity_style(spec, identity)
    img = np.zeros((h, w, 3))
    rows = np.linspace(0, h, k + 1).astype(int)
    cols = np.arange(w)
    for band in range(k):
        r0, r1 = rows[band], rows[band + 1]
        stripe = 0.5 + 0.5 * np.sin(2 * np.pi * freqs[band] * cols / w + phases[band])
        img[r0:r1] = colors[band] * (0.6 + 0.4 * stripe)[None, :, None]
    # small translation / scale jitter
    dy = int(rng.integers(-h // 12, h // 12 + 1))
    dx = int(rng.integers(-w // 8, w // 8 + 1))
    scale = float(rng.uniform(0.92, 1.08))
    sh, sw = max(2, int(round(h * scale))), max(2, int(round(w * scale)))
    ys = np.clip((np.arange(h) - dy) * sh // h, 0, sh - 1)
    xs = np.clip((np.arange(w) - dx) * sw // w, 0, sw - 1)
    scaled = np.asarray(
        Image.fromarray((img * 255).astype(np.uint8)).resize((sw, sh), Image.BILINEAR),
        dtype=np.float64) / 255.0
    return scaled[ys][:, xs]


def _to_infrared(visible: np.ndarray, noise_level: float, rng: np.random.Generator):
    gamma = float(rng.uniform(0.7, 1.4))
    lum = np.clip(visible @ _IR_MIX, 0, 1) ** gamma
    ir = np.repeat(lum[:, :, None], 3, axis=2)
    ir += rng.normal(0, noise_level, size=ir.shape)
    return np.clip(ir, 0, 1)


def nominal_band_labels(spec: DatasetSpec) -> np.ndarray:
    """Per-row ground-truth band index (ignores the small pose jitter)."""
    rows = np.linspace(0, spec.image_height, spec.num_body_parts + 1).astype(int)
    labels = np.zeros(spec.image_height, dtype=int)
    for band in range(spec.num_body_parts):
        labels[rows[band]:rows[band + 1]] = band
    return labels


def generate_dataset(spec: DatasetSpec, out_dir) -> Path:
    """Write PNG images plus a JSONL manifest; returns the manifest path."""
    spec.validate()
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for identity in range(spec.num_identities):
        for j in range(spec.images_per_identity_per_modality):
            for modality in MODALITIES:
                rng = np.random.default_rng(
                    [spec.seed, identity, j, 0 if modality == "V" else 1])
                visible = _render_person(spec, identity, rng)
                if modality == "V":
                    img = np.clip(
                        visible + rng.normal(0, spec.noise_level / 2, visible.shape),
                        0, 1)
                    camera = j % 2
                else:
                    img = _to_infrared(visible, spec.noise_level, rng)
                    camera = 2 + j % 2
                rel = f"images/id{identity:04d}_{modality}_{j:03d}.png"
                Image.fromarray((img * 255).astype(np.uint8)).save(out / rel)
                entries.append(ManifestEntry(rel, identity, modality, camera))
    manifest = out / "manifest.jsonl"
    write_manifest(entries, manifest)
    return manifest


def write_manifest(entries, path):
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(
                {"path": e.path, "identity": e.identity,
                 "modality": e.modality, "camera": e.camera}) + "\n")


def read_manifest(path):
    entries = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            entries.append(ManifestEntry(
                rec["path"], int(rec["identity"]), rec["modality"], int(rec["camera"])))
    return entries


class Dataset:
    """In-memory image index grouped by (identity, modality)."""

    def __init__(self, root: Path, entries: list[ManifestEntry]):
        self.root = Path(root)
        self.entries = entries
        self.by_group: dict[tuple[int, str], list[ManifestEntry]] = {}
        for e in entries:
            self.by_group.setdefault((e.identity, e.modality), []).append(e)
        self.identities = sorted({e.identity for e in entries})
        for identity in self.identities:
            for modality in MODALITIES:
                if (identity, modality) not in self.by_group:
                    raise CoverageError(
                        f"identity {identity} has no {modality} images")
        self._cache: dict[str, np.ndarray] = {}

    @property
    def num_identities(self) -> int:
        return len(self.identities)

    def load_image(self, entry: ManifestEntry) -> np.ndarray:
        """Image as (3, H, W) float32 in [0, 1]."""
        if entry.path not in self._cache:
            full = self.root / entry.path
            try:
                with Image.open(full) as im:
                    arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
            except OSError as exc:
                raise OSError(f"cannot read image '{full}': {exc}") from exc
            self._cache[entry.path] = arr.transpose(2, 0, 1)
        return self._cache[entry.path]

    def subset(self, identities) -> "Dataset":
        keep = set(identities)
        return Dataset(self.root, [e for e in self.entries if e.identity in keep])


def load_manifest(path) -> Dataset:
    path = Path(path)
    return Dataset(path.parent, read_manifest(path))


def convert_image_dir(root, ir_cameras=(3, 6)) -> Path:
    """Convert a SYSU-style tree (root/cam<j>/<id>/*.png) to a native manifest."""
    root = Path(root)
    entries = []
    for cam_dir in sorted(root.glob("cam*")):
        cam = int(cam_dir.name.replace("cam", ""))
        modality = "I" if cam in ir_cameras else "V"
        for id_dir in sorted(p for p in cam_dir.iterdir() if p.is_dir()):
            identity = int(id_dir.name)
            for img in sorted(id_dir.iterdir()):
                entries.append(ManifestEntry(
                    str(img.relative_to(root)), identity, modality, cam))
    manifest = root / "manifest.jsonl"
    write_manifest(entries, manifest)
    return manifest


def sample_batch(dataset: Dataset, n_identities: int, n_per_identity: int,
                 rng: np.random.Generator) -> Batch:
    """Identity-balanced cross-modal batch; short groups resample with replacement."""
    if n_identities > dataset.num_identities:
        raise ValueError(
            f"requested {n_identities} identities but dataset has "
            f"{dataset.num_identities}")
    chosen = rng.choice(dataset.identities, size=n_identities, replace=False)
    images = {"V": [], "I": []}
    cameras = {"V": [], "I": []}
    labels = []
    for identity in chosen:
        labels.extend([identity] * n_per_identity)
        for modality in MODALITIES:
            group = dataset.by_group[(identity, modality)]
            replace = len(group) < n_per_identity
            idx = rng.choice(len(group), size=n_per_identity, replace=replace)
            for i in idx:
                images[modality].append(dataset.load_image(group[i]))
                cameras[modality].append(group[i].camera)
    return Batch(
        images_v=np.stack(images["V"]).astype(np.float32),
        images_i=np.stack(images["I"]).astype(np.float32),
        identities=np.asarray(labels),
        cameras_v=np.asarray(cameras["V"]),
        cameras_i=np.asarray(cameras["I"]),
    )
