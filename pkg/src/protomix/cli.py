"""Command-line entry point.

Subcommands: gen-data, train, eval, verify-mi, plot. Exit codes: 0 ok,
1 runtime failure, 2 usage/config error. The metrics CSV written by `train`
has columns: epoch, step_t, reid, lc, hc, diverse, compact, part_id,
equivariance, total.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import (ConfigError, DatasetSpec, load_dataset_spec,
                     load_train_config, dump_config)
from .infobounds import run_verification
from .synthdata import generate_dataset, load_manifest


def _cmd_gen_data(args) -> int:
    spec = load_dataset_spec(args.spec) if args.spec else DatasetSpec()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(spec, out / "resolved-config.yaml")
    manifest = generate_dataset(spec, out)
    print(f"wrote {manifest}")
    return 0


def _cmd_train(args) -> int:
    from .train import Trainer  # deferred: torch import is slow

    cfg = load_train_config(args.config) if args.config else None
    if cfg is None:
        from .config import TrainConfig
        cfg = TrainConfig()
    dataset = load_manifest(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "resolved-config.yaml")
    print(f"training: K={cfg.num_prototypes} T={cfg.num_steps} "
          f"direction={cfg.direction} epochs={cfg.epochs} seed={cfg.seed}")
    trainer = Trainer(cfg, dataset, out, quiet=False)
    ckpt = trainer.train()
    print(f"wrote {ckpt}")
    return 0


def _cmd_eval(args) -> int:
    from .evaluation import evaluate
    from .train import embed_dataset, load_model

    model, _ = load_model(args.checkpoint)
    dataset = load_manifest(args.data)
    q_mod, g_mod = ("V", "I") if args.direction == "v2i" else ("I", "V")
    q_emb, q_meta = embed_dataset(model, dataset, q_mod)
    g_emb, g_meta = embed_dataset(model, dataset, g_mod)
    protocol = "single_shot" if args.protocol == "single" else "multi_shot"
    result = evaluate(q_emb, q_meta["labels"], g_emb, g_meta["labels"],
                      protocol=protocol, direction=args.direction,
                      gallery_cameras=g_meta["cameras"], seed=args.seed)
    row = result.as_row()
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "eval.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=row.keys())
            w.writeheader()
            w.writerow(row)
    print(f"{args.direction} {protocol}: "
          f"R1={result.rank_1:.2f} R5={result.rank_5:.2f} "
          f"R10={result.rank_10:.2f} R20={result.rank_20:.2f} "
          f"mAP={result.mAP:.2f} (excluded queries: {result.excluded_queries})")
    return 0


def _cmd_verify_mi(args) -> int:
    report = run_verification(args.trials, args.seed)
    ok = (report["min_lower_bound_gap"] >= -1e-9
          and abs(report["xor_gap"] - np.log(2)) <= 1e-10
          and report["max_kl_identity_deviation"] <= 1e-10)
    print(json.dumps(report, indent=2, default=float))
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def _cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import torch
    from PIL import Image

    from .evaluation import project_2d
    from .train import embed_dataset, load_model

    model, _ = load_model(args.checkpoint)
    dataset = load_manifest(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    # 2-D projection of embeddings, colored by identity, marker by modality
    coords, metas = [], []
    for modality in ("V", "I"):
        emb, meta = embed_dataset(model, dataset, modality)
        coords.append(emb)
        metas.append((modality, meta))
    proj = project_2d(np.concatenate(coords))
    with open(out / "projection.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "identity", "modality"])
        i = 0
        for modality, meta in metas:
            for lab in meta["labels"]:
                w.writerow([proj[i, 0], proj[i, 1], int(lab), modality])
                i += 1
    fig, ax = plt.subplots(figsize=(6, 6))
    i = 0
    for modality, meta in metas:
        n = len(meta["labels"])
        ax.scatter(proj[i:i + n, 0], proj[i:i + n, 1], c=meta["labels"],
                   marker="o" if modality == "V" else "x", cmap="tab20", s=12)
        i += n
    ax.set_title("embedding projection (o = visible, x = infrared)")
    fig.savefig(out / "projection.png", dpi=120)
    plt.close(fig)

    # modality-gap curve from the training log, when present
    epochs_csv = Path(args.checkpoint).parent / "epochs.csv"
    if epochs_csv.exists():
        rows = list(csv.DictReader(open(epochs_csv)))
        if rows:
            fig, ax = plt.subplots()
            ax.plot([int(r["epoch"]) for r in rows],
                    [float(r["mmd_gap"]) for r in rows])
            ax.set_xlabel("epoch")
            ax.set_ylabel("modality center distance")
            fig.savefig(out / "mmd_curve.png", dpi=120)
            plt.close(fig)

    # per-image mask grids for a few samples
    n_dump = min(args.masks, len(dataset.entries))
    for e in dataset.entries[:n_dump]:
        image = torch.from_numpy(dataset.load_image(e)).unsqueeze(0)
        model.eval()
        with torch.no_grad():
            feats = model.backbone(image, e.modality)
            masks = model.mask_head(feats.high, feats.high_hw)
        h, w = feats.high_hw
        k = masks.shape[2]
        grid = masks[0].T.reshape(k, h, w).numpy()
        panel = np.concatenate([g / max(g.max(), 1e-8) for g in grid], axis=1)
        name = Path(e.path).stem
        Image.fromarray((panel * 255).astype(np.uint8)).save(
            out / f"masks_{name}.png")
    print(f"wrote plots to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protomix",
        description="Cross-modal person re-identification with part "
                    "prototypes and gradual bidirectional prototype mixing.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic paired-modality dataset")
    p.add_argument("--spec", help="dataset spec YAML (defaults used if omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="train config YAML (defaults used if omitted)")
    p.add_argument("--data", required=True, help="manifest path")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="cross-modal retrieval evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--direction", choices=["v2i", "i2v"], default="i2v")
    p.add_argument("--protocol", choices=["single", "multi"], default="multi")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("verify-mi", help="brute-force mutual-information bound checks")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify_mi)

    p = sub.add_parser("plot", help="projection, modality-gap curve, mask dumps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--masks", type=int, default=4,
                   help="number of per-image mask grids to dump")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - one-line cause per contract
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
