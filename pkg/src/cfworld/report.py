"""Manifest summaries: JSON and CSV tables plus matplotlib figures."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .assemble import Manifest, stats  # noqa: E402
from .render import to_display  # noqa: E402
from .render.imageio import read_image  # noqa: E402

CSV_FIELDS = ["sample_id", "room_uuid", "camera_id", "camera_tier", "object_id", "object_class",
              "mask_area_fraction", "split"]


def write_records_csv(m: Manifest, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
        wr.writeheader()
        for r in m.records:
            wr.writerow(r.to_dict())
    return path


def mask_histogram(m: Manifest, path, bins: int = 30) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    fr = np.array([r.mask_area_fraction for r in m.records], dtype=float)
    if len(fr):
        ax.hist(fr * 100.0, bins=bins, color="#4477aa")
    ax.axvline(float(m.header.get("min_mask", 0.003)) * 100.0, color="#cc3311", ls="--", label="min mask")
    ax.set_xlabel("mask area (% of image)")
    ax.set_ylabel("records")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def tier_counts(m: Manifest, path) -> Path:
    rep = stats(m)
    fig, ax = plt.subplots(figsize=(4, 3))
    names = list(rep.per_tier) or ["(none)"]
    ax.bar(names, [rep.per_tier.get(n, 0) for n in names], color="#228833")
    ax.set_ylabel("records")
    ax.tick_params(axis="x", labelrotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def sample_sheet(m: Manifest, path, n: int = 4) -> Path:
    """Original, mask and target for the first ``n`` records."""
    recs = m.records[:n]
    rows = max(1, len(recs))
    fig, axes = plt.subplots(rows, 3, figsize=(6, 2 * rows), squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")
    for k, r in enumerate(recs):
        for j, key in enumerate(("orig", "mask", "target")):
            img = read_image(Path(m.root) / r.paths[key])
            shown = to_display(img) if key != "mask" else img
            axes[k, j].imshow(shown, cmap="gray" if key == "mask" else None, vmin=0, vmax=255 if key != "mask" else 1)
            if k == 0:
                axes[k, j].set_title(key, fontsize=9)
        axes[k, 0].text(0, -2, r.object_id, fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def write_report(m: Manifest, out_dir, figures: bool = True) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = {
        "stats": out_dir / "stats.json",
        "records": write_records_csv(m, out_dir / "records.csv"),
    }
    out["stats"].write_text(json.dumps(stats(m).to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    if figures:
        out["mask_histogram"] = mask_histogram(m, out_dir / "mask_area_hist.png")
        out["tier_counts"] = tier_counts(m, out_dir / "tier_counts.png")
        if m.records:
            out["samples"] = sample_sheet(m, out_dir / "samples.png")
    return out
