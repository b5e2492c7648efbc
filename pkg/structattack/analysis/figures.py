# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import os
import json
import torch
import numpy as np
import pandas as pd
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from typing import Dict, Iterable, List, Optional  # noqa: E402
from loguru import logger  # noqa: E402

from structattack.analysis.maps import PooledMap  # noqa: E402
from structattack.shared.errors import DataError  # noqa: E402

COLORMAP = "jet"
MASK_COLORMAP = "gray"


def normalize_for_display(values: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; constant maps render as zeros."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi - lo <= 0:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def save_heatmap(values, path: str, title: Optional[str] = None, cmap: str = COLORMAP) -> str:
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(normalize_for_display(values), cmap=cmap, vmin=0.0, vmax=1.0)
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def emit_figures(maps: Iterable[PooledMap], out_dir: str, prefix: str = "") -> List[dict]:
    """
    One PNG per (sample, map). Returns manifest entries with the raw
    statistics of each map (before display normalization).
    """
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for pooled in maps:
        for sample in range(len(pooled)):
            name = f"{prefix}{pooled.kind}_b{pooled.block_index}_s{sample:03d}.png"
            path = save_heatmap(
                pooled[sample].cpu().numpy(),
                os.path.join(out_dir, name),
                title=f"{pooled.kind} block {pooled.block_index}",
            )
            entries.append({"file": os.path.basename(path), **pooled.stats(sample)})
    return entries


def emit_masks(masks: Dict[int, torch.Tensor], out_dir: str, prefix: str = "diff") -> List[dict]:
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for block, mask in sorted(masks.items()):
        for sample in range(mask.shape[0]):
            name = f"{prefix}_b{block}_s{sample:03d}.png"
            m = mask[sample].cpu().numpy()
            fig, ax = plt.subplots(figsize=(4, 4))
            ax.imshow(m, cmap=MASK_COLORMAP, vmin=0, vmax=1)
            ax.set_axis_off()
            fig.savefig(os.path.join(out_dir, name), bbox_inches="tight")
            plt.close(fig)
            entries.append(
                {"file": name, "block": block, "kind": prefix, "sample": sample, "fraction": float(m.mean())}
            )
    return entries


def emit_perturbations(x: torch.Tensor, x_adv: torch.Tensor, out_dir: str) -> List[dict]:
    """Benign, adversarial and (display-normalized) perturbation side by side."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for sample in range(x.shape[0]):
        benign = x[sample].permute(1, 2, 0).cpu().numpy()
        adv = x_adv[sample].permute(1, 2, 0).cpu().numpy()
        delta = adv - benign
        fig, axes = plt.subplots(1, 3, figsize=(9, 3))
        for ax, image, title in zip(
            axes, (benign, adv, normalize_for_display(delta)), ("benign", "adversarial", "perturbation")
        ):
            ax.imshow(np.clip(image, 0.0, 1.0))
            ax.set_title(title)
            ax.set_axis_off()
        name = f"perturbation_s{sample:03d}.png"
        fig.savefig(os.path.join(out_dir, name), bbox_inches="tight")
        plt.close(fig)
        entries.append(
            {"file": name, "kind": "perturbation", "sample": sample, "linf_255": float(np.abs(delta).max() * 255)}
        )
    return entries


def write_manifest(entries: List[dict], out_dir: str, **context) -> str:
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump({**context, "figures": entries}, f, indent=2, default=str)
    logger.success(f"Wrote {len(entries)} figures and manifest to {out_dir}")
    return path


def read_training_log(events_path: str) -> pd.DataFrame:
    if not os.path.isfile(events_path):
        raise DataError(f"Training log not found at {events_path}")
    df = pd.read_json(events_path, lines=True)
    if df.empty:
        raise DataError(f"Training log {events_path} is empty")
    return df.set_index("iteration")


def plot_training_log(events_path: str, out_dir: str) -> List[str]:
    """Loss curves, per-block hinges and monitor cosine from a line-delimited training log."""
    df = read_training_log(events_path)
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    fig, ax = plt.subplots(figsize=(10, 6))
    for column in ("adv", "distill", "total"):
        ax.plot(df.index, df[column], label=column)
    ax.set_xlabel("Iteration")
    ax.set_ylabel("Loss")
    ax.set_title(f"Training losses ({df['mode'].iloc[0]})")
    ax.legend()
    paths.append(os.path.join(out_dir, "losses.png"))
    fig.savefig(paths[-1])
    plt.close(fig)

    hinges = df[df["per_block_distill"].map(len) > 0]
    if not hinges.empty:
        expanded = pd.DataFrame(
            hinges["per_block_distill"].tolist(),
            index=hinges.index,
            columns=[f"block {b}" for b in hinges["blocks"].iloc[0]],
        )
        fig, ax = plt.subplots(figsize=(10, 6))
        expanded.plot(ax=ax)
        ax.set_xlabel("Iteration")
        ax.set_ylabel("Hinge")
        ax.set_title("Per-block distillation hinge")
        paths.append(os.path.join(out_dir, "hinges.png"))
        fig.savefig(paths[-1])
        plt.close(fig)

    monitors = df["monitor_cosine"].dropna() if "monitor_cosine" in df else pd.Series(dtype=float)
    if not monitors.empty:
        fig, ax = plt.subplots(figsize=(10, 6))
        ax.plot(monitors.index, monitors.values, marker="o", label="student")
        if "monitor_cosine_teacher" in df and df["monitor_cosine_teacher"].notna().any():
            teacher = df["monitor_cosine_teacher"].dropna()
            ax.plot(teacher.index, teacher.values, marker="o", label="teacher")
        ax.set_xlabel("Iteration")
        ax.set_ylabel("Surrogate feature cosine")
        ax.set_title("Monitor cosine")
        ax.legend()
        paths.append(os.path.join(out_dir, "monitor_cosine.png"))
        fig.savefig(paths[-1])
        plt.close(fig)

    logger.success(f"Saved {len(paths)} training plots to {out_dir}")
    return paths
