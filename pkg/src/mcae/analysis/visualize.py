"""Reconstruction grids, gradient-weighted token saliency, and embedding dumps."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from ..model import MCAE, as_tensor
from ..tokenizer import full_plan, patchify, sample_mask, unpatchify
from .tsne import EmbeddingCloud

MASK_GRAY = 0.5


def reconstruct(
    model: MCAE,
    images: np.ndarray,
    mask_ratio: float,
    rng: np.random.Generator,
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(original, masked view, reconstruction) HWC triplets for N x 3 x S x S ``images``.

    The reconstruction keeps original pixels at visible patches and pastes the
    decoder's predictions at masked ones.
    """
    p = model.enc_cfg.patch_size
    n = model.enc_cfg.num_patches
    out = []
    model.eval()
    for img in images:
        hwc = np.ascontiguousarray(img.transpose(1, 2, 0))
        plan = sample_mask(n, mask_ratio, rng) if mask_ratio > 0 else full_plan(n)
        seq = patchify(hwc, p)
        with torch.no_grad():
            _, pred, _ = model.forward_masked(as_tensor(img[None], model), [plan])
        pred_tokens = pred[0].double().numpy()

        masked = seq.tokens.copy()
        masked[plan.masked_idx] = MASK_GRAY
        recon = seq.tokens.copy()
        recon[plan.masked_idx] = np.clip(pred_tokens[plan.masked_idx], 0.0, 1.0)
        out.append(
            (
                hwc,
                unpatchify(type(seq)(masked, seq.grid)),
                unpatchify(type(seq)(recon.astype(seq.tokens.dtype), seq.grid)),
            )
        )
    return out


def image_grid(rows: Sequence[Sequence[np.ndarray]], pad: int = 2) -> np.ndarray:
    """Tile equally sized HWC images into one array with ``pad`` white pixels between cells."""
    h, w, _ = rows[0][0].shape
    n_rows, n_cols = len(rows), len(rows[0])
    grid = np.ones((n_rows * h + (n_rows + 1) * pad, n_cols * w + (n_cols + 1) * pad, 3))
    for r, row in enumerate(rows):
        for c, img in enumerate(row):
            top, left = pad + r * (h + pad), pad + c * (w + pad)
            grid[top : top + h, left : left + w] = img
    return grid


def save_png(image: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)
    if arr.ndim == 2:
        Image.fromarray(arr, mode="L").save(path)
    else:
        Image.fromarray(arr).save(path)
    return path


def render_reconstructions(
    model: MCAE,
    images: np.ndarray,
    mask_ratio: float,
    out_path: str | Path,
    seed: int = 0,
    has_decoder: bool = True,
) -> tuple[Path, np.ndarray]:
    if not has_decoder:
        raise ValueError("reconstruction needs a checkpoint that kept its decoder")
    triplets = reconstruct(model, images, mask_ratio, np.random.default_rng(seed))
    grid = image_grid(triplets)
    return save_png(grid, out_path), grid


def attention_map(model: MCAE, image: np.ndarray, target_class: int) -> np.ndarray:
    """Gradient-weighted activation map over the token grid, upsampled to S x S.

    Activations are the final transformer block's token outputs; channel
    weights are the token-averaged gradients of the target logit. The
    rectified map is min-max normalized, and a flat map becomes all zeros.
    """
    model.eval()
    x = as_tensor(image[None], model)
    tokens = model.tokens(x)
    idx = torch.arange(tokens.shape[1])[None]
    latent, acts = model.encode(tokens, idx, return_pre_norm=True)
    acts.retain_grad()
    logits = model.head(latent.mean(dim=1))
    model.zero_grad(set_to_none=True)
    logits[0, target_class].backward()
    grads = acts.grad[0]  # n x C
    weights = grads.mean(dim=0)
    cam = F.relu(acts[0].detach() @ weights)
    g = model.enc_cfg.grid_size
    size = model.enc_cfg.image_size
    cam = cam.reshape(1, 1, g, g).double()
    up = F.interpolate(cam, size=(size, size), mode="bilinear", align_corners=False)[0, 0].numpy()
    lo, hi = up.min(), up.max()
    if hi - lo <= 0:
        return np.zeros((size, size))
    return (up - lo) / (hi - lo)


def token_saliency(model: MCAE, image: np.ndarray, target_class: int) -> np.ndarray:
    """Per-token map (before upsampling) used for ranking patches."""
    g = model.enc_cfg.grid_size
    heat = attention_map(model, image, target_class)
    p = model.enc_cfg.patch_size
    return heat.reshape(g, p, g, p).mean(axis=(1, 3)).reshape(-1)


def logit_without_tokens(model: MCAE, image: np.ndarray, drop: np.ndarray, target_class: int) -> float:
    """Target logit when the listed token positions are withheld from the encoder."""
    n = model.enc_cfg.num_patches
    keep = np.setdiff1d(np.arange(n), drop)
    x = as_tensor(image[None], model)
    with torch.no_grad():
        tokens = model.tokens(x)
        idx = torch.as_tensor(keep)[None]
        latent = model.encode(tokens[:, idx[0]], idx)
        return float(model.head(latent.mean(dim=1))[0, target_class])


def heatmap_overlay(image: np.ndarray, heat: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend a [0,1] heatmap (red high, blue low) over an HWC image."""
    color = np.stack([heat, np.zeros_like(heat), 1 - heat], axis=-1)
    return (1 - alpha) * image + alpha * color


def write_embedding_csv(cloud: EmbeddingCloud, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "label", "domain"])
        for (px, py), lab, dom in zip(cloud.points, cloud.labels, cloud.domains):
            writer.writerow([repr(float(px)), repr(float(py)), int(lab), int(dom)])
    return path


def plot_embedding(cloud: EmbeddingCloud, path: str | Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    markers = {1: "o", 0: "x"}
    for lab in np.unique(cloud.labels):
        for dom in np.unique(cloud.domains):
            sel = (cloud.labels == lab) & (cloud.domains == dom)
            if sel.any():
                ax.scatter(
                    cloud.points[sel, 0],
                    cloud.points[sel, 1],
                    marker=markers.get(int(lab), "."),
                    s=14,
                    label=f"{'live' if lab == 1 else 'spoof'} d{dom}",
                )
    ax.legend(fontsize=6)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
