"""Patch tokenization and random mask plans.

Token layout: token ``i`` is patch ``(i // cols, i % cols)`` of the image,
flattened as ``P x P x 3`` in row-major order. The same layout is used for
single HWC arrays and for batched NCHW tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch


@dataclass
class TokenSequence:
    tokens: np.ndarray  # n x (3 * P * P)
    grid: tuple[int, int]

    def __post_init__(self) -> None:
        rows, cols = self.grid
        if self.tokens.ndim != 2 or self.tokens.shape[0] != rows * cols:
            raise ValueError(f"{self.tokens.shape[0]} tokens do not fill a {rows}x{cols} grid")
        patch_px = self.tokens.shape[1] / 3
        if patch_px != int(math.isqrt(int(patch_px))) ** 2:
            raise ValueError(f"token dim {self.tokens.shape[1]} is not 3 * P^2")

    @property
    def n(self) -> int:
        return self.tokens.shape[0]

    @property
    def patch_size(self) -> int:
        return math.isqrt(self.tokens.shape[1] // 3)


@dataclass
class MaskPlan:
    visible_idx: np.ndarray
    masked_idx: np.ndarray
    ratio: float

    @property
    def n(self) -> int:
        return len(self.visible_idx) + len(self.masked_idx)

    def indicator(self) -> np.ndarray:
        """0/1 vector, 1 at masked positions."""
        ind = np.zeros(self.n, dtype=np.int64)
        ind[self.masked_idx] = 1
        return ind


def masked_count(n: int, ratio: float) -> int:
    # round half up; the small guard keeps e.g. 0.35 * 10 from landing on 3.4999...
    return int(math.floor(ratio * n + 0.5 + 1e-9))


def patchify(image: np.ndarray, patch_size: int) -> TokenSequence:
    h, w, c = image.shape
    if h % patch_size or w % patch_size:
        raise ValueError(f"image {h}x{w} not divisible by patch size {patch_size}")
    rows, cols = h // patch_size, w // patch_size
    x = image.reshape(rows, patch_size, cols, patch_size, c).transpose(0, 2, 1, 3, 4)
    return TokenSequence(x.reshape(rows * cols, patch_size * patch_size * c).copy(), (rows, cols))


def unpatchify(seq: TokenSequence) -> np.ndarray:
    rows, cols = seq.grid
    p = seq.patch_size
    x = seq.tokens.reshape(rows, cols, p, p, 3).transpose(0, 2, 1, 3, 4)
    return x.reshape(rows * p, cols * p, 3).copy()


def patchify_batch(images: torch.Tensor, patch_size: int) -> torch.Tensor:
    """B x 3 x S x S -> B x n x (P*P*3), same token layout as :func:`patchify`."""
    b, c, h, w = images.shape
    if h % patch_size or w % patch_size:
        raise ValueError(f"image {h}x{w} not divisible by patch size {patch_size}")
    rows, cols = h // patch_size, w // patch_size
    x = images.reshape(b, c, rows, patch_size, cols, patch_size)
    x = x.permute(0, 2, 4, 3, 5, 1)  # b, rows, cols, py, px, c
    return x.reshape(b, rows * cols, patch_size * patch_size * c)


def unpatchify_batch(tokens: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
    b, n, d = tokens.shape
    rows, cols = grid
    p = math.isqrt(d // 3)
    x = tokens.reshape(b, rows, cols, p, p, 3).permute(0, 5, 1, 3, 2, 4)
    return x.reshape(b, 3, rows * p, cols * p)


def sample_mask(n: int, ratio: float, rng: np.random.Generator) -> MaskPlan:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1), got {ratio}")
    k = masked_count(n, ratio)
    if k >= n:
        raise ValueError(f"ratio {ratio} masks all {n} tokens")
    perm = rng.permutation(n)
    return MaskPlan(np.sort(perm[k:]), np.sort(perm[:k]), ratio)


def sample_masks(batch: int, n: int, ratio: float, rng: np.random.Generator) -> list[MaskPlan]:
    """Independent plans, one per image."""
    return [sample_mask(n, ratio, rng) for _ in range(batch)]


def stack_plans(plans: Sequence[MaskPlan]) -> tuple[torch.Tensor, torch.Tensor]:
    """Index tensors (B x n_vis, B x n_mask) for plans of equal size."""
    vis = torch.as_tensor(np.stack([p.visible_idx for p in plans]), dtype=torch.long)
    msk = torch.as_tensor(np.stack([p.masked_idx for p in plans]), dtype=torch.long)
    return vis, msk


def full_plan(n: int) -> MaskPlan:
    return MaskPlan(np.arange(n), np.array([], dtype=np.int64), 0.0)


def apply_mask(seq: TokenSequence, plan: MaskPlan) -> tuple[np.ndarray, np.ndarray]:
    if plan.n != seq.n:
        raise ValueError(f"plan covers {plan.n} tokens, sequence has {seq.n}")
    for idx in (plan.visible_idx, plan.masked_idx):
        if len(idx) and (idx.min() < 0 or idx.max() >= seq.n):
            raise IndexError("mask index out of range")
    return seq.tokens[plan.visible_idx], seq.tokens[plan.masked_idx]


def scatter_tokens(visible: np.ndarray, masked: np.ndarray, plan: MaskPlan) -> np.ndarray:
    """Inverse of :func:`apply_mask`."""
    d = visible.shape[1] if len(visible) else masked.shape[1]
    out = np.empty((plan.n, d), dtype=np.result_type(visible, masked))
    out[plan.visible_idx] = visible
    out[plan.masked_idx] = masked
    return out
