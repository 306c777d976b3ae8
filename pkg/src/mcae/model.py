"""ViT encoder, masked-token decoder, feature aggregation and classification head."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import DecoderConfig, EncoderConfig
from .tokenizer import MaskPlan, patchify_batch, stack_plans

INIT_STD = 0.02


def sincos_1d(dim: int, positions: np.ndarray) -> np.ndarray:
    omega = 1.0 / 10000 ** (np.arange(dim // 2, dtype=np.float64) / (dim / 2.0))
    out = np.outer(positions.reshape(-1), omega)
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def sincos_2d(dim: int, grid_size: int) -> np.ndarray:
    """Fixed 2-D sin-cos table of shape (grid_size**2, dim), rows in row-major grid order.

    The first half of each row encodes the row coordinate, the second half the
    column coordinate.
    """
    rows, cols = np.meshgrid(np.arange(grid_size), np.arange(grid_size), indexing="ij")
    return np.concatenate([sincos_1d(dim // 2, rows), sincos_1d(dim // 2, cols)], axis=1)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class MCAE(nn.Module):
    """Encoder, decoder and two-way liveness head sharing one set of parameters."""

    def __init__(self, enc: EncoderConfig, dec: DecoderConfig):
        super().__init__()
        self.enc_cfg, self.dec_cfg = enc, dec
        n, d_tok = enc.num_patches, enc.token_dim

        self.patch_embed = nn.Linear(d_tok, enc.embed_dim)
        self.register_buffer(
            "pos_embed", torch.from_numpy(sincos_2d(enc.embed_dim, enc.grid_size)).float()
        )
        self.blocks = nn.ModuleList(Block(enc.embed_dim, enc.heads, enc.mlp_ratio) for _ in range(enc.depth))
        self.norm = nn.LayerNorm(enc.embed_dim)

        self.decoder_embed = nn.Linear(enc.embed_dim, dec.width)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, dec.width))
        self.register_buffer(
            "decoder_pos_embed", torch.from_numpy(sincos_2d(dec.width, enc.grid_size)).float()
        )
        self.decoder_blocks = nn.ModuleList(Block(dec.width, dec.heads, enc.mlp_ratio) for _ in range(dec.depth))
        self.decoder_norm = nn.LayerNorm(dec.width)
        self.decoder_pred = nn.Linear(dec.width, d_tok)

        self.head = nn.Linear(enc.embed_dim, 2)
        assert self.pos_embed.shape == (n, enc.embed_dim)

    # parameter groups, used by checkpointing and freezing
    ENCODER_PREFIXES = ("patch_embed.", "pos_embed", "blocks.", "norm.")
    DECODER_PREFIXES = ("decoder_", "mask_token")
    HEAD_PREFIXES = ("head.",)

    @classmethod
    def group_of(cls, name: str) -> str:
        for group, prefixes in (
            ("decoder", cls.DECODER_PREFIXES),
            ("head", cls.HEAD_PREFIXES),
            ("encoder", cls.ENCODER_PREFIXES),
        ):
            if name.startswith(prefixes):
                return group
        raise KeyError(name)

    def encoder_parameters(self):
        return [p for name, p in self.named_parameters() if self.group_of(name) == "encoder"]

    def encode(self, visible_tokens: torch.Tensor, visible_idx: torch.Tensor, *, return_pre_norm: bool = False):
        """Latents for the visible tokens only (B x n_vis x embed_dim)."""
        if visible_tokens.shape[1] < 1:
            raise ValueError("encoder needs at least one visible token")
        if visible_idx.min() < 0 or visible_idx.max() >= self.pos_embed.shape[0]:
            raise IndexError("visible index outside the positional table")
        x = self.patch_embed(visible_tokens) + self.pos_embed.to(visible_tokens.dtype)[visible_idx]
        for blk in self.blocks:
            x = blk(x)
        if return_pre_norm:
            return self.norm(x), x
        return self.norm(x)

    def decode(self, latent: torch.Tensor, visible_idx: torch.Tensor, masked_idx: torch.Tensor) -> torch.Tensor:
        """Predicted tokens for every grid position (B x n x d_tok)."""
        b, n_vis, _ = latent.shape
        n = self.decoder_pos_embed.shape[0]
        if n_vis != visible_idx.shape[1] or n_vis + masked_idx.shape[1] != n:
            raise ValueError("latent does not match the mask plan")
        x = self.decoder_embed(latent)
        full = self.mask_token.expand(b, n, -1).clone()
        full = full.scatter(1, visible_idx.unsqueeze(-1).expand(-1, -1, x.shape[-1]), x)
        full = full + self.decoder_pos_embed.to(full.dtype)
        for blk in self.decoder_blocks:
            full = blk(full)
        return self.decoder_pred(self.decoder_norm(full))

    def tokens(self, images: torch.Tensor) -> torch.Tensor:
        return patchify_batch(images, self.enc_cfg.patch_size)

    def forward_masked(self, images: torch.Tensor, plans: list[MaskPlan]):
        """Masked forward pass: (target tokens, predictions, visible latents)."""
        tokens = self.tokens(images)
        vis_idx, msk_idx = stack_plans(plans)
        gather = vis_idx.unsqueeze(-1).expand(-1, -1, tokens.shape[-1])
        latent = self.encode(torch.gather(tokens, 1, gather), vis_idx)
        pred = self.decode(latent, vis_idx, msk_idx)
        return tokens, pred, latent

    def features(self, images: torch.Tensor) -> torch.Tensor:
        """Full-sequence latents, no masking."""
        tokens = self.tokens(images)
        idx = torch.arange(tokens.shape[1]).expand(tokens.shape[0], -1)
        return self.encode(tokens, idx)

    def classify(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(images).mean(dim=1))


def aggregate(latent: torch.Tensor, normalize: bool = True) -> torch.Tensor:
    """Mean over tokens, optionally L2-normalized (B x n x d -> B x d)."""
    if latent.shape[-2] < 1:
        raise ValueError("aggregate needs at least one token")
    mean = latent.mean(dim=-2)
    return F.normalize(mean, dim=-1) if normalize else mean


def init_params(model: MCAE, seed: int) -> MCAE:
    """Truncated-normal (std 0.02, cut at 2 std) weights, zero biases, unit LayerNorm gains."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            elif ".norm" in name or name.startswith(("norm.", "decoder_norm.")):
                p.fill_(1.0)
            else:
                _trunc_normal_(p, gen)
    return model


def _trunc_normal_(t: torch.Tensor, gen: torch.Generator) -> None:
    # resample out-of-range entries until everything sits inside +-2 std
    vals = torch.randn(t.shape, generator=gen, dtype=torch.float64)
    bad = vals.abs() > 2
    while bad.any():
        vals[bad] = torch.randn(int(bad.sum()), generator=gen, dtype=torch.float64)
        bad = vals.abs() > 2
    t.copy_((vals * INIT_STD).to(t.dtype))


def build_model(enc: EncoderConfig, dec: DecoderConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> MCAE:
    model = init_params(MCAE(enc, dec), seed)
    if dtype == torch.float64:
        model = model.double()
        # recompute positions at full precision instead of upcasting float32 values
        model.pos_embed.copy_(torch.from_numpy(sincos_2d(enc.embed_dim, enc.grid_size)))
        model.decoder_pos_embed.copy_(torch.from_numpy(sincos_2d(dec.width, enc.grid_size)))
    return model


def reset_head(model: MCAE, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        _trunc_normal_(model.head.weight, gen)
        model.head.bias.zero_()


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def as_tensor(images: np.ndarray | torch.Tensor, model: nn.Module) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    if isinstance(images, torch.Tensor):
        return images.to(dtype)
    return torch.as_tensor(np.ascontiguousarray(images), dtype=dtype)


__all__ = [
    "MCAE",
    "aggregate",
    "as_tensor",
    "build_model",
    "count_parameters",
    "init_params",
    "reset_head",
    "sincos_2d",
]
