"""Masked reconstruction loss and domain-weighted supervised contrastive loss."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .config import ContrastiveConfig
from .data import LIVE
from .tokenizer import MaskPlan

REC_ONLY = "rec_only"
REC_PLUS_CON = "rec_plus_con"
STAGES = (REC_ONLY, REC_PLUS_CON)

NORM_TOLERANCE = 1e-4


@dataclass
class LossReport:
    rec: float
    con: float | None
    total: float
    stage: str


def indicator_mask(i: int, plan: MaskPlan) -> int:
    if not 0 <= i < plan.n:
        raise IndexError(f"token index {i} outside 0..{plan.n - 1}")
    return int(i in set(plan.masked_idx.tolist()))


def mask_weights(plans: list[MaskPlan], n: int, dtype=torch.float32) -> torch.Tensor:
    """B x n tensor of 0/1 masked-token indicators."""
    w = torch.zeros(len(plans), n, dtype=dtype)
    for b, plan in enumerate(plans):
        if plan.n != n:
            raise ValueError(f"plan covers {plan.n} tokens, expected {n}")
        w[b, torch.as_tensor(plan.masked_idx, dtype=torch.long)] = 1.0
    return w


def reconstruction_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    mask: torch.Tensor | MaskPlan | list[MaskPlan],
) -> torch.Tensor:
    """Masked-token MSE, averaged over all ``n`` token positions.

    ``pred`` and ``target`` are ``[B x] n x d_tok`` and ``mask`` the matching
    0/1 indicator. Each token contributes the mean squared error over its
    ``d_tok`` entries; visible tokens contribute nothing. For a batch the
    per-image losses are averaged.
    """
    if isinstance(mask, MaskPlan):
        mask = mask_weights([mask], pred.shape[-2], pred.dtype)[0]
    elif isinstance(mask, list):
        mask = mask_weights(mask, pred.shape[-2], pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    if mask.shape != pred.shape[:-1]:
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match {tuple(pred.shape[:-1])}")
    per_token = ((pred - target) ** 2).mean(dim=-1)
    per_image = (per_token * mask.to(per_token.dtype)).sum(dim=-1) / pred.shape[-2]
    return per_image.mean()


def cosine_similarity_matrix(features: torch.Tensor) -> torch.Tensor:
    norms = features.norm(dim=1, keepdim=True)
    if (norms == 0).any():
        raise ValueError("cosine similarity undefined for a zero-norm row")
    unit = features / norms
    return (unit @ unit.T).clamp(-1.0, 1.0)


def pair_weights(labels: torch.Tensor, domains: torch.Tensor, cfg: ContrastiveConfig) -> torch.Tensor:
    """N x N table of lambda per (anchor, positive); 0 where the pair is not counted."""
    same_label = labels[:, None] == labels[None, :]
    same_domain = domains[:, None] == domains[None, :]
    live = (labels == LIVE)[:, None] & same_label
    lam = torch.zeros(same_label.shape, dtype=torch.float64)
    lam[live & ~same_domain] = cfg.lambda_live_cross
    lam[live & same_domain] = cfg.lambda_live_same
    if cfg.include_spoof_positives:
        lam[same_label & ~live] = cfg.lambda_spoof
    lam.fill_diagonal_(0.0)
    return lam


def supcon_loss(
    features: torch.Tensor,
    labels: torch.Tensor,
    domains: torch.Tensor,
    cfg: ContrastiveConfig,
) -> torch.Tensor:
    """Weighted supervised contrastive loss over L2-normalized ``features``.

    Every sample is an anchor. For anchor ``i`` and positive ``j`` the pair
    term is ``-log(lam*e_ij / (lam*e_ij + sum_k e_ik))`` where ``k`` runs over
    the anchor's negatives and ``e = exp(s / tau)``. The result is the mean
    over counted pairs; pairs with ``lam == 0`` are not counted.
    """
    if features.shape[0] < 2:
        raise ValueError("supervised contrastive loss needs at least two samples")
    norms = features.norm(dim=1)
    if ((norms - 1).abs() > NORM_TOLERANCE).any():
        raise ValueError("features must be L2-normalized")
    labels = torch.as_tensor(labels)
    domains = torch.as_tensor(domains)
    lam = pair_weights(labels, domains, cfg).to(features.dtype)
    counted = lam > 0
    if not counted.any():
        return features.sum() * 0.0

    logits = (features @ features.T) / cfg.temperature
    negative = labels[:, None] != labels[None, :]
    # log sum_k exp(s_ik / tau) over negatives; -inf when the anchor has none
    neg_logits = logits.masked_fill(~negative, float("-inf"))
    log_neg = torch.logsumexp(neg_logits, dim=1, keepdim=True).expand_as(logits)
    safe_lam = torch.where(counted, lam, torch.ones_like(lam))
    log_pos = torch.log(safe_lam) + logits
    log_ratio = log_pos - torch.logaddexp(log_pos, log_neg)
    return -(log_ratio[counted]).mean()


def total_loss(rec: float, con: float | None, beta: float, stage: str) -> LossReport:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    if stage == REC_ONLY:
        return LossReport(rec, None, rec, stage)
    return LossReport(rec, con, rec + beta * con, stage)

