"""Two-stage masked contrastive pre-training and supervised fine-tuning."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import CheckpointError, checkpoint_groups, load_checkpoint, save_checkpoint
from .config import RunConfig, ScheduleConfig
from .data import DomainDataset, LabeledBatch, make_batches, random_resized_crop
from .losses import REC_ONLY, REC_PLUS_CON, LossReport, mask_weights, reconstruction_loss, supcon_loss, total_loss
from .model import MCAE, aggregate, as_tensor, build_model, reset_head
from .tokenizer import sample_masks

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
METRICS_FIELDS = ("epoch", "rec_loss", "con_loss", "stage", "lr")


class TrainingError(RuntimeError):
    pass


def torch_dtype(name: str) -> torch.dtype:
    return torch.float64 if name == "float64" else torch.float32


@dataclass
class TrainState:
    model: MCAE
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    total_steps: int = 1
    warmup_steps: int = 0
    running_rec_loss: float | None = None
    stage: str = REC_ONLY
    gate_fired_at: int | None = None  # global step at which the stage switched


def new_state(model: MCAE, cfg: ScheduleConfig, total_steps: int = 1, warmup_steps: int = 0) -> TrainState:
    opt = torch.optim.AdamW(
        model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.95), weight_decay=cfg.weight_decay
    )
    return TrainState(
        model=model,
        optimizer=opt,
        rng=np.random.default_rng([cfg.seed, 1]),
        total_steps=max(total_steps, 1),
        warmup_steps=warmup_steps,
    )


def learning_rate(step: int, base: float, total_steps: int, warmup_steps: int) -> float:
    """Linear warmup followed by cosine decay to zero."""
    if warmup_steps and step < warmup_steps:
        return base * (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min((step - warmup_steps) / span, 1.0)
    return base * 0.5 * (1.0 + math.cos(math.pi * progress))


def contrastive_gate(state: TrainState, cfg: ScheduleConfig) -> str:
    """Stage for the next update; once the contrastive stage is on it stays on."""
    if state.stage == REC_PLUS_CON:
        return REC_PLUS_CON
    by_loss = by_epoch = False
    if cfg.gate_mode in ("loss_threshold", "either"):
        if state.running_rec_loss is None:
            if cfg.gate_mode == "loss_threshold":
                raise TrainingError("loss-threshold gate queried before any training step")
        else:
            by_loss = state.running_rec_loss < cfg.epsilon
    if cfg.gate_mode in ("epoch", "either"):
        by_epoch = state.epoch >= cfg.switch_epoch
    return REC_PLUS_CON if by_loss or by_epoch else REC_ONLY


def _batch_tensors(batch: LabeledBatch, model: MCAE):
    return (
        as_tensor(batch.images, model),
        torch.as_tensor(batch.labels, dtype=torch.long),
        torch.as_tensor(batch.domains, dtype=torch.long),
    )


def pretrain_step(
    state: TrainState,
    batch: LabeledBatch,
    cfg: RunConfig,
) -> tuple[TrainState, LossReport]:
    """One masked reconstruction (+ contrastive) update. Mutates and returns ``state``."""
    sched = cfg.schedule
    if not (state.running_rec_loss is None and sched.gate_mode == "loss_threshold"):
        stage = contrastive_gate(state, sched)
        if stage != state.stage:
            state.stage, state.gate_fired_at = stage, state.step
            logger.info("contrastive stage on at epoch %d step %d", state.epoch, state.step)

    model = state.model
    model.train()
    images, labels, domains = _batch_tensors(batch, model)
    n = model.enc_cfg.num_patches
    plans = sample_masks(len(batch), n, sched.mask_ratio, state.rng)
    target, pred, latent = model.forward_masked(images, plans)
    rec = reconstruction_loss(pred, target, mask_weights(plans, n, pred.dtype))
    loss = rec
    con = None
    if state.stage == REC_PLUS_CON:
        # beta == 0 logs the contrastive term without touching the gradients
        with torch.set_grad_enabled(sched.beta != 0):
            if cfg.contrastive.feature_tokens == "all":
                feats = aggregate(model.features(images))
            else:
                feats = aggregate(latent)
            con = supcon_loss(feats, labels, domains, cfg.contrastive)
        if sched.beta != 0:
            loss = rec + sched.beta * con
    if not torch.isfinite(loss):
        raise TrainingError(
            f"non-finite loss at step {state.step}: rec={rec.item()} con={None if con is None else con.item()}"
        )

    lr = learning_rate(state.step, sched.learning_rate, state.total_steps, state.warmup_steps)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()

    rec_val = rec.item()
    if state.running_rec_loss is None:
        state.running_rec_loss = rec_val
    else:
        state.running_rec_loss = sched.ema_decay * state.running_rec_loss + (1 - sched.ema_decay) * rec_val
    state.step += 1
    report = total_loss(rec_val, None if con is None else con.item(), sched.beta, state.stage)
    return state, report


@dataclass
class EpochMetrics:
    epoch: int
    rec_loss: float
    con_loss: float | None
    stage: str
    lr: float

    def row(self) -> dict:
        return {
            "epoch": self.epoch,
            "rec_loss": repr(self.rec_loss),
            "con_loss": "" if self.con_loss is None else repr(self.con_loss),
            "stage": self.stage,
            "lr": repr(self.lr),
        }


@dataclass
class PretrainResult:
    model: MCAE
    state: TrainState
    history: list[EpochMetrics] = field(default_factory=list)
    checkpoint: Path | None = None


def _balanced_ok(datasets: Sequence[DomainDataset], batch_size: int) -> bool:
    cells = 2 * len(datasets)
    return batch_size % cells == 0 and all(len(set(ds.labels.tolist())) == 2 for ds in datasets)


def write_metrics(history: Sequence[EpochMetrics], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_FIELDS)
        writer.writeheader()
        for m in history:
            writer.writerow(m.row())


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def steps_per_epoch(datasets: Sequence[DomainDataset], batch_size: int, balanced: bool) -> int:
    if balanced:
        per_cell = batch_size // (2 * len(datasets))
        smallest = min(int((ds.labels == lab).sum()) for ds in datasets for lab in (0, 1))
        return max(smallest // per_cell, 1)
    total = sum(len(ds) for ds in datasets)
    return math.ceil(total / batch_size)


def pretrain(
    datasets: Sequence[DomainDataset],
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    *,
    balanced: bool | None = None,
    model: MCAE | None = None,
) -> PretrainResult:
    """Run the full pre-training schedule over the merged source domains.

    Batches are domain/label balanced whenever the batch size allows, so the
    batch stream does not depend on whether the contrastive stage is ever
    reached. When ``out_dir`` is given the checkpoint, resolved config and
    per-epoch metrics are written there.
    """
    if not datasets:
        raise ValueError("pretrain needs at least one dataset")
    sched = cfg.schedule
    dtype = torch_dtype(sched.dtype)
    torch.manual_seed(sched.seed)
    if balanced is None:
        balanced = _balanced_ok(datasets, sched.batch_size)
    if not balanced and sched.beta > 0:
        logger.warning("unbalanced batches: cross-domain positives are not guaranteed per batch")
    if model is None:
        model = build_model(cfg.encoder, cfg.decoder, sched.seed, dtype)
    per_epoch = steps_per_epoch(datasets, sched.batch_size, balanced)
    state = new_state(model, sched, per_epoch * sched.total_epochs, per_epoch * sched.warmup_epochs)

    history = []
    for epoch in range(sched.total_epochs):
        state.epoch = epoch
        recs, cons, lr = [], [], 0.0
        for batch in make_batches(datasets, sched.batch_size, balanced, sched.seed, epoch=epoch):
            if len(batch) < 2 and state.stage == REC_PLUS_CON:
                continue
            _, report = pretrain_step(state, batch, cfg)
            recs.append(report.rec)
            if report.con is not None:
                cons.append(report.con)
            lr = state.optimizer.param_groups[0]["lr"]
        history.append(
            EpochMetrics(epoch, float(np.mean(recs)), float(np.mean(cons)) if cons else None, state.stage, lr)
        )
        logger.info(
            "epoch %d rec %.5f con %s stage %s", epoch, history[-1].rec_loss, history[-1].con_loss, state.stage
        )

    ckpt = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        parts = ("encoder", "decoder") if sched.keep_decoder else ("encoder",)
        ckpt = save_checkpoint(model, cfg, out / "checkpoint", parts)
        write_metrics(history, out / METRICS_FILE)
        (out / "config.txt").write_text(cfg.to_manifest())
    return PretrainResult(model, state, history, ckpt)


@dataclass
class FinetuneResult:
    model: MCAE
    train_accuracy: list[float]
    losses: list[float]


def _augment(images: np.ndarray, scale: tuple[float, float], rng: np.random.Generator) -> np.ndarray:
    """Random resized crops; the full-frame range (1, 1) is a no-op without resampling."""
    if scale == (1.0, 1.0):
        return images
    size = images.shape[-1]
    out = [random_resized_crop(img.transpose(1, 2, 0), scale, size, rng).transpose(2, 0, 1) for img in images]
    return np.stack(out)


def finetune(
    source: MCAE | str | Path,
    datasets: Sequence[DomainDataset],
    cfg: RunConfig,
    *,
    augment: bool = True,
) -> FinetuneResult:
    """Train encoder + a fresh linear head with 2-class cross-entropy.

    ``source`` is a pre-trained model or a checkpoint directory; only its
    encoder is used. With ``cfg.finetune.head_only`` the encoder is frozen.
    """
    ft = cfg.finetune
    dtype = torch_dtype(cfg.schedule.dtype)
    if isinstance(source, (str, Path)):
        if "encoder" not in checkpoint_groups(source):
            raise CheckpointError(f"checkpoint {source} has no encoder tensors")
        model, _ = load_checkpoint(source, parts=("encoder",), dtype=dtype)
    else:
        model = copy.deepcopy(source)
    reset_head(model, ft.seed)
    torch.manual_seed(ft.seed)

    trainable = []
    for name, p in model.named_parameters():
        group = MCAE.group_of(name)
        train_it = group == "head" or (group == "encoder" and not ft.head_only)
        p.requires_grad_(train_it)
        if train_it:
            trainable.append(p)
    opt = torch.optim.AdamW(trainable, lr=ft.learning_rate, weight_decay=ft.weight_decay)
    rng = np.random.default_rng([ft.seed, 2])
    # balanced batches keep the class/domain mix fixed per step; with near-identical
    # features at init, a skewed mix turns the shared gradient term into noise
    balanced = _balanced_ok(datasets, ft.batch_size)
    steps_total = ft.epochs * steps_per_epoch(datasets, ft.batch_size, balanced)
    warmup = max(steps_total // 10, 1)

    accs, losses, step = [], [], 0
    for epoch in range(ft.epochs):
        model.train()
        correct = seen = 0
        epoch_loss = 0.0
        for batch in make_batches(datasets, ft.batch_size, balanced, ft.seed, epoch=epoch):
            images = batch.images
            if augment:
                images = _augment(images, (ft.crop_scale_lo, ft.crop_scale_hi), rng)
            x = as_tensor(images, model)
            y = torch.as_tensor(batch.labels, dtype=torch.long)
            for group in opt.param_groups:
                group["lr"] = learning_rate(step, ft.learning_rate, steps_total, warmup)
            logits = model.classify(x)
            loss = F.cross_entropy(logits, y)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite fine-tuning loss at epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            step += 1
            correct += int((logits.argmax(1) == y).sum())
            seen += len(y)
            epoch_loss += loss.item() * len(y)
        accs.append(correct / seen)
        losses.append(epoch_loss / seen)
        logger.info("finetune epoch %d loss %.4f acc %.3f", epoch, losses[-1], accs[-1])
    for p in model.parameters():
        p.requires_grad_(True)
    return FinetuneResult(model, accs, losses)


def snapshot(model: MCAE) -> MCAE:
    """Independent copy for concurrent read-only evaluation."""
    copied = copy.deepcopy(model)
    copied.eval()
    return copied


def train_accuracy(model: MCAE, datasets: Sequence[DomainDataset]) -> float:
    model.eval()
    correct = total = 0
    with torch.no_grad():
        for ds in datasets:
            logits = model.classify(as_tensor(ds.images(), model))
            correct += int((logits.argmax(1).numpy() == ds.labels).sum())
            total += len(ds)
    return correct / total


__all__ = [
    "EpochMetrics",
    "FinetuneResult",
    "PretrainResult",
    "TrainState",
    "TrainingError",
    "contrastive_gate",
    "finetune",
    "learning_rate",
    "new_state",
    "pretrain",
    "pretrain_step",
    "read_metrics",
    "snapshot",
    "train_accuracy",
]
