"""Liveness scoring, HTER/AUC, and the cross-domain evaluation protocols."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from scipy.stats import rankdata

from .config import RunConfig
from .data import LIVE, SPOOF, DomainDataset, relabel_domains
from .model import MCAE, as_tensor, build_model
from .trainer import finetune, pretrain, torch_dtype

logger = logging.getLogger(__name__)

THRESHOLD_POLICIES = ("min_hter", "eer")
DEFAULT_POLICY = "min_hter"
RESULT_FIELDS = ("protocol", "train_domains", "test_domain", "hter", "auc", "threshold", "seed", "threshold_policy")


@dataclass
class ScoredSet:
    scores: np.ndarray  # probability of LIVE
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels differ in length")

    def split(self) -> tuple[np.ndarray, np.ndarray]:
        live = self.scores[self.labels == LIVE]
        spoof = self.scores[self.labels == SPOOF]
        if not len(live) or not len(spoof):
            raise ValueError("metric needs both live and spoof samples")
        return live, spoof


@dataclass
class ProtocolResult:
    protocol: str
    train_domains: tuple[str, ...]
    test_domain: str
    hter: float
    auc: float
    threshold: float
    seed: int
    threshold_policy: str = DEFAULT_POLICY

    def row(self) -> dict:
        d = asdict(self)
        d["train_domains"] = "&".join(self.train_domains)
        return d


def score_dataset(model: MCAE, dataset: DomainDataset, batch_size: int = 256) -> ScoredSet:
    model.eval()
    images = dataset.images()
    probs = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            logits = model.classify(as_tensor(images[start : start + batch_size], model))
            probs.append(torch.softmax(logits.double(), dim=1)[:, LIVE].numpy())
    return ScoredSet(np.concatenate(probs), dataset.labels)


def compute_auc(s: ScoredSet) -> float:
    """Mann-Whitney AUC in percent; ties count one half."""
    live, spoof = s.split()
    ranks = rankdata(np.concatenate([live, spoof]))
    u = ranks[: len(live)].sum() - len(live) * (len(live) + 1) / 2
    return 100.0 * u / (len(live) * len(spoof))


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2
    return np.concatenate([[-np.inf], mids, [np.inf]])


def error_rates(s: ScoredSet, thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """FAR and FRR per threshold; a sample is accepted as live when score > t."""
    live, spoof = s.split()
    far = (spoof[None, :] > thresholds[:, None]).mean(axis=1)
    frr = (live[None, :] <= thresholds[:, None]).mean(axis=1)
    return far, frr


def compute_hter(s: ScoredSet, policy: str = DEFAULT_POLICY) -> tuple[float, float]:
    """HTER in percent and the threshold it was measured at.

    Thresholds are searched over the evaluated set (midpoints between adjacent
    distinct scores plus +-inf). ``min_hter`` picks the lowest HTER, breaking
    ties by the smallest |FAR - FRR|; ``eer`` picks the smallest |FAR - FRR|,
    breaking ties by the lowest HTER. Remaining ties go to the median tied
    threshold, so a plateau of equivalent operating points reports its middle.
    """
    if policy not in THRESHOLD_POLICIES:
        raise ValueError(f"unknown threshold policy {policy!r}")
    thresholds = candidate_thresholds(s.scores)
    far, frr = error_rates(s, thresholds)
    hter = (far + frr) / 2
    gap = np.abs(far - frr)
    primary, secondary = (hter, gap) if policy == "min_hter" else (gap, hter)
    tied = np.flatnonzero(primary == primary.min())
    tied = tied[secondary[tied] == secondary[tied].min()]
    best = tied[(len(tied) - 1) // 2]
    return 100.0 * float(hter[best]), float(thresholds[best])


def _train_and_score(
    sources: Sequence[DomainDataset],
    targets: Sequence[DomainDataset],
    cfg: RunConfig,
    do_pretrain: bool,
    init_model: MCAE | None,
) -> list[ScoredSet]:
    source_ids = {id(s) for ds in sources for s in ds.samples}
    for t in targets:
        if any(id(s) in source_ids for s in t.samples):
            raise AssertionError(f"target {t.domain_name!r} overlaps the training data")
    sources = relabel_domains(sources)
    if init_model is not None:
        model = init_model
    elif do_pretrain:
        model = pretrain(sources, cfg).model
    else:
        model = build_model(cfg.encoder, cfg.decoder, cfg.schedule.seed, torch_dtype(cfg.schedule.dtype))
    tuned = finetune(model, sources, cfg).model
    return [score_dataset(tuned, t) for t in targets]


def _fold(args) -> ProtocolResult:
    domains, held_out, cfg, do_pretrain, init_model, policy, protocol = args
    test = domains[held_out]
    train = [d for i, d in enumerate(domains) if i != held_out]
    assert test.domain_name not in {d.domain_name for d in train}
    (scored,) = _train_and_score(train, [test], cfg, do_pretrain, init_model)
    hter, thr = compute_hter(scored, policy)
    return ProtocolResult(
        protocol,
        tuple(d.domain_name for d in train),
        test.domain_name,
        hter,
        compute_auc(scored),
        thr,
        cfg.schedule.seed,
        policy,
    )


def run_loo_protocol(
    domains: Sequence[DomainDataset],
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    *,
    do_pretrain: bool = True,
    init_model: MCAE | None = None,
    parallel: bool = False,
    policy: str = DEFAULT_POLICY,
    protocol: str = "loo",
) -> list[ProtocolResult]:
    """Leave each domain out once: train on the rest, evaluate on it."""
    if len(domains) < 2:
        raise ValueError("leave-one-out needs at least two domains")
    jobs = [(list(domains), i, cfg, do_pretrain, init_model, policy, protocol) for i in range(len(domains))]
    if parallel:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_fold, jobs))
    else:
        results = [_fold(job) for job in jobs]
    if out_dir is not None:
        write_results(results, Path(out_dir))
    return results


def run_limited_source(
    sources: Sequence[DomainDataset],
    targets: Sequence[DomainDataset],
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    *,
    do_pretrain: bool = True,
    policy: str = DEFAULT_POLICY,
) -> list[ProtocolResult]:
    """Train once on exactly two source domains, evaluate on each target."""
    if len(sources) != 2:
        raise ValueError("limited-source protocol trains on exactly two domains")
    names = {d.domain_name for d in sources}
    if names & {t.domain_name for t in targets}:
        raise ValueError("target domains must differ from the sources")
    scored = _train_and_score(sources, targets, cfg, do_pretrain, None)
    results = []
    for t, s in zip(targets, scored):
        hter, thr = compute_hter(s, policy)
        results.append(
            ProtocolResult(
                "limited_source",
                tuple(d.domain_name for d in sources),
                t.domain_name,
                hter,
                compute_auc(s),
                thr,
                cfg.schedule.seed,
                policy,
            )
        )
    if out_dir is not None:
        write_results(results, Path(out_dir))
    return results


def write_results(results: Sequence[ProtocolResult], out_dir: Path, name: str = "results") -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
        writer.writeheader()
        for r in results:
            writer.writerow(r.row())
    (out_dir / f"{name}_summary.txt").write_text(summary_table(results))
    return path


def summary_table(results: Sequence[ProtocolResult], method: str = "MCAE") -> str:
    """One row per method, an (HTER, AUC) column pair per train->test setting."""
    headers = [f"{'&'.join(r.train_domains)} to {r.test_domain}" for r in results]
    widths = [max(len(h), 17) for h in headers]
    first = max(len(method), 6)
    line1 = "Method".ljust(first) + " | " + " | ".join(h.center(w) for h, w in zip(headers, widths))
    line2 = " " * first + " | " + " | ".join("HTER(%)  AUC(%)".center(w) for w in widths)
    cells = [f"{r.hter:7.2f}  {r.auc:6.2f}".center(w) for r, w in zip(results, widths)]
    line3 = method.ljust(first) + " | " + " | ".join(cells)
    rule = "-" * len(line1)
    policy = results[0].threshold_policy if results else DEFAULT_POLICY
    return "\n".join([rule, line1, line2, rule, line3, rule, f"threshold policy: {policy}"]) + "\n"


def read_results(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
