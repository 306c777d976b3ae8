"""Exact (O(N^2)) t-SNE for small feature sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_POINTS = 2000
EXAGGERATION = 12.0


@dataclass
class EmbeddingCloud:
    points: np.ndarray  # N x 2
    labels: np.ndarray
    domains: np.ndarray
    kl_trace: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not np.isfinite(self.points).all():
            raise ValueError("embedding has non-finite coordinates")


def _row_affinities(dist_row: np.ndarray, target_entropy: float, tol: float = 1e-5, max_iter: int = 100) -> np.ndarray:
    """Gaussian conditional p(j|i) whose entropy (nats) matches log(perplexity)."""
    beta, lo, hi = 1.0, 0.0, np.inf
    for _ in range(max_iter):
        logits = -dist_row * beta
        logits -= logits.max()
        p = np.exp(logits)
        total = p.sum()
        h = np.log(total) - np.sum(p * logits) / total
        if abs(h - target_entropy) < tol:
            break
        if h > target_entropy:
            lo = beta
            beta = beta * 2 if hi == np.inf else (beta + hi) / 2
        else:
            hi = beta
            beta = (beta + lo) / 2
    return p / total


def joint_probabilities(x: np.ndarray, perplexity: float) -> np.ndarray:
    n = len(x)
    sq = np.sum(x**2, axis=1)
    dist = np.maximum(sq[:, None] + sq[None, :] - 2 * x @ x.T, 0.0)
    target = np.log(perplexity)
    cond = np.zeros((n, n))
    for i in range(n):
        others = np.r_[0:i, i + 1 : n]
        cond[i, others] = _row_affinities(dist[i, others], target)
    p = (cond + cond.T) / (2 * n)
    return np.maximum(p, 1e-12)


def kl_and_gradient(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    sq = np.sum(y**2, axis=1)
    num = 1.0 / (1.0 + np.maximum(sq[:, None] + sq[None, :] - 2 * y @ y.T, 0.0))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), 1e-12)
    off = ~np.eye(len(y), dtype=bool)
    kl = float(np.sum(p[off] * np.log(p[off] / q[off])))
    w = (p - q) * num
    grad = 4.0 * (np.diag(w.sum(axis=1)) - w) @ y
    return kl, grad


def tsne_embed(
    features: np.ndarray,
    perplexity: float = 30.0,
    iters: int = 1000,
    seed: int = 0,
    labels: np.ndarray | None = None,
    domains: np.ndarray | None = None,
    learning_rate: float | None = None,
) -> EmbeddingCloud:
    """Embed ``features`` in 2-D.

    Early exaggeration (x12) runs for the first quarter of ``iters`` with
    momentum 0.5. The remaining iterations use momentum 0.8, and any step that
    would raise the KL objective is rejected: momentum is reset and the step
    size halved. The recorded KL trace is therefore non-increasing after
    exaggeration ends.
    """
    x = np.asarray(features, dtype=np.float64)
    n = len(x)
    if n > MAX_POINTS:
        raise ValueError(f"exact t-SNE limited to {MAX_POINTS} points, got {n}")
    if not 1 < perplexity < n:
        raise ValueError(f"perplexity must lie in (1, {n}), got {perplexity}")
    rng = np.random.default_rng(seed)
    p = joint_probabilities(x, perplexity)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    lr = learning_rate if learning_rate is not None else max(n / EXAGGERATION / 4, 50.0)
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    exaggerate_until = iters // 4
    trace: list[float] = []

    for it in range(iters):
        if it < exaggerate_until:
            _, grad = kl_and_gradient(p * EXAGGERATION, y)
            same = np.sign(grad) == np.sign(velocity)
            gains = np.where(same, gains * 0.8, gains + 0.2).clip(0.01)
            velocity = 0.5 * velocity - lr * gains * grad
            y = y + velocity
            y -= y.mean(axis=0)
            trace.append(kl_and_gradient(p, y)[0])
            continue
        kl, grad = kl_and_gradient(p, y)
        if it == exaggerate_until:
            velocity[:] = 0.0
        while True:
            step = 0.8 * velocity - lr * gains * grad
            candidate = y + step
            candidate -= candidate.mean(axis=0)
            new_kl = kl_and_gradient(p, candidate)[0]
            if new_kl <= kl or lr < 1e-8:
                break
            velocity[:] = 0.0
            lr *= 0.5
        if new_kl > kl:
            trace.append(kl)
            continue
        same = np.sign(grad) == np.sign(step)
        gains = np.where(same, gains * 0.8, gains + 0.2).clip(0.01)
        velocity, y = step, candidate
        trace.append(new_kl)

    n_labels = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels)
    n_domains = np.zeros(n, dtype=np.int64) if domains is None else np.asarray(domains)
    return EmbeddingCloud(y, n_labels, n_domains, trace)
