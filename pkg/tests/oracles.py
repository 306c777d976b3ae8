"""Brute-force reference implementations, written independently of the package.

Everything here loops over scalars in float64 so it shares no vectorized code
path with the implementations under test.
"""

from __future__ import annotations

import math

import numpy as np
import torch

LIVE = 1


def supcon_reference(features, labels, domains, tau=0.1, lam_cross=2.0, lam_same=1.0, lam_spoof=1.0, spoof_pos=True):
    """Double loop over (anchor, positive) pairs; mean over counted pairs, 0 if none."""
    f = np.asarray(features, dtype=np.float64)
    n = len(f)
    total, count = 0.0, 0
    for i in range(n):
        negs = [math.exp(float(f[i] @ f[k]) / tau) for k in range(n) if labels[k] != labels[i]]
        for j in range(n):
            if j == i or labels[j] != labels[i]:
                continue
            if labels[i] == LIVE:
                lam = lam_cross if domains[i] != domains[j] else lam_same
            else:
                if not spoof_pos:
                    continue
                lam = lam_spoof
            if lam == 0:
                continue
            pos = lam * math.exp(float(f[i] @ f[j]) / tau)
            total += -math.log(pos / (pos + sum(negs)))
            count += 1
    return total / count if count else 0.0


def reconstruction_reference(pred, target, masked_idx):
    """Two loops: tokens, then token entries."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    n, d = pred.shape
    masked = set(int(i) for i in masked_idx)
    acc = 0.0
    for i in range(n):
        if i not in masked:
            continue
        sq = 0.0
        for k in range(d):
            sq += (pred[i, k] - target[i, k]) ** 2
        acc += sq / d
    return acc / n


def auc_reference(live, spoof):
    """All-pairs count in percent, ties one half."""
    wins = 0.0
    for a in live:
        for b in spoof:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return 100.0 * wins / (len(live) * len(spoof))


def hter_sweep(live, spoof):
    """(FAR, FRR) for every candidate threshold: midpoints of distinct scores plus +-inf.

    A sample is accepted as live when its score exceeds the threshold.
    """
    distinct = sorted(set(list(live) + list(spoof)))
    cands = [-math.inf] + [(a + b) / 2 for a, b in zip(distinct, distinct[1:])] + [math.inf]
    out = []
    for t in cands:
        far = sum(1 for s in spoof if s > t) / len(spoof)
        frr = sum(1 for s in live if s <= t) / len(live)
        out.append((t, far, frr))
    return out


def hter_min_reference(live, spoof):
    return 100.0 * min((far + frr) / 2 for _, far, frr in hter_sweep(live, spoof))


def hter_eer_reference(live, spoof):
    """HTER at the threshold minimizing |FAR - FRR|, ties broken by the lower HTER."""
    rows = hter_sweep(live, spoof)
    best = min(rows, key=lambda r: (abs(r[1] - r[2]), (r[1] + r[2]) / 2))
    return 100.0 * (best[1] + best[2]) / 2


def entropy_bits(p):
    return -sum(x * math.log2(x) for x in np.asarray(p, dtype=np.float64).ravel() if x > 0)


def mi_reference(pmf2d):
    """I(X;Y) for a 2-D table by summing p log p/(p_x p_y) term by term."""
    p = np.asarray(pmf2d, dtype=np.float64)
    px, py = p.sum(axis=1), p.sum(axis=0)
    total = 0.0
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            if p[i, j] > 0:
                total += p[i, j] * math.log2(p[i, j] / (px[i] * py[j]))
    return total


def central_difference(fn, params, h=1e-6):
    """Numerical gradient of scalar ``fn()`` w.r.t. every entry of each tensor in ``params``."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + h
                up = fn().item()
                flat[k] = orig - h
                down = fn().item()
                flat[k] = orig
                gflat[k] = (up - down) / (2 * h)
            grads.append(g)
    return grads
