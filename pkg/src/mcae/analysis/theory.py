"""Exact information quantities on finite joint distributions.

Used to check, on small discrete surrogates, the information bounds that
justify pooling encoder tokens into a single aggregate feature, and the
equivalence between a Gaussian variational bound and squared-error
reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PMF_TOLERANCE = 1e-12


@dataclass
class DiscreteJoint:
    pmf: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        self.pmf = np.asarray(self.pmf, dtype=np.float64)
        self.names = tuple(self.names)
        if self.pmf.ndim != len(self.names):
            raise ValueError(f"{self.pmf.ndim}-d table but {len(self.names)} names")
        if len(set(self.names)) != len(self.names):
            raise ValueError("variable names must be unique")
        if (self.pmf < 0).any():
            raise ValueError("probabilities must be non-negative")
        if abs(self.pmf.sum() - 1.0) > PMF_TOLERANCE:
            raise ValueError(f"probabilities sum to {self.pmf.sum()!r}, not 1")

    def axes(self, names: Sequence[str]) -> tuple[int, ...]:
        try:
            return tuple(self.names.index(n) for n in names)
        except ValueError:
            unknown = [n for n in names if n not in self.names]
            raise KeyError(f"unknown variable(s) {unknown}") from None

    def marginal(self, names: Sequence[str]) -> np.ndarray:
        keep = self.axes(names)
        drop = tuple(i for i in range(self.pmf.ndim) if i not in keep)
        m = self.pmf.sum(axis=drop)
        # reorder so axes follow the requested order
        order = sorted(keep)
        return np.moveaxis(m, [order.index(k) for k in keep], range(len(keep)))


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in bits, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64).ravel()
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def mutual_information(joint: DiscreteJoint, vars_a: Sequence[str], vars_b: Sequence[str]) -> float:
    """I(A;B) = H(A) + H(B) - H(A,B) in bits."""
    vars_a, vars_b = list(vars_a), list(vars_b)
    if set(vars_a) & set(vars_b):
        raise ValueError("variable groups must be disjoint")
    return (
        entropy(joint.marginal(vars_a))
        + entropy(joint.marginal(vars_b))
        - entropy(joint.marginal(vars_a + vars_b))
    )


def conditional_mutual_information(
    joint: DiscreteJoint, vars_a: Sequence[str], vars_b: Sequence[str], given: Sequence[str]
) -> float:
    """I(A;B|C) = H(A,C) + H(B,C) - H(A,B,C) - H(C)."""
    a, b, c = list(vars_a), list(vars_b), list(given)
    return (
        entropy(joint.marginal(a + c))
        + entropy(joint.marginal(b + c))
        - entropy(joint.marginal(a + b + c))
        - entropy(joint.marginal(c))
    )


def chain_joint(p_t: np.ndarray, p_a_given_t: np.ndarray, p_g_given_t: np.ndarray) -> DiscreteJoint:
    """Joint p(t, a, g) = p(t) p(a|t) p(g|t).

    ``A`` is a (possibly lossy) processing of the tokens ``T`` and ``G`` is
    generated from ``T``, so ``A <-> T <-> G`` is a Markov chain.
    Conditional tables are indexed ``[t, value]``.
    """
    p_t = np.asarray(p_t, dtype=np.float64)
    pmf = p_t[:, None, None] * np.asarray(p_a_given_t)[:, :, None] * np.asarray(p_g_given_t)[:, None, :]
    return DiscreteJoint(pmf / pmf.sum(), ("T", "A", "G"))


def random_chain(rng: np.random.Generator, k: int = 3) -> DiscreteJoint:
    return chain_joint(
        rng.dirichlet(np.ones(k)),
        rng.dirichlet(np.ones(k), size=k),
        rng.dirichlet(np.ones(k), size=k),
    )


@dataclass
class DPIReport:
    i_tg: float  # I(T; G), tokens vs encoder output
    i_ag: float  # I(A; G), aggregate vs encoder output
    gap: float  # I(T;G) - I(A;G)
    conditional_gap: float  # I(T; G | A), equal to the gap on a valid chain
    epsilon: float
    upper_bound_holds: bool
    lower_bound_holds: bool

    @property
    def holds(self) -> bool:
        return self.upper_bound_holds and self.lower_bound_holds


def verify_dpi_chain(
    joint: DiscreteJoint,
    epsilon: float | None = None,
    *,
    names: tuple[str, str, str] = ("T", "A", "G"),
    atol: float = 1e-10,
) -> DPIReport:
    """Check ``I(T;G) - eps <= I(A;G) <= I(T;G)`` on a chain ``A <-> T <-> G``.

    The joint must satisfy ``I(A;G|T) = 0`` (within ``atol``); otherwise it is
    rejected. With ``epsilon=None`` the realized gap is used, which makes the
    lower bound tight.
    """
    t, a, g = names
    leak = conditional_mutual_information(joint, [a], [g], [t])
    if leak > atol:
        raise ValueError(f"joint does not factorize through {t}: I({a};{g}|{t}) = {leak:.3g}")
    i_tg = mutual_information(joint, [t], [g])
    i_ag = mutual_information(joint, [a], [g])
    gap = i_tg - i_ag
    eps = gap if epsilon is None else epsilon
    return DPIReport(
        i_tg=i_tg,
        i_ag=i_ag,
        gap=gap,
        conditional_gap=conditional_mutual_information(joint, [t], [g], [a]),
        epsilon=eps,
        upper_bound_holds=i_ag <= i_tg + atol,
        lower_bound_holds=i_tg - eps <= i_ag + atol,
    )


@dataclass
class GaussianBoundReport:
    sigma: float
    dim: int
    mean_log_q: float  # E[log N(x | mu, sigma^2 I)] in nats
    mse: float  # E ||x - mu||^2
    c1: float  # -(d/2) log(2 pi sigma^2)
    c2: float  # 1 / (2 sigma^2)
    identity_residual: float  # |mean_log_q - (c1 - c2 * mse)|
    fitted_slope: float
    fitted_intercept: float


def gaussian_log_density(x: np.ndarray, mu: np.ndarray, sigma: float) -> np.ndarray:
    """Per-row log N(x | mu, sigma^2 I), evaluated coordinate by coordinate."""
    z = (x - mu) / sigma
    return np.sum(-0.5 * z**2 - np.log(sigma) - 0.5 * np.log(2 * np.pi), axis=-1)


def variational_mse_equivalence(x: np.ndarray, mu: np.ndarray, sigma: float) -> GaussianBoundReport:
    """Relate the Gaussian variational bound to squared reconstruction error.

    For ``Q = N(x | mu, sigma^2 I)``, ``E[log Q] = c1 - c2 * E||x - mu||^2``
    with ``c2 = 1/(2 sigma^2) > 0``, so maximizing the bound is minimizing the
    squared error. The slope is also recovered by least squares over the
    per-sample pairs as an independent check.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    if x.shape != mu.shape:
        raise ValueError("x and mu shapes differ")
    d = x.shape[1]
    log_q = gaussian_log_density(x, mu, sigma)
    sq = np.sum((x - mu) ** 2, axis=1)
    c1 = -0.5 * d * np.log(2 * np.pi * sigma**2)
    c2 = 1.0 / (2 * sigma**2)
    if len(x) >= 2 and np.ptp(sq) > 0:
        design = np.stack([sq, np.ones_like(sq)], axis=1)
        (slope, intercept), *_ = np.linalg.lstsq(design, log_q, rcond=None)
    else:
        slope, intercept = float("nan"), float("nan")
    mean_log_q = float(log_q.mean())
    mse = float(sq.mean())
    return GaussianBoundReport(
        sigma=sigma,
        dim=d,
        mean_log_q=mean_log_q,
        mse=mse,
        c1=float(c1),
        c2=c2,
        identity_residual=abs(mean_log_q - (c1 - c2 * mse)),
        fitted_slope=float(slope),
        fitted_intercept=float(intercept),
    )
