"""Event probabilities, pointwise entropy and domain-averaged contour entropy.

At a point ``x`` the surrogate value ``f(0, x) ~ N(mu, sigma^2)`` falls
below the tolerance band (event L), inside it (C) or above it (U), with band
half-width ``eps(x) = c_eps * sigma(x)``.  The contour entropy is the average
over the domain of the entropy of that three-way outcome, in nats.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

from .misgp import DomainBox, Posterior

SIGMA_FLOOR = 1e-12
LN3 = float(np.log(3.0))


class DegenerateDistributionError(ValueError):
    """Non-positive standard deviation passed to :func:`event_probs`."""


class EventProbs(NamedTuple):
    pL: np.ndarray | float
    pC: np.ndarray | float
    pU: np.ndarray | float


@dataclass(frozen=True)
class ToleranceRule:
    """Band half-width ``eps(x) = c_eps * sigma(0, x)``."""

    c_eps: float = 2.0

    def __post_init__(self):
        if not self.c_eps > 0:
            raise ValueError("c_eps must be positive")

    def eps(self, sigma):
        return self.c_eps * np.asarray(sigma)


@dataclass(frozen=True)
class IntegrationGrid:
    """Quadrature nodes over the domain with weights summing to its volume."""

    nodes: np.ndarray
    weights: np.ndarray
    volume: float

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape[0] != weights.shape[0]:
            raise ValueError("one weight per node required")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.nodes.shape[0]

    @classmethod
    def trapezoid(cls, domain: DomainBox, n: int | tuple[int, ...] = 50) -> "IntegrationGrid":
        """Tensor-product trapezoid rule with ``n`` nodes per dimension."""
        counts = (n,) * domain.dim if np.isscalar(n) else tuple(n)
        axes, ws = [], []
        for lo, hi, m in zip(domain.lower, domain.upper, counts):
            if m < 2:
                raise ValueError("trapezoid rule needs at least 2 nodes per dimension")
            axes.append(np.linspace(lo, hi, m))
            w = np.full(m, (hi - lo) / (m - 1))
            w[[0, -1]] *= 0.5
            ws.append(w)
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.column_stack([g.ravel() for g in mesh])
        weights = ws[0]
        for w in ws[1:]:
            weights = np.multiply.outer(weights, w)
        return cls(nodes, np.ravel(weights), domain.volume())

    @classmethod
    def monte_carlo(cls, domain: DomainBox, n: int = 10_000, seed: int = 0) -> "IntegrationGrid":
        rng = np.random.default_rng(seed)
        nodes = domain.scale(rng.random((n, domain.dim)))
        vol = domain.volume()
        return cls(nodes, np.full(n, vol / n), vol)

    @classmethod
    def default(cls, domain: DomainBox, seed: int = 0) -> "IntegrationGrid":
        if domain.dim <= 2:
            return cls.trapezoid(domain, 50)
        return cls.monte_carlo(domain, 10_000, seed)


def event_probs(mu, sigma, eps) -> EventProbs:
    """Probabilities of events L, C, U for ``N(mu, sigma^2)`` and band ``eps``."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if np.any(~(sigma > 0)):
        raise DegenerateDistributionError("sigma must be positive")
    if np.any(eps < 0):
        raise ValueError("eps must be non-negative")
    lo = (-mu - eps) / sigma
    hi = (-mu + eps) / sigma
    pL = ndtr(lo)
    pU = ndtr((mu - eps) / sigma)
    # mirrored form keeps both arguments in the lower tail for mu < 0
    pC = np.where(mu >= 0, ndtr(hi) - pL, ndtr((mu + eps) / sigma) - pU)
    pC = np.maximum(pC, 0.0)
    if pC.ndim == 0:
        return EventProbs(float(pL), float(pC), float(pU))
    return EventProbs(pL, pC, pU)


def _neg_p_log_p(p, rest):
    """``-p ln p`` with ``0 ln 0 = 0``; ``rest = 1 - p`` is used when ``p`` is near 1."""
    p = np.asarray(p, dtype=float)
    rest = np.asarray(rest, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(p > 0.5, np.log1p(-rest), np.log(np.where(p > 0, p, 1.0)))
    return np.where(p > 0, -p * logp, 0.0)


def pointwise_entropy(p: EventProbs):
    """Entropy ``-sum p ln p`` of the three-way event variable, in nats."""
    pL, pC, pU = (np.asarray(v, dtype=float) for v in p)
    h = _neg_p_log_p(pL, pC + pU) + _neg_p_log_p(pC, pL + pU) + _neg_p_log_p(pU, pL + pC)
    h = np.clip(h, 0.0, LN3)
    return float(h) if h.ndim == 0 else h


def entropy_from_moments(mu, sigma, c_eps: float):
    """Pointwise entropy with ``eps = c_eps * sigma`` and ``sigma`` clamped to the floor."""
    sigma = np.maximum(np.asarray(sigma, dtype=float), SIGMA_FLOOR)
    return pointwise_entropy(event_probs(mu, sigma, c_eps * sigma))


def entropy_field(state: Posterior, grid: IntegrationGrid, rule: ToleranceRule) -> np.ndarray:
    """Pointwise entropy of ``W_x`` at every grid node."""
    mu = state.mean(0, grid.nodes)
    sigma = state.std(0, grid.nodes)
    return np.atleast_1d(entropy_from_moments(mu, sigma, rule.c_eps))


def contour_entropy(state: Posterior, grid: IntegrationGrid, rule: ToleranceRule = ToleranceRule()) -> float:
    """Domain-averaged entropy ``(1/V) * integral H(W_x) dx`` by quadrature."""
    h = entropy_field(state, grid, rule)
    return float(np.clip(grid.weights @ h / grid.volume, 0.0, LN3))
