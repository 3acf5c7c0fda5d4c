"""Expected look-ahead contour entropy and the cost-normalized acquisition.

The products ``Phi ln Phi`` appearing in the entropy of ``W_x`` are replaced
by Gaussian bumps,

    Phi(x) ln Phi(x)            ~  c * exp(-(x - xbar)^2 / 2)
    B(x, d) ln B(x, d)          ~  c * (exp(-(x - d + xbar)^2 / 2) + exp(-(x + d - xbar)^2 / 2))

with ``B(x, d) = Phi(x + d) - Phi(x - d)``, ``xbar = Phi^{-1}(1/e)`` and
``c = Phi(xbar) ln Phi(xbar) = -1/e``.  Under this approximation the
expectation of the entropy over the (Gaussian) look-ahead mean is available
in closed form, so the expected contour entropy after a hypothetical sample
costs one pass over the integration nodes per candidate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from . import _core
from .entropy import IntegrationGrid, ToleranceRule, contour_entropy
from .kernels import as_points
from .misgp import DomainBox, InformationSource, Posterior

logger = logging.getLogger(__name__)

XBAR = float(ndtri(math.exp(-1.0)))
C_APPROX = float(ndtr(XBAR) * math.log(ndtr(XBAR)))

# nodes whose |mu|/sigma exceeds c_eps + |xbar| + PRUNE_SIGMAS contribute < 1e-17
PRUNE_SIGMAS = 9.0

EPS_MODES = ("fantasy", "current")
REFERENCES = ("closed_form", "exact")


class ApproxConstants(NamedTuple):
    xbar: float
    c: float


APPROX = ApproxConstants(XBAR, C_APPROX)


class NumericalFailureError(RuntimeError):
    """No finite acquisition value among the candidates."""


def approx_phi_ln_phi(x):
    """Gaussian-bump approximation of ``Phi(x) ln Phi(x)``."""
    return C_APPROX * np.exp(-0.5 * (np.asarray(x, dtype=float) - XBAR) ** 2)


def approx_band_ln_band(x, d):
    """Approximation of ``B ln B`` with ``B = Phi(x + d) - Phi(x - d)``, ``d >= 0``."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("band half-width d must be non-negative")
    return C_APPROX * (np.exp(-0.5 * (x - d + XBAR) ** 2) + np.exp(-0.5 * (x + d - XBAR) ** 2))


@dataclass(frozen=True)
class CandidateSet:
    """Finite set of candidate locations and the sources that may be queried there."""

    points: np.ndarray
    sources: tuple[int, ...] = (0,)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 0:
            raise ValueError("candidate set is empty")
        if not self.sources:
            raise ValueError("no allowed sources")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "sources", tuple(sorted(int(s) for s in self.sources)))

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def grid(cls, domain: DomainBox, n: int = 30, sources: Sequence[int] = (0,)) -> "CandidateSet":
        axes = [np.linspace(lo, hi, n) for lo, hi in zip(domain.lower, domain.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return cls(np.column_stack([g.ravel() for g in mesh]), tuple(sources))

    @classmethod
    def latin_hypercube(cls, domain: DomainBox, n: int, seed: int = 0, sources: Sequence[int] = (0,)) -> "CandidateSet":
        unit = qmc.LatinHypercube(d=domain.dim, seed=np.random.default_rng(seed)).random(n)
        return cls(domain.scale(unit), tuple(sources))


@dataclass
class AcquisitionDecision:
    source: int
    x: np.ndarray
    value: float
    expected_lookahead_entropy: float
    current_entropy: float
    reference_entropy: float
    values: np.ndarray = field(repr=False)  # (n_sources, n_candidates), source-major


def cost_at(costs, source: int, x) -> np.ndarray:
    """Query cost of ``source`` at the rows of ``x``.

    ``costs`` is indexed by source and holds constants, callables or
    :class:`InformationSource` objects.
    """
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    entry = costs[source]
    if isinstance(entry, InformationSource):
        c = entry.cost_at(pts)
    elif callable(entry):
        c = np.asarray([float(entry(p)) for p in pts])
    else:
        c = np.full(pts.shape[0], float(entry))
    if np.any(~(c > 0)):
        raise ValueError(f"query cost of source {source} must be positive")
    return c


class _NodeState:
    """Posterior moments at the integration nodes that matter for the look-ahead."""

    def __init__(self, state: Posterior, grid: IntegrationGrid, rule: ToleranceRule, prune: bool):
        mu = state.mean(0, grid.nodes)
        var = state.var(0, grid.nodes)
        if prune:
            bound = rule.c_eps + abs(XBAR) + PRUNE_SIGMAS
            keep = (var > 1e-24) & (np.abs(mu) <= bound * np.sqrt(var))
        else:
            keep = np.ones(len(mu), dtype=bool)
        self.keep = keep
        self.nodes = grid.nodes[keep]
        self.mu = mu[keep]
        self.var = var[keep]
        self.weights = grid.weights[keep]
        self.volume = grid.volume
        self.whitened = state.whiten(0, self.nodes)
        self._prior_cross = None

    def prior_cross(self, state: Posterior, points: np.ndarray) -> np.ndarray:
        # cov((0, x'), (l, x)) = Sigma_0(x', x) for every l: shared by all sources
        if self._prior_cross is None or self._prior_cross[0] is not points:
            self._prior_cross = (points, state.model.kernels[0](self.nodes, points))
        return self._prior_cross[1]


def closed_form_entropy(state: Posterior, grid: IntegrationGrid, rule: ToleranceRule = ToleranceRule(), *, prune: bool = True, _nodes: _NodeState | None = None) -> float:
    """Contour entropy of the current surrogate under the Gaussian-bump approximation."""
    ns = _nodes or _NodeState(state, grid, rule, prune)
    h = _core.approx_entropy(ns.mu, ns.var, rule.c_eps, XBAR, C_APPROX)
    return float(ns.weights @ h / ns.volume)


def lookahead_entropies(
    state: Posterior,
    source: int,
    points,
    grid: IntegrationGrid,
    rule: ToleranceRule = ToleranceRule(),
    *,
    eps_mode: str = "fantasy",
    prune: bool = True,
    _nodes: _NodeState | None = None,
) -> np.ndarray:
    """Expected contour entropy after one more sample of ``source`` at each of ``points``.

    ``eps_mode="fantasy"`` sets the band from the post-sample standard
    deviation; ``"current"`` freezes it at the present one.
    """
    if eps_mode not in EPS_MODES:
        raise ValueError(f"eps_mode must be one of {EPS_MODES}")
    pts = as_points(points, state.dim)
    ns = _nodes or _NodeState(state, grid, rule, prune)
    if not len(ns.mu):
        return np.zeros(pts.shape[0])
    cross = ns.prior_cross(state, pts)
    if state.n:
        cross = cross - ns.whitened.T @ state.whiten(source, pts)
    denom = state.lookahead_denominator(source, pts)
    sums = _core.lookahead_entropy_sums(
        cross, ns.var, ns.mu, denom, ns.weights, rule.c_eps, eps_mode == "fantasy", XBAR, C_APPROX
    )
    return sums / ns.volume


def expected_lookahead_entropy(state: Posterior, source: int, x, grid: IntegrationGrid, rule: ToleranceRule = ToleranceRule(), *, eps_mode: str = "fantasy", prune: bool = True) -> float:
    pts = as_points(x, state.dim)
    if pts.shape[0] != 1:
        raise ValueError("expected a single candidate location")
    return float(lookahead_entropies(state, source, pts, grid, rule, eps_mode=eps_mode, prune=prune)[0])


def _reference(state, grid, rule, reference, ns):
    if reference == "closed_form":
        return closed_form_entropy(state, grid, rule, _nodes=ns)
    if reference == "exact":
        return contour_entropy(state, grid, rule)
    raise ValueError(f"reference must be one of {REFERENCES}")


def acquisition_value(
    state: Posterior,
    source: int,
    x,
    grid: IntegrationGrid,
    rule: ToleranceRule = ToleranceRule(),
    cost: float | Callable | InformationSource = 1.0,
    *,
    eps_mode: str = "fantasy",
    reference: str = "closed_form",
) -> float:
    """Expected entropy reduction per unit query cost at ``(source, x)``.

    Not clamped: approximation error can make it slightly negative.
    """
    pts = as_points(x, state.dim)
    c = float(cost_at({source: cost}, source, pts)[0])
    ns = _NodeState(state, grid, rule, prune=True)
    ref = _reference(state, grid, rule, reference, ns)
    expected = float(lookahead_entropies(state, source, pts, grid, rule, eps_mode=eps_mode, _nodes=ns)[0])
    return (ref - expected) / c


def _tie_break(candidates: CandidateSet, values: np.ndarray) -> tuple[int, int]:
    """Index ``(source_row, point)`` of the maximum; ties go to lower source, then lexicographic x."""
    best = np.max(values[np.isfinite(values)])
    rows, cols = np.nonzero(values == best)
    keys = [(candidates.sources[r],) + tuple(candidates.points[c]) for r, c in zip(rows, cols)]
    k = min(range(len(keys)), key=keys.__getitem__)
    return int(rows[k]), int(cols[k])


def select_next(
    state: Posterior,
    candidates: CandidateSet,
    grid: IntegrationGrid,
    rule: ToleranceRule = ToleranceRule(),
    costs: Sequence | None = None,
    *,
    eps_mode: str = "fantasy",
    reference: str = "closed_form",
) -> AcquisitionDecision:
    """Exhaustive maximization of the acquisition over ``sources x points``."""
    if costs is None:
        costs = [1.0] * state.model.n_sources
    ns = _NodeState(state, grid, rule, prune=True)
    ref = _reference(state, grid, rule, reference, ns)
    exact = ref if reference == "exact" else contour_entropy(state, grid, rule)
    pts = candidates.points
    expected = np.empty((len(candidates.sources), len(pts)))
    values = np.empty_like(expected)
    for row, source in enumerate(candidates.sources):
        expected[row] = lookahead_entropies(state, source, pts, grid, rule, eps_mode=eps_mode, _nodes=ns)
        values[row] = (ref - expected[row]) / cost_at(costs, source, pts)
    if not np.any(np.isfinite(values)):
        raise NumericalFailureError(
            f"all acquisition values non-finite; reference={ref!r}, "
            f"expected[:, :5]={expected[:, :5].tolist()}, active nodes={len(ns.mu)}"
        )
    r, c = _tie_break(candidates, values)
    return AcquisitionDecision(
        source=candidates.sources[r],
        x=pts[c].copy(),
        value=float(values[r, c]),
        expected_lookahead_entropy=float(expected[r, c]),
        current_entropy=exact,
        reference_entropy=ref,
        values=values,
    )
