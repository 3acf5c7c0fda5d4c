"""Multi-information-source Gaussian process surrogate.

A single GP ``f(l, x)`` models every information source at once.  Source 0
is the unbiased target ``f(0, x) ~ GP(mu_0, Sigma_0)``; every other source is
``f(l, x) = f(0, x) + delta_l(x)`` with an independent bias process
``delta_l ~ GP(mu_l, Sigma_l)``.  Hence

    mean(l, x)             = mu_0(x) + mu_l(x)
    cov((l, x), (m, x'))   = Sigma_0(x, x') + [l == m >= 1] Sigma_l(x, x')

Conditioning is exact and dense (Cholesky of the ``n x n`` Gram matrix).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, NamedTuple, Sequence

import numpy as np
from scipy import linalg

from .kernels import KernelSpec, MeanSpec, as_points

logger = logging.getLogger(__name__)

JITTER_START = 1e-12
JITTER_MAX = 1e-4
VARIANCE_CLAMP = 1e-10


class InvalidSourceError(ValueError):
    """Information-source index outside ``[M]_0``."""


class DomainError(ValueError):
    """Point outside the domain box."""


class IllConditionedError(np.linalg.LinAlgError):
    """Gram matrix could not be factorized even with maximal jitter."""

    def __init__(self, message: str, pair: tuple[int, int] | None = None):
        super().__init__(message)
        self.pair = pair


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned box ``[lower, upper]`` in ``R^d``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise ValueError("lower and upper must have the same length")
        if not all(h > l for l, h in zip(lo, hi)):
            raise ValueError("upper must exceed lower in every dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def span(self) -> np.ndarray:
        return np.subtract(self.upper, self.lower)

    def volume(self) -> float:
        return float(np.prod(self.span))

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        pts = as_points(x, self.dim)
        return np.all((pts >= np.subtract(self.lower, tol)) & (pts <= np.add(self.upper, tol)), axis=1)

    def check(self, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        inside = self.contains(pts, tol=1e-12 * float(np.max(np.abs(self.span))))
        if not np.all(inside):
            bad = pts[~inside][0]
            raise DomainError(f"point {bad.tolist()} lies outside {self.lower}..{self.upper}")
        return pts

    def scale(self, unit) -> np.ndarray:
        """Map points from the unit cube into the box."""
        return np.asarray(self.lower) + np.asarray(unit, dtype=float) * self.span


def _as_function(value) -> Callable[[np.ndarray], np.ndarray]:
    if callable(value):
        def fn(pts, _f=value):
            return np.asarray([float(_f(p)) for p in pts]) if pts.shape[0] else np.zeros(0)
        return fn
    const = float(value)
    return lambda pts: np.full(pts.shape[0], const)


@dataclass
class InformationSource:
    """One information source: evaluator, query cost and observation noise.

    ``cost`` and ``noise_variance`` accept either a constant or a callable of
    a single point.
    """

    index: int
    evaluator: Callable[[np.ndarray], float]
    cost: float | Callable[[np.ndarray], float] = 1.0
    noise_variance: float | Callable[[np.ndarray], float] = 0.0
    name: str = ""

    def __post_init__(self):
        if self.index < 0:
            raise InvalidSourceError(f"source index must be >= 0, got {self.index}")
        self._cost = _as_function(self.cost)
        self._noise = _as_function(self.noise_variance)

    def evaluate(self, x) -> float:
        return float(self.evaluator(np.asarray(x, dtype=float)))

    def cost_at(self, x) -> np.ndarray:
        c = self._cost(np.atleast_2d(np.asarray(x, dtype=float)))
        if np.any(c <= 0):
            raise ValueError(f"non-positive query cost for source {self.index}")
        return c

    def noise_at(self, x) -> np.ndarray:
        return self._noise(np.atleast_2d(np.asarray(x, dtype=float)))


class SampleRecord(NamedTuple):
    source: int
    x: tuple[float, ...]
    y: float


@dataclass
class SampleSet:
    """Ordered observations ``(source, x, y)``."""

    dim: int
    records: list[SampleRecord] = field(default_factory=list)

    def append(self, source: int, x, y: float) -> None:
        x = tuple(float(v) for v in np.atleast_1d(np.asarray(x, dtype=float)))
        if len(x) != self.dim:
            raise ValueError(f"expected a point of dimension {self.dim}, got {len(x)}")
        self.records.append(SampleRecord(int(source), x, float(y)))

    def extend(self, records: Iterable[tuple]) -> None:
        for s, x, y in records:
            self.append(s, x, y)

    def copy(self) -> "SampleSet":
        return SampleSet(self.dim, list(self.records))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[SampleRecord]:
        return iter(self.records)

    @property
    def sources(self) -> np.ndarray:
        return np.array([r.source for r in self.records], dtype=int)

    @property
    def X(self) -> np.ndarray:
        return np.array([r.x for r in self.records], dtype=float).reshape(len(self.records), self.dim)

    @property
    def y(self) -> np.ndarray:
        return np.array([r.y for r in self.records], dtype=float)

    def of_source(self, source: int) -> tuple[np.ndarray, np.ndarray]:
        sel = self.sources == source
        return self.X[sel], self.y[sel]


def _source_array(source, m: int) -> np.ndarray:
    s = np.asarray(source, dtype=int)
    return np.full(m, int(s)) if s.ndim == 0 else s


class MultiSourceGP:
    """Prior over ``[M]_0 x D``.

    Parameters
    ----------
    means, kernels
        ``means[0]``/``kernels[0]`` describe the unbiased process ``f(0, .)``;
        entry ``l >= 1`` describes the bias process of source ``l``.
    noise
        Per-source observation noise variance, constant or callable.
    """

    def __init__(
        self,
        means: Sequence[MeanSpec],
        kernels: Sequence[KernelSpec],
        noise: Sequence[float | Callable] | None = None,
    ):
        if len(means) != len(kernels) or not kernels:
            raise ValueError("need one mean and one kernel per source")
        self.means = list(means)
        self.kernels = list(kernels)
        dims = {k.dim for k in self.kernels}
        if len(dims) != 1:
            raise ValueError("all kernels must share the input dimension")
        self.dim = dims.pop()
        noise = [0.0] * len(kernels) if noise is None else list(noise)
        if len(noise) != len(kernels):
            raise ValueError("need one noise specification per source")
        self._noise = [_as_function(v) for v in noise]

    @property
    def n_sources(self) -> int:
        return len(self.kernels)

    def _check_sources(self, s: np.ndarray) -> None:
        if s.size and (s.min() < 0 or s.max() >= self.n_sources):
            raise InvalidSourceError(f"source index out of range [0, {self.n_sources - 1}]: {np.unique(s).tolist()}")

    def prior_mean(self, source, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        s = _source_array(source, pts.shape[0])
        self._check_sources(s)
        out = self.means[0](pts)
        for l in np.unique(s[s > 0]):
            sel = s == l
            out[sel] += self.means[l](pts[sel])
        return out

    def prior_cov(self, sa, xa, sb, xb) -> np.ndarray:
        a = as_points(xa, self.dim)
        b = as_points(xb, self.dim)
        sa = _source_array(sa, a.shape[0])
        sb = _source_array(sb, b.shape[0])
        self._check_sources(sa)
        self._check_sources(sb)
        K = self.kernels[0](a, b)
        for l in np.intersect1d(np.unique(sa[sa > 0]), np.unique(sb[sb > 0])):
            ia = np.flatnonzero(sa == l)
            ib = np.flatnonzero(sb == l)
            K[np.ix_(ia, ib)] += self.kernels[l](a[ia], b[ib])
        return K

    def prior_var(self, source, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        s = _source_array(source, pts.shape[0])
        self._check_sources(s)
        out = self.kernels[0].diag(pts)
        for l in np.unique(s[s > 0]):
            out[s == l] += self.kernels[l].signal_variance
        return out

    def noise_variance(self, source, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        s = _source_array(source, pts.shape[0])
        self._check_sources(s)
        out = np.empty(pts.shape[0])
        for l in np.unique(s):
            sel = s == l
            out[sel] = self._noise[l](pts[sel])
        return out

    def condition(self, samples: SampleSet) -> "Posterior":
        return Posterior(self, samples)


def _offending_pair(K: np.ndarray) -> tuple[int, int] | None:
    d = np.sqrt(np.clip(np.diag(K), 1e-300, None))
    corr = np.abs(K / np.outer(d, d))
    np.fill_diagonal(corr, -np.inf)
    if corr.shape[0] < 2:
        return None
    i, j = np.unravel_index(np.argmax(corr), corr.shape)
    return (int(min(i, j)), int(max(i, j)))


def factorize(K: np.ndarray, jitter_start: float | None = None, jitter_max: float | None = None):
    """Cholesky factor of ``K`` with escalating diagonal jitter.

    Returns ``(L, jitter)`` where ``jitter`` is the absolute amount added to
    the diagonal.  Raises :class:`IllConditionedError` when even
    ``jitter_max * mean(diag)`` fails.
    """
    n = K.shape[0]
    scale = float(np.mean(np.diag(K))) if n else 1.0
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    rel = JITTER_START if jitter_start is None else jitter_start
    jitter_max = JITTER_MAX if jitter_max is None else jitter_max
    while rel <= jitter_max * (1 + 1e-9):
        jitter = rel * scale
        try:
            L = linalg.cholesky(K + jitter * np.eye(n), lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return L, jitter
        except np.linalg.LinAlgError:
            pass
        rel *= 10.0
    pair = _offending_pair(K)
    raise IllConditionedError(
        f"Gram matrix not positive definite with jitter {jitter_max:g}*mean(diag); "
        f"most collinear sample pair: {pair}",
        pair,
    )


class Posterior:
    """Posterior snapshot of a :class:`MultiSourceGP` given a :class:`SampleSet`.

    Immutable after construction; every query is a pure read.  Records are
    held in a canonical order so the posterior does not depend on the order in
    which samples were appended.
    """

    def __init__(self, model: MultiSourceGP, samples: SampleSet):
        self.model = model
        self.dim = model.dim
        if samples.dim != model.dim:
            raise ValueError("sample dimension does not match the model")
        src, X, y = samples.sources, samples.X, samples.y
        model._check_sources(src)
        if len(y):
            order = np.lexsort((y,) + tuple(X[:, k] for k in range(self.dim - 1, -1, -1)) + (src,))
            src, X, y = src[order], X[order], y[order]
        self.samples = samples
        self.src, self.X, self.y = src, X, y
        self.n = len(y)
        if self.n:
            K = model.prior_cov(src, X, src, X)
            K[np.diag_indices_from(K)] += model.noise_variance(src, X)
            self.L, self.jitter = factorize(K)
            resid = y - model.prior_mean(src, X)
            self.alpha = linalg.cho_solve((self.L, True), resid, check_finite=False)
        else:
            self.L = np.zeros((0, 0))
            self.jitter = JITTER_START * model.kernels[0].signal_variance
            self.alpha = np.zeros(0)

    # -- basic posterior queries -------------------------------------------

    def cross_prior(self, source, x) -> np.ndarray:
        """Prior covariance between the samples and ``(source, x)``: ``(n, m)``."""
        return self.model.prior_cov(self.src, self.X, source, x)

    def whiten(self, source, x) -> np.ndarray:
        """``L^{-1} K(samples, (source, x))``, shape ``(n, m)``."""
        if not self.n:
            return np.zeros((0, as_points(x, self.dim).shape[0]))
        return linalg.solve_triangular(self.L, self.cross_prior(source, x), lower=True, check_finite=False)

    def mean(self, source, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        mu = self.model.prior_mean(source, pts)
        if self.n:
            mu = mu + self.cross_prior(source, pts).T @ self.alpha
        return mu

    def cov(self, sa, xa, sb, xb) -> np.ndarray:
        K = self.model.prior_cov(sa, xa, sb, xb)
        if self.n:
            K = K - self.whiten(sa, xa).T @ self.whiten(sb, xb)
        return K

    def var(self, source, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        v = self.model.prior_var(source, pts)
        if self.n:
            V = self.whiten(source, pts)
            v = v - np.einsum("ij,ij->j", V, V)
        return np.maximum(v, 0.0)

    def std(self, source, x) -> np.ndarray:
        return np.sqrt(self.var(source, x))

    # -- look-ahead algebra ------------------------------------------------

    def lookahead_denominator(self, source, x) -> np.ndarray:
        """``lambda_l(x) + Sigma^n((l,x),(l,x))`` plus the conditioning jitter."""
        pts = as_points(x, self.dim)
        return self.model.noise_variance(source, pts) + self.var(source, pts) + self.jitter

    def lookahead_mean_variance(self, xp, source, x, return_flag: bool = False):
        """Variance of ``mu^{n+1}(0, x')`` induced by an unseen observation at ``(source, x)``.

        ``xp`` may hold many probe points; ``x`` is a single candidate.  With
        ``return_flag`` the second return value is True when the denominator
        degenerated and zeros were returned.
        """
        probes = as_points(xp, self.dim)
        cand = as_points(x, self.dim)
        if cand.shape[0] != 1:
            raise ValueError("lookahead_mean_variance takes a single candidate location")
        denom = float(self.lookahead_denominator(source, cand)[0])
        if not denom > 1e-300:
            logger.debug("degenerate look-ahead denominator %g at source %s", denom, source)
            out = np.zeros(probes.shape[0])
            return (out, True) if return_flag else out
        cross = self.cov(0, probes, source, cand)[:, 0]
        out = cross**2 / denom
        return (out, False) if return_flag else out

    def fantasy_variance(self, xp, source, x) -> np.ndarray:
        """``Sigma^{n+1}((0,x'),(0,x'))`` after adding ``(source, x)``; needs no observation."""
        probes = as_points(xp, self.dim)
        return np.maximum(self.var(0, probes) - self.lookahead_mean_variance(probes, source, x), 0.0)


# Functional aliases mirroring the operation names used across the package.

def prior_mean(model: MultiSourceGP, source: int, x) -> float:
    return float(model.prior_mean(source, as_points(x, model.dim))[0])


def prior_cov(model: MultiSourceGP, a: tuple[int, object], b: tuple[int, object]) -> float:
    return float(model.prior_cov(a[0], as_points(a[1], model.dim), b[0], as_points(b[1], model.dim))[0, 0])


def posterior_mean(state: Posterior, source: int, x) -> float:
    return float(state.mean(source, as_points(x, state.dim))[0])


def posterior_cov(state: Posterior, a: tuple[int, object], b: tuple[int, object]) -> float:
    v = float(state.cov(a[0], as_points(a[1], state.dim), b[0], as_points(b[1], state.dim))[0, 0])
    same = a[0] == b[0] and np.array_equal(as_points(a[1], state.dim), as_points(b[1], state.dim))
    if same and v < 0:
        if v < -VARIANCE_CLAMP:
            logger.warning("posterior variance %g below clamp tolerance", v)
        v = 0.0
    return v
