"""Hyperparameter estimation for the target and bias processes.

Kernel hyperparameters are optimized in log space by multi-start
Nelder-Mead on the (penalized) log marginal likelihood.  A constant mean is
profiled out in closed form (generalized least squares, or its MAP analogue
when the mean has a Normal prior).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.linalg import lapack

from .kernels import KernelSpec, MeanSpec, kernel_family
from . import misgp
from .misgp import DomainBox, SampleSet, factorize

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
LENGTH_BOUNDS = (1e-3, 10.0)  # times the domain range
VARIANCE_BOUNDS = (1e-8, 1e4)  # times the data variance


def _nelder_mead_options(d: int) -> dict:
    # 1e-3 in log space is 0.1% in the hyperparameters; 1e-4 in -log L is a
    # likelihood ratio of 1.0001.  Tighter settings only let starts stranded on
    # flat bound walls run for thousands of evaluations.
    return {"xatol": 1e-3, "fatol": 1e-4, "maxiter": 300 * (d + 1), "maxfev": 600 * (d + 1)}


class Normal(NamedTuple):
    mean: float
    sd: float


@dataclass
class HyperPriors:
    """Optional Normal priors: on ``log(signal_variance)``, on each length scale, on the constant mean."""

    log_signal_variance: Normal | None = None
    length_scales: Sequence[Normal | None] | Normal | None = None
    constant_mean: Normal | None = None

    def __post_init__(self):
        for p in self._all():
            if p is not None and not p.sd > 0:
                raise ValueError("prior standard deviations must be positive")

    def _all(self):
        ls = self.length_scales
        ls = list(ls) if isinstance(ls, (list, tuple)) and not isinstance(ls, Normal) else [ls]
        return [self.log_signal_variance, self.constant_mean, *ls]

    def length_prior(self, k: int) -> Normal | None:
        ls = self.length_scales
        if ls is None or isinstance(ls, Normal):
            return ls
        return ls[k]

    @property
    def empty(self) -> bool:
        return all(p is None for p in self._all())

    @classmethod
    def from_domain(cls, domain: DomainBox, sd_fraction: float = 0.5) -> "HyperPriors":
        """Length-scale priors centred on the domain range per coordinate."""
        return cls(length_scales=[Normal(float(r), sd_fraction * float(r)) for r in domain.span])


@dataclass
class FitResult:
    mean: MeanSpec
    kernel: KernelSpec
    objective: float
    log_likelihood: float
    fallback: bool = False
    starts: list = field(default_factory=list, repr=False)


def _log_normal_pdf(x: float, p: Normal) -> float:
    z = (x - p.mean) / p.sd
    return -0.5 * z * z - math.log(p.sd) - 0.5 * LOG_2PI


def _gram(X, kernel: KernelSpec, noise):
    K = kernel(X)
    K[np.diag_indices_from(K)] += noise
    return K


def log_marginal_likelihood(X, y, mean: MeanSpec, kernel: KernelSpec, noise=0.0) -> float:
    """``-1/2 r^T (K + Lambda)^{-1} r - 1/2 ln|K + Lambda| - n/2 ln 2 pi`` with ``r = y - mean``.

    Returns ``-inf`` if the Gram matrix cannot be factorized.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    noise = np.broadcast_to(np.asarray(noise, dtype=float), y.shape)
    try:
        L, _ = factorize(_gram(X, kernel, noise))
    except np.linalg.LinAlgError:
        return -math.inf
    r = y - mean(X)
    a = linalg.solve_triangular(L, r, lower=True, check_finite=False)
    return float(-0.5 * a @ a - np.sum(np.log(np.diag(L))) - 0.5 * len(y) * LOG_2PI)


class _Objective:
    """Negative penalized log likelihood over ``theta = [log s2, log l_1..l_d]``."""

    def __init__(self, X, y, family, mean_family, priors, mode, noise):
        self.X, self.y = X, y
        self.family, self.mean_family = family, mean_family
        self.priors = priors if mode == "map" else HyperPriors()
        self.noise = np.asarray(noise, dtype=float)
        self.d = X.shape[1]
        self.n = len(y)
        self.rhs = np.column_stack([np.ones(self.n), y])
        # per-dimension squared differences, reused by every evaluation
        self.sqdiff = (X[:, None, :] - X[None, :, :]) ** 2
        self.diag = np.diag_indices(self.n)

    def kernel(self, theta) -> KernelSpec:
        return KernelSpec(self.family, math.exp(theta[0]), tuple(np.exp(theta[1:])))

    def _factor(self, theta):
        r2 = self.sqdiff @ np.exp(-2.0 * np.asarray(theta[1:]))
        s2 = math.exp(theta[0])
        if self.family == "se":
            K = s2 * np.exp(-0.5 * r2)
        else:
            r5 = np.sqrt(5.0 * r2)
            K = s2 * (1.0 + r5 + (5.0 / 3.0) * r2) * np.exp(-r5)
        K[self.diag] += self.noise
        scale = float(np.mean(K[self.diag]))
        rel = misgp.JITTER_START
        while rel <= misgp.JITTER_MAX * (1 + 1e-9):
            A = K.copy()
            A[self.diag] += rel * scale
            L, info = lapack.dpotrf(A, lower=1, clean=1, overwrite_a=1)
            if info == 0:
                return L
            rel *= 10.0
        return None

    def evaluate(self, theta):
        """Return ``(objective, log_likelihood, mean_value)``."""
        L = self._factor(theta)
        if L is None:
            return math.inf, -math.inf, 0.0
        m = 0.0
        if self.mean_family == "constant":
            sol, _ = lapack.dtrtrs(L, self.rhs, lower=1)
            a1, ay = sol[:, 0], sol[:, 1]
            num, den = a1 @ ay, a1 @ a1
            p = self.priors.constant_mean
            if p is not None:
                num += p.mean / p.sd**2
                den += 1.0 / p.sd**2
            m = num / den
            a = ay - m * a1
        else:
            a = lapack.dtrtrs(L, self.y, lower=1)[0]
        lml = -0.5 * a @ a - np.sum(np.log(L[self.diag])) - 0.5 * self.n * LOG_2PI
        lp = 0.0
        pr = self.priors
        if pr.log_signal_variance is not None:
            lp += _log_normal_pdf(theta[0], pr.log_signal_variance)
        for k in range(self.d):
            p = pr.length_prior(k)
            if p is not None:
                lp += _log_normal_pdf(math.exp(theta[1 + k]), p)
        if self.mean_family == "constant" and pr.constant_mean is not None:
            lp += _log_normal_pdf(m, pr.constant_mean)
        val = -(lml + lp)
        return (val if np.isfinite(val) else math.inf), float(lml), float(m)

    def __call__(self, theta):
        return self.evaluate(theta)[0]


def _canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.lexsort((y,) + tuple(X[:, k] for k in range(X.shape[1] - 1, -1, -1)))


def fit(
    X,
    y,
    family: str = "se",
    mean_family: str = "zero",
    priors: HyperPriors | None = None,
    mode: str = "mle",
    noise=0.0,
    domain: DomainBox | None = None,
    seed: int = 0,
    n_starts: int = 8,
    warm_start: KernelSpec | None = None,
) -> FitResult:
    """Multi-start MLE or MAP estimate of mean and kernel hyperparameters.

    Parameters
    ----------
    X, y
        Training inputs ``(n, d)`` and observations ``(n,)``, ``n >= 2``.
    priors
        Used by ``mode="map"``; ignored for ``"mle"``.
    domain
        Sets the length-scale bounds; defaults to the bounding box of ``X``.
    warm_start
        Previous estimate, used as one of the starting points.
    """
    mode = mode.lower()
    if mode not in ("mle", "map"):
        raise ValueError("mode must be 'mle' or 'map'")
    family = kernel_family(family)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(y) < 2:
        raise ValueError("need at least 2 samples to fit hyperparameters")
    order = _canonical_order(X, y)
    X, y = X[order], y[order]
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (len(y),))[order]
    priors = priors or HyperPriors()
    d = X.shape[1]

    if domain is not None:
        span = domain.span
    else:
        span = np.ptp(X, axis=0)
        span = np.where(span > 0, span, 1.0)
    yvar = float(np.var(y))
    vscale = yvar if yvar > 0 else 1.0
    lo = np.concatenate([[math.log(VARIANCE_BOUNDS[0] * vscale)], np.log(LENGTH_BOUNDS[0] * span)])
    hi = np.concatenate([[math.log(VARIANCE_BOUNDS[1] * vscale)], np.log(LENGTH_BOUNDS[1] * span)])
    bounds = list(zip(lo, hi))

    obj = _Objective(X, y, family, mean_family, priors, mode, noise)

    starts = []
    if mode == "map":
        s2 = math.exp(priors.log_signal_variance.mean) if priors.log_signal_variance else vscale
        ls = [priors.length_prior(k).mean if priors.length_prior(k) else 0.2 * span[k] for k in range(d)]
        starts.append(np.log([s2, *ls]))
    starts.append(np.log([vscale, *(0.2 * span)]))
    if warm_start is not None:
        starts.append(np.log([warm_start.signal_variance, *warm_start.length_scales]))
    rng = np.random.default_rng(seed)
    while len(starts) < n_starts:
        starts.append(lo + (hi - lo) * rng.random(d + 1))
    starts = [np.clip(s, lo, hi) for s in starts]

    best = None
    records = []
    for s in starts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = optimize.minimize(
                obj, s, method="Nelder-Mead", bounds=bounds,
                options=_nelder_mead_options(d),
            )
        records.append((float(res.fun), res.x))
        if np.isfinite(res.fun) and (best is None or res.fun < best[0]):
            best = (float(res.fun), res.x)

    if best is None:
        warnings.warn("hyperparameter fit failed from every start; using heuristic values", RuntimeWarning)
        theta = starts[0]
        mval = priors.constant_mean.mean if priors.constant_mean else float(np.mean(y))
        return FitResult(
            MeanSpec(mean_family, mval if mean_family == "constant" else 0.0),
            obj.kernel(theta), math.inf, -math.inf, fallback=True, starts=records,
        )
    val, lml, mval = obj.evaluate(best[1])
    return FitResult(MeanSpec(mean_family, mval), obj.kernel(best[1]), val, lml, starts=records)


class BiasSample(NamedTuple):
    source: int
    x: tuple[float, ...]
    delta: float


def pair_biases(samples: SampleSet, n_sources: int | None = None) -> dict[int, list[BiasSample]]:
    """Biases ``y_l - y_0`` at every location evaluated by both source 0 and source ``l``.

    Locations are matched by exact coordinate equality.  Repeated
    evaluations of one source at one location are averaged.  Output is sorted
    by location, independent of record order.
    """
    groups: dict[tuple[int, tuple], list[float]] = {}
    for r in samples:
        groups.setdefault((r.source, r.x), []).append(r.y)
    first = {k: float(np.mean(sorted(v))) for k, v in groups.items()}
    if n_sources is None:
        n_sources = 1 + max((r.source for r in samples), default=0)
    out: dict[int, list[BiasSample]] = {l: [] for l in range(1, n_sources)}
    for (src, x), y in first.items():
        if src >= 1 and (0, x) in first:
            out.setdefault(src, []).append(BiasSample(src, x, y - first[(0, x)]))
    for l in out:
        out[l].sort(key=lambda b: b.x)
    return out


def refresh_schedule(source: int) -> bool:
    """Re-fit hyperparameters after a new sample? True only for source 0."""
    return int(source) == 0
