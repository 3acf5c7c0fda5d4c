"""The sequential contour-location loop.

1. Evaluate every source at the same ``n_initial`` locations and fit the
   hyperparameters.
2. Fix the candidate set.
3. Until a stopping rule fires: pick ``(source, x)`` maximizing the expected
   entropy reduction per unit cost, evaluate it, and recondition.  An
   evaluation of source 0 also evaluates every other source at the same
   location and re-fits the hyperparameters.
4. Return the zero contour of the posterior mean of source 0.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from .acquisition import CandidateSet, select_next
from .contour import ContourResult, extract_contour
from .entropy import IntegrationGrid, ToleranceRule, contour_entropy
from .hyperfit import HyperPriors, fit, pair_biases, refresh_schedule
from .kernels import KernelSpec, MeanSpec
from .misgp import DomainBox, InformationSource, MultiSourceGP, Posterior, SampleSet

logger = logging.getLogger(__name__)


class EvaluationError(RuntimeError):
    """An information source failed to return a finite value."""

    def __init__(self, message: str, samples: SampleSet | None = None):
        super().__init__(message)
        self.samples = samples


@dataclass
class CloverConfig:
    n_initial: int = 10
    design: str = "uniform"  # "uniform" | "lhs" | "fixed"
    design_points: Sequence[Sequence[float]] | None = None
    candidates: str = "grid"  # "grid" | "lhs"
    n_candidates: int = 30  # per dimension for "grid", total for "lhs"
    candidate_sources: Sequence[int] | None = None
    regenerate_candidates: bool = False
    integration: str = "trapezoid"  # "trapezoid" | "monte_carlo"
    n_integration: int = 50  # per dimension for "trapezoid", total for "monte_carlo"
    c_eps: float = 2.0
    eps_mode: str = "fantasy"
    reference: str = "closed_form"
    kernel: str = "se"
    mean: str = "zero"
    bias_mean: str = "zero"
    fit_mode: str = "mle"
    priors: Sequence[HyperPriors | None] | None = None
    n_starts: int = 8
    budget: float = math.inf
    entropy_floor: float = 0.0
    acquisition_floor: float | None = None
    max_evaluations: int | None = None
    output_resolution: int = 200
    seed: int = 0

    def __post_init__(self):
        if not (self.budget > 0 or (self.max_evaluations or 0) > 0):
            raise ValueError("need a positive budget or max_evaluations")
        if self.entropy_floor < 0 or (self.acquisition_floor is not None and self.acquisition_floor < 0):
            raise ValueError("stopping thresholds must be non-negative")
        if self.design not in ("uniform", "lhs", "fixed"):
            raise ValueError(f"unknown design type {self.design!r}")
        if self.candidates not in ("grid", "lhs"):
            raise ValueError(f"unknown candidate set type {self.candidates!r}")
        if self.integration not in ("trapezoid", "monte_carlo"):
            raise ValueError(f"unknown integration rule {self.integration!r}")


@dataclass
class IterationTrace:
    """One evaluation.  Rows of the same iteration share entropy and metrics."""

    iteration: int
    source: int
    x: tuple[float, ...]
    y: float
    step_cost: float
    cum_cost: float
    entropy: float
    acquisition: float | None
    refreshed: bool
    metrics: dict[str, float] = field(default_factory=dict)


@dataclass
class RunResult:
    contour: ContourResult | None
    trace: list[IterationTrace]
    state: Posterior | None
    samples: SampleSet
    status: str
    message: str = ""
    hyperparameters: list[tuple[MeanSpec, KernelSpec]] = field(default_factory=list)

    @property
    def total_cost(self) -> float:
        return self.trace[-1].cum_cost if self.trace else 0.0

    @property
    def n_evaluations(self) -> int:
        return len(self.trace)


def _evaluate(source: InformationSource, x: np.ndarray, samples: SampleSet) -> float:
    try:
        y = source.evaluate(x)
    except Exception as exc:
        raise EvaluationError(f"source {source.index} failed at x={x.tolist()}: {exc}", samples) from exc
    if not np.isfinite(y):
        raise EvaluationError(f"source {source.index} returned non-finite value at x={x.tolist()}", samples)
    return y


def design_locations(config: CloverConfig, domain: DomainBox, rng: np.random.Generator) -> np.ndarray:
    if config.design == "fixed":
        if config.design_points is None:
            raise ValueError("design 'fixed' requires design_points")
        pts = np.atleast_2d(np.asarray(config.design_points, dtype=float))
        domain.check(pts)
    elif config.design == "lhs":
        pts = domain.scale(qmc.LatinHypercube(d=domain.dim, seed=rng).random(config.n_initial))
    else:
        pts = domain.scale(rng.random((config.n_initial, domain.dim)))
    if pts.shape[0] < 2:
        raise ValueError("initial design needs at least 2 locations to fit hyperparameters")
    return pts


def initial_design(config: CloverConfig, sources: Sequence[InformationSource], domain: DomainBox, rng: np.random.Generator | None = None) -> SampleSet:
    """Evaluate every source at each design location, location-major."""
    if config.design != "fixed" and config.n_initial < 2:
        raise ValueError("n_initial must be >= 2")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    samples = SampleSet(domain.dim)
    for x in design_locations(config, domain, rng):
        for src in sources:
            samples.append(src.index, x, _evaluate(src, x, samples))
    return samples


def _default_kernel(family: str, domain: DomainBox, variance: float) -> KernelSpec:
    return KernelSpec(family, variance if variance > 0 else 1.0, tuple(0.2 * domain.span))


class SurrogateFitter:
    """Fits target and bias hyperparameters from a sample set."""

    def __init__(self, config: CloverConfig, sources: Sequence[InformationSource], domain: DomainBox):
        self.config = config
        self.sources = sorted(sources, key=lambda s: s.index)
        self.domain = domain
        self.n_sources = len(self.sources)
        self.params: list[tuple[MeanSpec, KernelSpec]] | None = None
        self.n_fits = 0

    def _priors(self, l: int) -> HyperPriors | None:
        pr = self.config.priors
        return None if pr is None or l >= len(pr) else pr[l]

    def fit(self, samples: SampleSet) -> MultiSourceGP:
        cfg = self.config
        seed = cfg.seed * 1000 + self.n_fits
        self.n_fits += 1
        params = list(self.params) if self.params else [None] * self.n_sources
        X0, y0 = samples.of_source(0)
        lam0 = self.sources[0].noise_at(X0) if len(y0) else np.zeros(0)
        r = fit(X0, y0, cfg.kernel, cfg.mean, self._priors(0), cfg.fit_mode, lam0, self.domain, seed, cfg.n_starts,
                warm_start=params[0][1] if params[0] else None)
        params[0] = (r.mean, r.kernel)
        biases = pair_biases(samples, self.n_sources)
        for l in range(1, self.n_sources):
            pairs = biases.get(l, [])
            if len(pairs) >= 2:
                Xb = np.array([b.x for b in pairs])
                db = np.array([b.delta for b in pairs])
                noise = self.sources[l].noise_at(Xb) + self.sources[0].noise_at(Xb)
                r = fit(Xb, db, cfg.kernel, cfg.bias_mean, self._priors(l), cfg.fit_mode, noise, self.domain, seed,
                        cfg.n_starts, warm_start=params[l][1] if params[l] else None)
                params[l] = (r.mean, r.kernel)
            elif params[l] is None:
                params[l] = (MeanSpec(cfg.bias_mean), _default_kernel(cfg.kernel, self.domain, 1.0))
        self.params = params
        return self.model()

    def model(self) -> MultiSourceGP:
        means, kernels = zip(*self.params)
        return MultiSourceGP(means, kernels, noise=[s.noise_variance for s in self.sources])


def _candidates(config: CloverConfig, domain: DomainBox, sources: Sequence[int], rng) -> CandidateSet:
    allowed = tuple(config.candidate_sources) if config.candidate_sources is not None else tuple(sources)
    if config.candidates == "grid":
        return CandidateSet.grid(domain, config.n_candidates, allowed)
    return CandidateSet.latin_hypercube(domain, config.n_candidates, int(rng.integers(2**31)), allowed)


def _grid(config: CloverConfig, domain: DomainBox) -> IntegrationGrid:
    if config.integration == "trapezoid":
        return IntegrationGrid.trapezoid(domain, config.n_integration)
    return IntegrationGrid.monte_carlo(domain, config.n_integration, config.seed)


def run(
    config: CloverConfig,
    sources: Sequence[InformationSource],
    domain: DomainBox,
    metrics: dict[str, Callable[[Posterior], float]] | None = None,
    callback: Callable[[IterationTrace, Posterior], None] | None = None,
) -> RunResult:
    """Run the loop until budget, entropy, acquisition or evaluation-count limits fire."""
    sources = sorted(sources, key=lambda s: s.index)
    if not sources or sources[0].index != 0:
        raise ValueError("sources must include index 0")
    if [s.index for s in sources] != list(range(len(sources))):
        raise ValueError("source indices must be 0..M without gaps")
    metrics = metrics or {}
    rng = np.random.default_rng(config.seed)
    rule = ToleranceRule(config.c_eps)
    grid = _grid(config, domain)
    costs = list(sources)
    fitter = SurrogateFitter(config, sources, domain)
    trace: list[IterationTrace] = []

    def record(iteration, rows, state, acquisition, refreshed):
        h = contour_entropy(state, grid, rule)
        vals = {name: float(fn(state)) for name, fn in metrics.items()}
        cum = trace[-1].cum_cost if trace else 0.0
        for k, (src, x, y) in enumerate(rows):
            step = float(sources[src].cost_at(np.asarray(x))[0])
            cum += step
            acq = acquisition if k == 0 else None
            trace.append(IterationTrace(iteration, src, tuple(x), y, step, cum, h, acq, refreshed, dict(vals)))
            if callback:
                callback(trace[-1], state)
        return h

    try:
        samples = initial_design(config, sources, domain, rng)
    except EvaluationError as exc:
        return RunResult(None, trace, None, exc.samples or SampleSet(domain.dim), "error", str(exc))

    state = None
    try:
        model = fitter.fit(samples)
        state = model.condition(samples)
    except (np.linalg.LinAlgError, ValueError) as exc:
        return RunResult(None, trace, None, samples, "error", f"surrogate failure: {exc}")
    entropy = record(0, [(r.source, r.x, r.y) for r in samples], state, None, True)

    candidates = _candidates(config, domain, [s.index for s in sources], rng)
    status, message = "", ""
    iteration = 0
    while True:
        if trace[-1].cum_cost >= config.budget:
            status = "budget"
            break
        if entropy <= config.entropy_floor:
            status = "entropy"
            break
        if config.max_evaluations is not None and len(trace) >= config.max_evaluations:
            status = "max_evaluations"
            break
        iteration += 1
        if config.regenerate_candidates and iteration > 1:
            candidates = _candidates(config, domain, [s.index for s in sources], rng)
        try:
            decision = select_next(state, candidates, grid, rule, costs, eps_mode=config.eps_mode, reference=config.reference)
        except Exception as exc:
            status, message = "error", f"acquisition failure at iteration {iteration}: {exc}"
            break
        if config.acquisition_floor is not None and decision.value <= config.acquisition_floor:
            status = "acquisition"
            break
        l, x = decision.source, decision.x
        try:
            rows = [(l, tuple(x), _evaluate(sources[l], x, samples))]
            refreshed = refresh_schedule(l)
            if refreshed:
                rows += [(s.index, tuple(x), _evaluate(s, x, samples)) for s in sources if s.index != l]
        except EvaluationError as exc:
            status, message = "error", str(exc)
            break
        for src, xx, y in rows:
            samples.append(src, xx, y)
        try:
            if refreshed:
                model = fitter.fit(samples)
            state = model.condition(samples)
        except (np.linalg.LinAlgError, ValueError) as exc:
            status, message = "error", f"surrogate failure at iteration {iteration}: {exc}"
            break
        entropy = record(iteration, rows, state, decision.value, refreshed)
        logger.debug("iter %d: source %d x=%s u=%.3g H=%.3g cost=%.4g", iteration, l, x, decision.value, entropy, trace[-1].cum_cost)

    contour = extract_contour(state, domain, config.output_resolution) if state is not None else None
    return RunResult(contour, trace, state, samples, status, message, list(fitter.params or []))
