import math

import numpy as np
import pytest

from clover.acquisition import CandidateSet
from clover.algorithm import CloverConfig, initial_design, run
from clover.contour import crossings_1d, extract_contour, marching_squares
from clover.entropy import LN3
from clover.kernels import KernelSpec, MeanSpec
from clover.misgp import DomainBox, InformationSource, MultiSourceGP, SampleSet
from clover.traceio import trace_to_string

SQUARE = DomainBox((0.0, 0.0), (1.0, 1.0))


def circle(x):
    x = np.asarray(x)
    return 0.35**2 - (x[..., 0] - 0.5) ** 2 - (x[..., 1] - 0.5) ** 2


def toy_sources(costs=(1.0, 0.1)):
    fns = [circle, lambda x: circle(x) + 0.05 * np.sin(5 * x[0])]
    return [InformationSource(l, fns[l], cost=costs[l]) for l in range(len(costs))]


def small_config(**kw):
    base = dict(n_initial=5, n_candidates=8, n_integration=15, output_resolution=40, n_starts=2, max_evaluations=25)
    base.update(kw)
    return CloverConfig(**base)


def test_initial_design_counts():
    cfg = small_config(n_initial=10)
    srcs = toy_sources((1.0, 0.1)) + [InformationSource(2, circle, cost=0.01)]
    s = initial_design(cfg, srcs, SQUARE)
    assert len(s) == 30
    assert len({r.x for r in s}) == 10
    fixed = small_config(design="fixed", design_points=[[0.1, 0.2], [0.8, 0.9]])
    assert len(initial_design(fixed, toy_sources(), SQUARE)) == 4


def test_initial_design_rejects_single_point():
    with pytest.raises(ValueError):
        initial_design(small_config(n_initial=1), toy_sources(), SQUARE)
    with pytest.raises(ValueError):
        initial_design(small_config(design="fixed", design_points=[[0.5, 0.5]]), toy_sources(), SQUARE)


def test_lhs_design_is_stratified():
    s = initial_design(small_config(design="lhs", n_initial=12), toy_sources((1.0,)), SQUARE)
    X = s.X
    for k in range(2):
        assert sorted(np.floor(X[:, k] * 12).astype(int)) == list(range(12))


def test_config_validation():
    with pytest.raises(ValueError):
        CloverConfig(budget=0.0)
    with pytest.raises(ValueError):
        CloverConfig(entropy_floor=-1.0)
    with pytest.raises(ValueError):
        CloverConfig(design="sobol")


def test_budget_consumed_by_initial_design():
    cfg = small_config(budget=5 * 1.1, max_evaluations=None)
    res = run(cfg, toy_sources(), SQUARE)
    assert res.status == "budget"
    assert res.n_evaluations == 10
    assert {r.iteration for r in res.trace} == {0}
    assert res.contour is not None and res.contour.signs.shape == (40, 40)


def test_cost_accounting_and_trace_invariants():
    res = run(small_config(), toy_sources(), SQUARE)
    assert res.status in ("max_evaluations", "entropy")
    costs = [r.step_cost for r in res.trace]
    assert res.total_cost == pytest.approx(math.fsum(costs), rel=1e-12)
    assert all(b.cum_cost > a.cum_cost for a, b in zip(res.trace, res.trace[1:]))
    for r in res.trace:
        assert r.step_cost == (1.0 if r.source == 0 else 0.1)
        assert 0.0 <= r.entropy <= LN3
    cands = CandidateSet.grid(SQUARE, 8).points
    for r in res.trace:
        if r.iteration > 0:
            assert np.any(np.all(np.isclose(cands, r.x, rtol=0, atol=0), axis=1))
    # a pick of source 0 is followed by co-evaluation of the other sources at the same x
    for i, r in enumerate(res.trace):
        if r.iteration > 0 and r.acquisition is not None and r.source == 0:
            assert r.refreshed and res.trace[i + 1].source == 1 and res.trace[i + 1].x == r.x
        if r.iteration > 0 and r.source == 1 and r.acquisition is not None:
            assert not r.refreshed


def test_candidate_sources_restrict_choice():
    res = run(small_config(candidate_sources=[0], max_evaluations=16), toy_sources(), SQUARE)
    assert all(r.source == 0 for r in res.trace if r.acquisition is not None)


def test_run_is_deterministic():
    a = run(small_config(seed=3), toy_sources(), SQUARE)
    b = run(small_config(seed=3), toy_sources(), SQUARE)
    assert trace_to_string(a.trace) == trace_to_string(b.trace)
    c = run(small_config(seed=4), toy_sources(), SQUARE)
    assert trace_to_string(a.trace) != trace_to_string(c.trace)


def test_stops_on_acquisition_floor():
    res = run(small_config(acquisition_floor=1e9), toy_sources(), SQUARE)
    assert res.status == "acquisition" and res.n_evaluations == 10


def test_stops_on_entropy_floor():
    res = run(small_config(entropy_floor=1.2, max_evaluations=None, budget=100.0), toy_sources(), SQUARE)
    assert res.status == "entropy" and res.n_evaluations == 10


@pytest.mark.parametrize("seed", [0, 1])
def test_locates_the_circle(seed):
    cfg = small_config(n_initial=10, max_evaluations=45, n_candidates=15, n_integration=25, seed=seed)
    res = run(cfg, toy_sources((1.0,)), SQUARE)
    assert res.status == "entropy"
    pts = np.concatenate(res.contour.polylines)
    radius = np.hypot(pts[:, 0] - 0.5, pts[:, 1] - 0.5)
    assert np.max(np.abs(radius - 0.35)) < 2e-3


def test_failing_source_returns_partial_trace():
    calls = {"n": 0}

    def flaky(x):
        calls["n"] += 1
        if calls["n"] > 7:
            raise RuntimeError("solver diverged")
        return float(circle(x))

    res = run(small_config(), [InformationSource(0, flaky)], SQUARE)
    assert res.status == "error" and "solver diverged" in res.message
    assert res.n_evaluations >= 5

    res = run(small_config(), [InformationSource(0, lambda x: math.nan)], SQUARE)
    assert res.status == "error" and res.trace == []


def test_source_indices_must_start_at_zero():
    with pytest.raises(ValueError):
        run(small_config(), [InformationSource(1, circle)], SQUARE)


def test_linear_crossing_1d():
    model = MultiSourceGP([MeanSpec()], [KernelSpec("se", 1.0, (10.0,))])
    s = SampleSet(1)
    for x in np.linspace(0.16, 0.17, 5):
        s.append(0, (x,), x - 0.165)
    state = model.condition(s)
    res = extract_contour(state, DomainBox((0.16,), (0.17,)), 101)
    assert res.crossings.shape == (1,)
    assert res.crossings[0] == pytest.approx(0.165, abs=1e-9)


def test_crossings_1d_linear_exact():
    x = np.linspace(0, 1, 11)
    np.testing.assert_allclose(crossings_1d(x, x - 0.333), [0.333], atol=1e-15)
    assert crossings_1d(x, x + 1).size == 0


def test_positive_mean_gives_empty_contour():
    model = MultiSourceGP([MeanSpec("constant", 3.0)], [KernelSpec("se", 1.0, (0.3, 0.3))])
    res = extract_contour(model.condition(SampleSet(2)), SQUARE, 20)
    assert res.polylines == [] and np.all(res.signs == 1)


def test_marching_squares_circle_points_lie_on_zero_set():
    xs = ys = np.linspace(-1, 1, 81)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    V = X + 0.3 * Y - 0.1  # linear: interpolated crossings are exact
    lines = marching_squares(xs, ys, V)
    assert len(lines) == 1
    pts = lines[0]
    np.testing.assert_allclose(pts[:, 0] + 0.3 * pts[:, 1] - 0.1, 0.0, atol=1e-12)

    V = X**2 + Y**2 - 0.5**2
    lines = marching_squares(xs, ys, V)
    assert len(lines) == 1
    ring = lines[0]
    assert np.allclose(ring[0], ring[-1])  # closed
    assert np.max(np.abs(np.hypot(ring[:, 0], ring[:, 1]) - 0.5)) < 2e-3


def test_marching_squares_saddle_uses_centre():
    xs = ys = np.array([0.0, 1.0])
    V = np.array([[1.0, -1.0], [-1.0, 1.0]])  # V[i, j] at (xs[i], ys[j])
    lines = marching_squares(xs, ys, V + 0.5)  # centre positive: negative corners cut off
    assert len(lines) == 2
    lines = marching_squares(xs, ys, V - 0.5)
    assert len(lines) == 2
    for ln in lines:
        assert ln.shape == (2, 2)
