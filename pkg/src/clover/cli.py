"""Command-line experiment runner.

Verbs
-----
``run CONFIG``
    Run the replications described by a TOML config, writing one trace CSV
    per replication, ``runs.csv`` (status per replication) and
    ``summary.csv``.  ``CONFIG`` is a path or the name of a bundled config
    (``multimodal``, ``branin-eps3``, ...).
``summarize TRACE [TRACE ...] --out FILE``
    Percentile summary of existing traces.
``list-problems``
    Built-in problems.

Config schema::

    [experiment]
    problem = "multimodal"        # built-in problem, or describe [domain] and [[source]]
    replications = 25
    seed = 0                      # replication i uses seed + i
    output = "out/multimodal"     # relative to the working directory
    metrics = ["area_error"]      # optional; default: every metric the problem supports
    axis = "cost"                 # summary axis: cost | evaluations | iteration
    checkpoints = [0, 10, 20]     # optional summary checkpoints
    jobs = 1                      # worker processes

    [clover]                      # any CloverConfig field
    n_initial = 10
    entropy_floor = 1e-6

    [clover.priors.0]             # MAP priors per source, each a [mean, sd] pair
    log_signal_variance = [0.0, 1.0]
    length_scales = [[11.0, 5.5], [11.0, 5.5]]

    [domain]                      # external problems only
    lower = [0.0]
    upper = [1.0]

    [[source]]                    # external information source, index 0 first
    command = "python3 sim.py {x1}"
    parse = "float"               # float | last | regex:<pattern with one group>
    cost = 1.0
    noise_variance = 0.0
    timeout = 60
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import re
import shlex
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .algorithm import CloverConfig, RunResult, run
from .benchmarks import PROBLEMS, AnalyticProblem, AreaErrorMetric, FailureProbabilityErrorMetric, get_problem
from .hyperfit import HyperPriors, Normal
from .misgp import DomainBox, InformationSource
from .traceio import AXES, read_trace, summarize, write_trace

logger = logging.getLogger(__name__)

EXPERIMENT_KEYS = {"problem", "replications", "seed", "output", "metrics", "axis", "checkpoints", "jobs"}
SOURCE_KEYS = {"command", "parse", "cost", "noise_variance", "timeout", "name"}
PRIOR_KEYS = {"log_signal_variance", "length_scales", "constant_mean"}
CLOVER_FIELDS = {f.name for f in dataclasses.fields(CloverConfig)}
METRICS = ("area_error", "pf_error")


class ConfigError(ValueError):
    """Invalid experiment config; ``line`` points into the file when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line, self.path = line, path
        loc = f"{path or '<config>'}:{line}: " if line else f"{path or '<config>'}: "
        super().__init__(loc + message)


class ExternalCommandError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# external sources


def _parse_output(text: str, rule: str) -> float:
    if rule == "float":
        return float(text.strip())
    if rule == "last":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty output")
        return float(lines[-1].split()[-1])
    if rule.startswith("regex:"):
        m = re.search(rule[len("regex:"):], text)
        if m is None:
            raise ValueError(f"pattern {rule[6:]!r} not found")
        return float(m.group(1) if m.groups() else m.group(0))
    raise ValueError(f"unknown parse rule {rule!r}")


def _check_parse_rule(rule: str) -> None:
    if rule in ("float", "last"):
        return
    if rule.startswith("regex:"):
        re.compile(rule[6:])
        return
    raise ValueError(f"unknown parse rule {rule!r}; use float, last or regex:<pattern>")


@dataclass(frozen=True)
class ExternalCommand:
    """Evaluator that runs a shell-free command with ``{x1}``, ``{x2}``... replaced by coordinates."""

    template: str
    parse: str = "float"
    timeout: float | None = None

    def __post_init__(self):
        _check_parse_rule(self.parse)

    def argv(self, x) -> list[str]:
        subs = {f"x{k + 1}": "%.17g" % float(v) for k, v in enumerate(x)}
        try:
            return shlex.split(self.template.format(**subs))
        except (KeyError, IndexError) as exc:
            raise ExternalCommandError(f"placeholder {exc} has no coordinate (dimension {len(subs)})") from None

    def __call__(self, x) -> float:
        argv = self.argv(x)
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout, check=False)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ExternalCommandError(f"{argv[0]}: {exc}") from exc
        if proc.returncode != 0:
            err = proc.stderr.strip().splitlines()[-1:] or [""]
            raise ExternalCommandError(f"{argv[0]} exited with status {proc.returncode}: {err[0]}")
        try:
            return _parse_output(proc.stdout, self.parse)
        except ValueError as exc:
            raise ExternalCommandError(f"cannot parse output of {argv[0]} ({exc}): {proc.stdout[:200]!r}") from None


def external_source(
    command: str,
    parse: str = "float",
    index: int = 0,
    cost: float = 1.0,
    noise_variance: float = 0.0,
    timeout: float | None = None,
    name: str | None = None,
) -> InformationSource:
    """Wrap an external program as an information source with constant cost and noise."""
    return InformationSource(index, ExternalCommand(command, parse, timeout), cost=cost,
                             noise_variance=noise_variance, name=name or f"IS{index}")


# ---------------------------------------------------------------------------
# config


def _key_line(text: str, table: str | None, key: str) -> int | None:
    """Line of ``key = ...`` inside ``[table]`` (first match), for error messages."""
    lines = text.splitlines()
    start = 0
    if table:
        pat = re.compile(r"^\s*\[\[?\s*" + re.escape(table) + r"\s*\]\]?\s*(#.*)?$")
        hits = [i for i, ln in enumerate(lines) if pat.match(ln)]
        if not hits:
            return None
        start = hits[0] + 1
    kpat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
    for i in range(start, len(lines)):
        if table is None and lines[i].lstrip().startswith("["):
            break
        if table and i > start and re.match(r"^\s*\[", lines[i]):
            break
        if kpat.match(lines[i]):
            return i + 1
    return None


def _table_line(text: str, table: str) -> int | None:
    pat = re.compile(r"^\s*\[\[?\s*" + re.escape(table) + r"\s*\]\]?")
    for i, ln in enumerate(text.splitlines()):
        if pat.match(ln):
            return i + 1
    return None


@dataclass
class SourceSpec:
    command: str
    parse: str = "float"
    cost: float = 1.0
    noise_variance: float = 0.0
    timeout: float | None = None
    name: str | None = None


@dataclass
class ExperimentConfig:
    """Plain-data description of an experiment; safe to send to worker processes."""

    problem: str | None
    clover: dict[str, Any]
    replications: int = 1
    seed: int = 0
    output: str = "out"
    metrics: list[str] | None = None
    axis: str = "cost"
    checkpoints: list[float] | None = None
    jobs: int = 1
    domain: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    sources: list[SourceSpec] = field(default_factory=list)

    def build_problem(self) -> tuple[list[InformationSource], DomainBox, AnalyticProblem | None]:
        if self.problem is not None:
            p = get_problem(self.problem)
            return p.sources, p.domain, p
        domain = DomainBox(*self.domain)
        sources = [
            external_source(s.command, s.parse, i, s.cost, s.noise_variance, s.timeout, s.name)
            for i, s in enumerate(self.sources)
        ]
        return sources, domain, None

    def clover_config(self, replication: int) -> CloverConfig:
        kw = dict(self.clover)
        kw["seed"] = self.seed + replication
        return CloverConfig(**kw)


def _normal(value, where: str) -> Normal:
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise ValueError(f"{where} must be a [mean, sd] pair")
    return Normal(float(value[0]), float(value[1]))


def _priors(tables: dict, text: str) -> list[HyperPriors | None]:
    out: list[HyperPriors | None] = []
    for key in sorted(tables, key=lambda k: int(k) if str(k).isdigit() else -1):
        if not str(key).isdigit():
            raise ConfigError(f"prior table name must be a source index, got {key!r}", _table_line(text, f"clover.priors.{key}"))
        tab = tables[key]
        where = f"clover.priors.{key}"
        for k in tab:
            if k not in PRIOR_KEYS:
                raise ConfigError(f"unknown key {k!r} in [{where}]", _key_line(text, where, k))
        try:
            ls = tab.get("length_scales")
            if ls is not None:
                if ls and isinstance(ls[0], (list, tuple)):
                    ls = [_normal(v, "length_scales entry") for v in ls]
                else:
                    ls = _normal(ls, "length_scales")
            hp = HyperPriors(
                log_signal_variance=_normal(tab["log_signal_variance"], "log_signal_variance") if "log_signal_variance" in tab else None,
                length_scales=ls,
                constant_mean=_normal(tab["constant_mean"], "constant_mean") if "constant_mean" in tab else None,
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), _table_line(text, where)) from None
        while len(out) < int(key):
            out.append(None)
        out.append(hp)
    return out


def parse_config(text: str, path: str | None = None) -> ExperimentConfig:
    """Parse and validate a TOML experiment config."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", int(m.group(1)) if m else None, path) from None

    def fail(msg, table=None, key=None):
        line = _key_line(text, table, key) if key else (_table_line(text, table) if table else None)
        raise ConfigError(msg, line, path)

    for top in data:
        if top not in ("experiment", "clover", "domain", "source"):
            fail(f"unknown table [{top}]", top if isinstance(data[top], dict) else None, None if isinstance(data[top], dict) else top)
    exp = data.get("experiment", {})
    for k in exp:
        if k not in EXPERIMENT_KEYS:
            fail(f"unknown key {k!r} in [experiment]", "experiment", k)

    clover = dict(data.get("clover", {}))
    priors_tab = clover.pop("priors", None)
    for k in clover:
        if k not in CLOVER_FIELDS or k == "seed":
            hint = "; set the seed in [experiment]" if k == "seed" else ""
            fail(f"unknown key {k!r} in [clover]{hint}", "clover", k)
    if priors_tab is not None:
        clover["priors"] = _priors(priors_tab, text)

    problem = exp.get("problem")
    sources, domain = [], None
    if problem is not None:
        if problem not in PROBLEMS:
            fail(f"unknown problem {problem!r}; available: {', '.join(sorted(PROBLEMS))}", "experiment", "problem")
        if "source" in data or "domain" in data:
            fail("give either experiment.problem or [domain] with [[source]] tables, not both", "experiment", "problem")
        defaults = dict(get_problem(problem).defaults)
        defaults.update(clover)
        clover = defaults
    else:
        if "source" not in data:
            fail("no problem: set experiment.problem or describe [[source]] tables", "experiment")
        dom = data.get("domain")
        if not dom or "lower" not in dom or "upper" not in dom:
            fail("external sources need [domain] with lower and upper", "domain")
        try:
            domain = (tuple(float(v) for v in dom["lower"]), tuple(float(v) for v in dom["upper"]))
            DomainBox(*domain)
        except (TypeError, ValueError) as exc:
            fail(f"invalid domain: {exc}", "domain", "lower")
        for i, s in enumerate(data["source"]):
            for k in s:
                if k not in SOURCE_KEYS:
                    fail(f"unknown key {k!r} in source {i}", "source", k)
            if "command" not in s:
                fail(f"source {i} has no command", "source")
            try:
                spec = SourceSpec(**s)
                _check_parse_rule(spec.parse)
                if not float(spec.cost) > 0:
                    raise ValueError("cost must be positive")
                if float(spec.noise_variance) < 0:
                    raise ValueError("noise_variance must be non-negative")
            except (TypeError, ValueError, re.error) as exc:
                fail(f"source {i}: {exc}", "source", "command")
            sources.append(spec)

    try:
        cfg = ExperimentConfig(
            problem=problem,
            clover=clover,
            replications=int(exp.get("replications", 1)),
            seed=int(exp.get("seed", 0)),
            output=str(exp.get("output", "out")),
            metrics=list(exp["metrics"]) if "metrics" in exp else None,
            axis=str(exp.get("axis", "cost")),
            checkpoints=[float(c) for c in exp["checkpoints"]] if "checkpoints" in exp else None,
            jobs=int(exp.get("jobs", 1)),
            domain=domain,
            sources=sources,
        )
    except (TypeError, ValueError) as exc:
        fail(f"invalid [experiment] value: {exc}", "experiment")
    if cfg.replications < 1:
        fail("replications must be >= 1", "experiment", "replications")
    if cfg.jobs < 1:
        fail("jobs must be >= 1", "experiment", "jobs")
    if cfg.axis not in AXES:
        fail(f"axis must be one of {', '.join(AXES)}", "experiment", "axis")
    if cfg.metrics is not None:
        bad = [m for m in cfg.metrics if m not in METRICS]
        if bad:
            fail(f"unknown metrics {bad}; available: {', '.join(METRICS)}", "experiment", "metrics")
        if problem is None and cfg.metrics:
            fail("metrics need a built-in problem with reference values", "experiment", "metrics")
    try:
        cfg.clover_config(0)
    except (TypeError, ValueError) as exc:
        fail(f"invalid [clover] settings: {exc}", "clover")
    return cfg


CONFIG_DIR = Path(__file__).parent / "configs"


def bundled_configs() -> list[str]:
    return sorted(p.stem for p in CONFIG_DIR.glob("*.toml"))


def load_config(path) -> ExperimentConfig:
    """Load a config file; a bare name that is not a file selects a bundled config."""
    path = Path(path)
    if not path.exists() and path.suffix == "" and (CONFIG_DIR / f"{path.name}.toml").exists():
        path = CONFIG_DIR / f"{path.name}.toml"
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, str(path)) from None
    return parse_config(text, str(path))


# ---------------------------------------------------------------------------
# running


def build_metrics(problem: AnalyticProblem | None, names: Sequence[str] | None) -> dict:
    if problem is None:
        return {}
    if names is None:
        names = [m for m, ok in (("area_error", problem.reference_area), ("pf_error", problem.reference_pf)) if ok is not None]
    out = {}
    for m in names:
        if m == "area_error":
            out[m] = AreaErrorMetric(problem)
        elif m == "pf_error":
            out[m] = FailureProbabilityErrorMetric(problem)
    return out


def trace_path(output: str | Path, replication: int) -> Path:
    return Path(output) / f"trace_{replication:04d}.csv"


def run_replication(cfg: ExperimentConfig, replication: int) -> dict:
    """Run one replication, write its trace and return its status row."""
    sources, domain, problem = cfg.build_problem()
    ccfg = cfg.clover_config(replication)
    try:
        metrics = build_metrics(problem, cfg.metrics)
        result: RunResult = run(ccfg, sources, domain, metrics)
    except Exception as exc:  # configuration problems surfacing at run time
        logger.exception("replication %d failed", replication)
        return {"replication": replication, "seed": ccfg.seed, "status": "error", "message": str(exc),
                "evaluations": 0, "total_cost": 0.0, "final_entropy": math.nan}
    names = list(metrics)
    write_trace(trace_path(cfg.output, replication), result.trace, domain.dim, names)
    return {
        "replication": replication,
        "seed": ccfg.seed,
        "status": result.status,
        "message": result.message,
        "evaluations": result.n_evaluations,
        "total_cost": result.total_cost,
        "final_entropy": result.trace[-1].entropy if result.trace else math.nan,
    }


def run_experiment(cfg: ExperimentConfig, jobs: int | None = None) -> list[dict]:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    jobs = jobs or cfg.jobs
    reps = range(cfg.replications)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(run_replication, [cfg] * len(reps), reps))
    else:
        rows = [run_replication(cfg, i) for i in reps]
    with open(out / "runs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    traces = [read_trace(trace_path(out, r["replication"]))[0] for r in rows if trace_path(out, r["replication"]).exists()]
    traces = [t for t in traces if t]
    if traces:
        summarize(traces, cfg.axis, cfg.checkpoints).write(out / "summary.csv")
    return rows


# ---------------------------------------------------------------------------
# verbs


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output = args.out
    if args.replications is not None:
        if args.replications < 1:
            print("error: --replications must be >= 1", file=sys.stderr)
            return 2
        cfg.replications = args.replications
    rows = run_experiment(cfg, args.jobs)
    failed = [r for r in rows if r["status"] == "error"]
    for r in rows:
        line = f"replication {r['replication']} (seed {r['seed']}): {r['status']}, {r['evaluations']} evaluations, cost {r['total_cost']:.6g}"
        print(line + (f": {r['message']}" if r["message"] else ""), file=sys.stderr if r["status"] == "error" else sys.stdout)
    print(f"wrote {cfg.output}")
    return 1 if failed else 0


def _cmd_summarize(args) -> int:
    try:
        traces = [read_trace(p)[0] for p in args.traces]
        cps = [float(c) for c in args.checkpoints.split(",")] if args.checkpoints else None
        summary = summarize(traces, args.axis, cps)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.out == "-":
        summary.write(sys.stdout)
    else:
        summary.write(args.out)
    return 0


def _cmd_list(args) -> int:
    for name in sorted(PROBLEMS):
        p = get_problem(name)
        costs = ", ".join(f"{s.cost:g}" for s in p.sources)
        print(f"{name:20s} dim={p.domain.dim} sources={len(p.sources)} costs=({costs})  {p.description}")
    print(f"bundled configs: {', '.join(bundled_configs())}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="clover", description="Contour location by entropy reduction with multiple information sources.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides experiment.output)")
    r.add_argument("--seed", type=int, help="master seed (overrides experiment.seed)")
    r.add_argument("--replications", type=int)
    r.add_argument("--jobs", type=int, help="worker processes")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("summarize", help="percentile summary of trace CSVs")
    s.add_argument("traces", nargs="+")
    s.add_argument("--out", required=True, help="summary CSV path, '-' for stdout")
    s.add_argument("--axis", choices=AXES, default="cost")
    s.add_argument("--checkpoints", help="comma-separated checkpoint values")
    s.set_defaults(func=_cmd_summarize)

    lp = sub.add_parser("list-problems", help="list built-in problems")
    lp.set_defaults(func=_cmd_list)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
