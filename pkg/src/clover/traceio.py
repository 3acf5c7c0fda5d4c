"""Trace CSV files and percentile summaries across replications.

Trace columns are ``iter, source, x1..xd, y, step_cost, cum_cost, entropy,
acquisition, refreshed`` followed by one column per tracked metric.  Floats
are written with ``repr`` so a trace read back compares equal to the one
written; a missing acquisition value (rows that were not chosen by the
acquisition) is an empty field.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .algorithm import IterationTrace

BASE_COLUMNS = ("iter", "source")
TAIL_COLUMNS = ("y", "step_cost", "cum_cost", "entropy", "acquisition", "refreshed")
AXES = ("cost", "evaluations", "iteration")
PERCENTILES = (25.0, 50.0, 75.0)
SUMMARY_NOTE = "# percentiles: linear interpolation between order statistics (numpy 'linear'); values carried forward between checkpoints"


class TraceFormatError(ValueError):
    pass


def _fmt(v: float) -> str:
    return repr(float(v))


def trace_columns(dim: int, metric_names: Sequence[str] = ()) -> list[str]:
    return [*BASE_COLUMNS, *(f"x{k + 1}" for k in range(dim)), *TAIL_COLUMNS, *metric_names]


def _metric_names(trace: Sequence[IterationTrace]) -> list[str]:
    names: list[str] = []
    for row in trace:
        for k in row.metrics:
            if k not in names:
                names.append(k)
    return names


def write_trace(dest, trace: Sequence[IterationTrace], dim: int | None = None, metric_names: Sequence[str] | None = None) -> None:
    """Write ``trace`` to a path or an open text file."""
    if dim is None:
        if not trace:
            raise ValueError("dim is required for an empty trace")
        dim = len(trace[0].x)
    names = list(metric_names) if metric_names is not None else _metric_names(trace)
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            return write_trace(fh, trace, dim, names)
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(trace_columns(dim, names))
    for row in trace:
        if len(row.x) != dim:
            raise ValueError(f"row of iteration {row.iteration} has {len(row.x)} coordinates, expected {dim}")
        w.writerow([
            row.iteration, row.source, *(_fmt(v) for v in row.x), _fmt(row.y), _fmt(row.step_cost),
            _fmt(row.cum_cost), _fmt(row.entropy), "" if row.acquisition is None else _fmt(row.acquisition),
            int(bool(row.refreshed)), *(_fmt(row.metrics[k]) if k in row.metrics else "" for k in names),
        ])


def trace_to_string(trace: Sequence[IterationTrace], dim: int | None = None) -> str:
    buf = io.StringIO()
    write_trace(buf, trace, dim)
    return buf.getvalue()


def _parse_header(header: list[str]) -> tuple[int, list[str]]:
    if tuple(header[:2]) != BASE_COLUMNS:
        raise TraceFormatError(f"trace header must start with {BASE_COLUMNS}, got {header[:2]}")
    dim = 0
    while 2 + dim < len(header) and header[2 + dim] == f"x{dim + 1}":
        dim += 1
    tail = tuple(header[2 + dim:2 + dim + len(TAIL_COLUMNS)])
    if dim == 0 or tail != TAIL_COLUMNS:
        raise TraceFormatError(f"malformed trace header: {header}")
    return dim, header[2 + dim + len(TAIL_COLUMNS):]


def read_trace(src) -> tuple[list[IterationTrace], int]:
    """Parse a trace CSV; returns ``(rows, dim)``."""
    if isinstance(src, (str, Path)):
        with open(src, newline="", encoding="utf-8") as fh:
            try:
                return read_trace(fh)
            except TraceFormatError as exc:
                raise TraceFormatError(f"{src}: {exc}") from None
    reader = csv.reader(line for line in src if not line.startswith("#"))
    try:
        header = next(reader)
    except StopIteration:
        raise TraceFormatError("empty trace file") from None
    dim, names = _parse_header(header)
    n_cols = len(header)
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if len(rec) != n_cols:
            raise TraceFormatError(f"line {lineno}: expected {n_cols} fields, got {len(rec)}")
        try:
            x = tuple(float(v) for v in rec[2:2 + dim])
            y, step, cum, h, acq, refreshed = rec[2 + dim:2 + dim + len(TAIL_COLUMNS)]
            metrics = {k: float(v) for k, v in zip(names, rec[2 + dim + len(TAIL_COLUMNS):]) if v != ""}
            rows.append(IterationTrace(
                int(rec[0]), int(rec[1]), x, float(y), float(step), float(cum), float(h),
                None if acq == "" else float(acq), refreshed == "1", metrics,
            ))
        except ValueError as exc:
            raise TraceFormatError(f"line {lineno}: {exc}") from None
    return rows, dim


def _axis_values(trace: Sequence[IterationTrace], axis: str) -> np.ndarray:
    if axis == "cost":
        return np.array([r.cum_cost for r in trace])
    if axis == "evaluations":
        return np.arange(1, len(trace) + 1, dtype=float)
    if axis == "iteration":
        return np.array([r.iteration for r in trace], dtype=float)
    raise ValueError(f"axis must be one of {AXES}")


def _column(trace: Sequence[IterationTrace], name: str) -> np.ndarray:
    if name == "entropy":
        return np.array([r.entropy for r in trace])
    return np.array([r.metrics.get(name, math.nan) for r in trace])


def carry_forward(axis_values: np.ndarray, values: np.ndarray, checkpoints: np.ndarray) -> np.ndarray:
    """Value of the last row with ``axis <= checkpoint`` (NaN before the first row)."""
    idx = np.searchsorted(axis_values, checkpoints, side="right") - 1
    out = np.where(idx >= 0, values[np.clip(idx, 0, None)], math.nan)
    return out


@dataclass
class Summary:
    axis: str
    checkpoints: np.ndarray
    metrics: list[str]
    count: np.ndarray  # traces with a value at each checkpoint
    table: dict[str, np.ndarray]  # metric -> (len(checkpoints), 3): p25, median, p75

    def columns(self) -> list[str]:
        cols = [self.axis, "n"]
        for m in self.metrics:
            cols += [f"{m}_p25", f"{m}_median", f"{m}_p75"]
        return cols

    def rows(self) -> Iterable[list]:
        for i, t in enumerate(self.checkpoints):
            row = [_fmt(t), int(self.count[i])]
            for m in self.metrics:
                row += ["" if math.isnan(v) else _fmt(v) for v in self.table[m][i]]
            yield row

    def write(self, dest) -> None:
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="", encoding="utf-8") as fh:
                return self.write(fh)
        dest.write(SUMMARY_NOTE + "\n")
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(self.columns())
        w.writerows(self.rows())


def summarize(
    traces: Sequence[Sequence[IterationTrace]],
    axis: str = "cost",
    checkpoints: Sequence[float] | None = None,
    metrics: Sequence[str] | None = None,
) -> Summary:
    """Median, 25th and 75th percentiles of each metric at common checkpoints.

    Parameters
    ----------
    traces
        One trace per replication, each in evaluation order.
    axis
        ``"cost"`` (cumulative query cost), ``"evaluations"`` (row count) or
        ``"iteration"``.
    checkpoints
        Defaults to the union of the axis values of all traces.
    metrics
        Defaults to entropy plus every metric present in any trace.
    """
    traces = [list(t) for t in traces if len(t)]
    if not traces:
        raise ValueError("summarize needs at least one non-empty trace")
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    if metrics is None:
        names = ["entropy"]
        for t in traces:
            names += [m for m in _metric_names(t) if m not in names]
        # sorted so the result does not depend on trace order
        metrics = ["entropy", *sorted(names[1:])]
    axes = [_axis_values(t, axis) for t in traces]
    if checkpoints is None:
        cps = np.unique(np.concatenate(axes))
    else:
        cps = np.asarray(sorted(float(c) for c in checkpoints))
    table = {}
    count = None
    for m in metrics:
        vals = np.stack([carry_forward(a, _column(t, m), cps) for a, t in zip(axes, traces)])
        ok = ~np.isnan(vals)
        if count is None:
            count = ok.sum(axis=0)
        stats = np.full((len(cps), 3), math.nan)
        have = ok.any(axis=0)
        if have.any():
            stats[have] = np.nanpercentile(vals[:, have], PERCENTILES, axis=0, method="linear").T
        table[m] = stats
    return Summary(axis, cps, list(metrics), count, table)
