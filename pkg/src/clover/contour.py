"""Zero-contour extraction from the surrogate mean on a regular grid.

In 2D, crossings are located on grid edges by linear interpolation and
joined cell by cell (marching squares).  Saddle cells, where the four
corners alternate in sign, are resolved with the sign of the cell-centre
average.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .misgp import DomainBox, Posterior

DEFAULT_RESOLUTION = 200


@dataclass
class ContourResult:
    axes: list[np.ndarray]
    values: np.ndarray  # posterior mean on the output grid, shape = grid shape
    signs: np.ndarray  # +1 where mean > 0, -1 otherwise
    polylines: list[np.ndarray] = field(default_factory=list)  # d == 2 only
    crossings: np.ndarray = field(default_factory=lambda: np.zeros(0))  # d == 1 only

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([g.ravel() for g in mesh])


def _interp(p0, p1, v0, v1):
    t = v0 / (v0 - v1)
    return p0 + t * (p1 - p0)


def crossings_1d(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    pos = v > 0
    idx = np.flatnonzero(pos[:-1] != pos[1:])
    return _interp(x[idx], x[idx + 1], v[idx], v[idx + 1])


def marching_squares(xs: np.ndarray, ys: np.ndarray, V: np.ndarray) -> list[np.ndarray]:
    """Polylines of ``V = 0`` on the grid ``V[i, j] = f(xs[i], ys[j])``."""
    pos = V > 0
    nx, ny = V.shape

    def point(key):
        kind, i, j = key
        if kind == "h":  # edge (i, j) -- (i + 1, j)
            return np.array([_interp(xs[i], xs[i + 1], V[i, j], V[i + 1, j]), ys[j]])
        return np.array([xs[i], _interp(ys[j], ys[j + 1], V[i, j], V[i, j + 1])])

    c00, c10, c11, c01 = pos[:-1, :-1], pos[1:, :-1], pos[1:, 1:], pos[:-1, 1:]
    mixed = ~((c00 == c10) & (c10 == c11) & (c11 == c01))
    segments = []
    for i, j in zip(*np.nonzero(mixed)):
        bottom, right, top, left = ("h", i, j), ("v", i + 1, j), ("h", i, j + 1), ("v", i, j)
        s = (pos[i, j], pos[i + 1, j], pos[i + 1, j + 1], pos[i, j + 1])
        edges = [e for e, a, b in ((bottom, s[0], s[1]), (right, s[1], s[2]), (top, s[2], s[3]), (left, s[3], s[0])) if a != b]
        if len(edges) == 2:
            segments.append((edges[0], edges[1]))
            continue
        # saddle: cut off the two corners whose sign differs from the centre
        centre = (V[i, j] + V[i + 1, j] + V[i + 1, j + 1] + V[i, j + 1]) / 4.0 > 0
        corner_edges = ((bottom, left), (bottom, right), (right, top), (top, left))
        for sign, pair in zip(s, corner_edges):
            if sign != centre:
                segments.append(pair)

    # link segments sharing an edge crossing into polylines
    touching: dict[tuple, list[int]] = {}
    for k, (a, b) in enumerate(segments):
        touching.setdefault(a, []).append(k)
        touching.setdefault(b, []).append(k)
    used = np.zeros(len(segments), dtype=bool)
    lines = []

    def walk(start_seg, start_key):
        chain = [start_key]
        seg, key = start_seg, start_key
        while True:
            used[seg] = True
            a, b = segments[seg]
            key = b if a == key else a
            chain.append(key)
            nxt = [s for s in touching[key] if not used[s]]
            if not nxt:
                return chain
            seg = nxt[0]

    # open chains start at edges touched once (domain boundary)
    for key, segs in sorted(touching.items()):
        if len(segs) == 1 and not used[segs[0]]:
            lines.append(walk(segs[0], key))
    for k in range(len(segments)):
        if not used[k]:
            lines.append(walk(k, segments[k][0]))
    return [np.array([point(key) for key in chain]) for chain in lines]


def extract_contour(state: Posterior, domain: DomainBox, resolution: int = DEFAULT_RESOLUTION) -> ContourResult:
    """Sign grid of ``mu(0, x)`` and its zero crossings (1D points, 2D polylines)."""
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(domain.lower, domain.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([g.ravel() for g in mesh])
    values = np.concatenate([state.mean(0, pts[k:k + 20_000]) for k in range(0, len(pts), 20_000)])
    values = values.reshape(mesh[0].shape)
    signs = np.where(values > 0, 1, -1).astype(np.int8)
    result = ContourResult(axes, values, signs)
    if domain.dim == 1:
        result.crossings = crossings_1d(axes[0], values)
    elif domain.dim == 2:
        result.polylines = marching_squares(axes[0], axes[1], values)
    return result
