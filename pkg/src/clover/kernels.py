"""Stationary covariance kernels and parametric mean functions.

Both kernel families use anisotropic (ARD) length scales: the distance
between two points is measured after dividing each coordinate by its own
length scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

KERNEL_FAMILIES = ("se", "matern52")
MEAN_FAMILIES = ("zero", "constant")

_ALIASES = {
    "se": "se",
    "squaredexponential": "se",
    "squared_exponential": "se",
    "rbf": "se",
    "matern52": "matern52",
    "matern": "matern52",
    "matern5/2": "matern52",
}


def kernel_family(name: str) -> str:
    """Normalize a kernel family name (``"se"`` or ``"matern52"``)."""
    key = name.lower().replace("-", "").replace(" ", "")
    if key not in _ALIASES:
        raise ValueError(f"unknown kernel family {name!r}; expected one of {KERNEL_FAMILIES}")
    return _ALIASES[key]


def as_points(x, dim: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a float array of shape ``(m, d)``."""
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(1, -1) if dim is None or pts.shape[0] == dim else pts.reshape(-1, 1)
    if dim is not None and pts.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class KernelSpec:
    """Covariance kernel ``k(x, x')`` with signal variance and ARD length scales."""

    family: str
    signal_variance: float
    length_scales: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "family", kernel_family(self.family))
        ls = tuple(float(v) for v in np.atleast_1d(self.length_scales))
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if not all(v > 0 for v in ls):
            raise ValueError("length scales must be positive")

    @property
    def dim(self) -> int:
        return len(self.length_scales)

    def __call__(self, xa, xb=None) -> np.ndarray:
        """Kernel matrix between the rows of ``xa`` and ``xb``."""
        a = as_points(xa, self.dim) / self.length_scales
        b = a if xb is None else as_points(xb, self.dim) / self.length_scales
        r2 = cdist(a, b, "sqeuclidean")
        return self._from_sqdist(r2)

    def diag(self, x) -> np.ndarray:
        return np.full(as_points(x, self.dim).shape[0], self.signal_variance)

    def _from_sqdist(self, r2: np.ndarray) -> np.ndarray:
        if self.family == "se":
            return self.signal_variance * np.exp(-0.5 * r2)
        r5 = np.sqrt(5.0 * r2)
        return self.signal_variance * (1.0 + r5 + (5.0 / 3.0) * r2) * np.exp(-r5)

    def with_params(self, signal_variance: float, length_scales: Sequence[float]) -> "KernelSpec":
        return KernelSpec(self.family, signal_variance, tuple(length_scales))


@dataclass(frozen=True)
class MeanSpec:
    """Prior mean function: identically zero or a constant."""

    family: str = "zero"
    value: float = 0.0

    def __post_init__(self):
        fam = self.family.lower()
        if fam not in MEAN_FAMILIES:
            raise ValueError(f"unknown mean family {self.family!r}; expected one of {MEAN_FAMILIES}")
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "value", float(self.value) if fam == "constant" else 0.0)

    def __call__(self, x) -> np.ndarray:
        pts = np.asarray(x, dtype=float)
        m = 1 if pts.ndim < 2 else pts.shape[0]
        return np.full(m, self.value)
