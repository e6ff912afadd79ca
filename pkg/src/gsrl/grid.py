"""Partitions of the state interval [0, A] and the piecewise-linear hat basis."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .model import ChangePointModel, PsiKind

__all__ = [
    "Scheme",
    "Partition",
    "HatBasis",
    "chebyshev_partition",
    "uniform_partition",
    "partition_for",
]


class Scheme(enum.Enum):
    CHEBYSHEV_SHIFTED = "chebyshev-shifted"
    UNIFORM = "uniform"


@dataclass(frozen=True, eq=False)
class Partition:
    """Strictly increasing nodes spanning [0, threshold].  Immutable."""

    threshold: float
    nodes: np.ndarray
    scheme: Scheme

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a partition needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError("partition must start at 0")
        if nodes[-1] != self.threshold:
            raise ValueError("partition must end exactly at the threshold")
        if not np.all(np.diff(nodes) > 0.0):
            raise ValueError("partition nodes must be strictly increasing")
        nodes = nodes.copy()
        nodes.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "threshold", float(self.threshold))

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])


def chebyshev_partition(num_nodes: int, threshold: float, include: tuple = ()) -> Partition:
    """Shifted Chebyshev nodes on [0, threshold], endpoints exact.

    The nodes are images of the Chebyshev points of the first kind rescaled
    so that the extreme ones land exactly on 0 and the threshold, which
    clusters nodes near both ends of the interval.  Extra abscissae listed in
    ``include`` are merged in (sorted, near-duplicates dropped).
    """
    n = int(num_nodes)
    if n < 2:
        raise ValueError("num_nodes must be at least 2")
    a = float(threshold)
    if not (a > 0.0) or not math.isfinite(a):
        raise ValueError("threshold must be positive and finite")
    j = np.arange(n)
    angles = (2.0 * (n - j) - 1.0) * math.pi / (2.0 * n)
    nodes = 0.5 * a * (1.0 + np.cos(angles) / math.cos(math.pi / (2.0 * n)))
    # The first and last angles give -cos(pi/(2n)) and +cos(pi/(2n)) exactly,
    # so the endpoints are 0 and a up to rounding; pin them.
    nodes[0] = 0.0
    nodes[-1] = a
    if include:
        tol = 1e-12 * max(1.0, a)
        extra = [float(v) for v in include if 0.0 < float(v) < a]
        extra = [v for v in extra if np.min(np.abs(nodes - v)) > tol]
        if extra:
            nodes = np.sort(np.concatenate([nodes, extra]))
    return Partition(threshold=a, nodes=nodes, scheme=Scheme.CHEBYSHEV_SHIFTED)


def uniform_partition(num_nodes: int, threshold: float) -> Partition:
    """Equally spaced nodes on [0, threshold]."""
    n = int(num_nodes)
    if n < 2:
        raise ValueError("num_nodes must be at least 2")
    a = float(threshold)
    if not (a > 0.0) or not math.isfinite(a):
        raise ValueError("threshold must be positive and finite")
    return Partition(threshold=a, nodes=np.linspace(0.0, a, n), scheme=Scheme.UNIFORM)


def partition_for(
    model: ChangePointModel,
    num_nodes: int,
    threshold: float,
    scheme: Scheme = Scheme.CHEBYSHEV_SHIFTED,
) -> Partition:
    """Default partition for a model, respecting kinks of its recursion map.

    The CUSUM map has a kink at x = 1; placing a node there keeps the
    solution piecewise smooth between nodes, which the hat-basis error
    analysis relies on.
    """
    if scheme is Scheme.UNIFORM:
        return uniform_partition(num_nodes, threshold)
    include = ()
    if model.psi_kind is PsiKind.CUSUM and threshold > 1.0:
        include = (1.0,)
    return chebyshev_partition(num_nodes, threshold, include=include)


@dataclass(frozen=True, eq=False)
class HatBasis:
    """Piecewise-linear nodal basis over a partition."""

    partition: Partition

    @property
    def size(self) -> int:
        return self.partition.n

    def eval_one(self, j: int, x):
        """Value of the j-th hat function at x (0 outside its support)."""
        nodes = self.partition.nodes
        n = nodes.size
        if not 0 <= j < n:
            raise ValueError(f"basis index out of range: {j}")
        x_arr = np.asarray(x, dtype=float)
        out = np.zeros(x_arr.shape, dtype=float)
        if j > 0:
            m = (x_arr >= nodes[j - 1]) & (x_arr <= nodes[j])
            out[m] = (x_arr[m] - nodes[j - 1]) / (nodes[j] - nodes[j - 1])
        if j < n - 1:
            lo = nodes[j]
            m = (x_arr > lo) & (x_arr <= nodes[j + 1]) if j > 0 else (x_arr >= lo) & (x_arr <= nodes[j + 1])
            out[m] = (nodes[j + 1] - x_arr[m]) / (nodes[j + 1] - nodes[j])
        if x_arr.ndim == 0:
            return float(out)
        return out

    def interpolate(self, coeffs, x):
        """Piecewise-linear interpolant with nodal values ``coeffs`` at x.

        Exact at the nodes.  Raises for x outside [0, threshold].
        """
        nodes = self.partition.nodes
        c = np.asarray(coeffs, dtype=float)
        if c.shape != nodes.shape:
            raise ValueError("coefficient vector must have one entry per node")
        x_arr = np.asarray(x, dtype=float)
        if np.any(x_arr < 0.0) or np.any(x_arr > self.partition.threshold):
            raise ValueError("interpolation point outside [0, threshold]")
        out = np.interp(x_arr, nodes, c)
        if x_arr.ndim == 0:
            return float(out)
        return out
