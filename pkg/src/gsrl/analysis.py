"""Convergence diagnostics, threshold calibration and method comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import CalibrationError, RateUndefinedError
from .grid import partition_for, uniform_partition
from .kernel import KernelMatrix, Method, assemble_collocation, assemble_midpoint
from .model import ChangePointModel
from .solver import RunLengthSolution, evaluate_iterated, solve_arl

__all__ = [
    "ConvergenceReport",
    "CalibrationResult",
    "MethodComparison",
    "build_matrix",
    "richardson_rate",
    "convergence_study",
    "calibrate_threshold",
    "compare_methods",
]

_DEFAULT_PROBE = 1000


def build_matrix(model: ChangePointModel, threshold: float, num_nodes: int, method: Method) -> KernelMatrix:
    """Assemble the operator matrix with the method's default partition.

    ``num_nodes`` counts unknowns for both methods: hat collocation uses that
    many clustered nodes, the midpoint rule that many uniform cells (which
    take one extra breakpoint).
    """
    if method is Method.COLLOCATION_HAT:
        return assemble_collocation(model, partition_for(model, num_nodes, threshold))
    return assemble_midpoint(model, uniform_partition(num_nodes + 1, threshold))


def _probe_grid(threshold: float, count: int) -> np.ndarray:
    if count < 2:
        raise ValueError("the probe grid needs at least the two endpoints")
    return np.linspace(0.0, threshold, count)


def _sup_distance(a: RunLengthSolution, b: RunLengthSolution, probe: np.ndarray) -> float:
    return float(np.max(np.abs(evaluate_iterated(a, probe) - evaluate_iterated(b, probe))))


def richardson_rate(
    coarse: RunLengthSolution,
    mid: RunLengthSolution,
    fine: RunLengthSolution,
    probe_count: int = _DEFAULT_PROBE,
) -> tuple:
    """Observed convergence order from three nested solutions.

    With sizes N/2, N, 2N the rate is ``p = -log2(d2/d1)`` where ``d1`` and
    ``d2`` are sup-norm distances of consecutive solutions on a dense probe
    grid; ``d1 * 2**-p`` estimates the remaining error of the middle
    solution.  Coinciding solutions make the rate undefined.
    """
    sizes = [coarse.matrix.dim, mid.matrix.dim, fine.matrix.dim]
    if not (sizes[0] < sizes[1] < sizes[2]):
        raise ValueError("solutions must come in strictly increasing size order")
    thresholds = {s.matrix.partition.threshold for s in (coarse, mid, fine)}
    if len(thresholds) != 1:
        raise ValueError("solutions must share the same threshold")
    methods = {s.matrix.method for s in (coarse, mid, fine)}
    if len(methods) != 1:
        raise ValueError("solutions must share the same discretization method")
    probe = _probe_grid(coarse.matrix.partition.threshold, probe_count)
    d1 = _sup_distance(mid, coarse, probe)
    d2 = _sup_distance(fine, mid, probe)
    if d1 == 0.0 or d2 == 0.0:
        raise RateUndefinedError("consecutive solutions coincide on the probe grid")
    rate = -math.log2(d2 / d1)
    return rate, d1 * 2.0 ** (-rate)


@dataclass(eq=False)
class ConvergenceReport:
    """Per-size values and observed rates for one discretization method."""

    method: Method
    n_values: tuple
    values: np.ndarray        # solution at the headstart, one per size
    sup_diffs: np.ndarray     # nan at index 0
    rates: np.ndarray         # nan where a doubling triple is unavailable
    err_estimates: np.ndarray  # nan wherever rates are
    headstart: float
    threshold: float
    solutions: tuple


def convergence_study(
    model: ChangePointModel,
    threshold: float,
    n_values: Sequence[int],
    method: Method = Method.COLLOCATION_HAT,
    headstart: float = 0.0,
    probe_count: int = _DEFAULT_PROBE,
) -> ConvergenceReport:
    """Solve the run-length equation across sizes and tabulate convergence.

    The rate reported at size N uses its two neighbours (N/2, N, 2N), so it
    appears only for interior sizes that sit in an exact doubling triple.
    """
    sizes = [int(n) for n in n_values]
    if len(sizes) < 2:
        raise ValueError("a convergence study needs at least two sizes")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly increasing")
    probe = _probe_grid(threshold, probe_count)
    solutions = []
    values = []
    probe_values = []
    for n in sizes:
        sol = solve_arl(build_matrix(model, threshold, n, method))
        solutions.append(sol)
        values.append(float(evaluate_iterated(sol, headstart)))
        probe_values.append(evaluate_iterated(sol, probe))
    count = len(sizes)
    diffs = np.full(count, np.nan)
    for i in range(1, count):
        diffs[i] = float(np.max(np.abs(probe_values[i] - probe_values[i - 1])))
    rates = np.full(count, np.nan)
    errs = np.full(count, np.nan)
    for i in range(1, count - 1):
        doubling = sizes[i] == 2 * sizes[i - 1] and sizes[i + 1] == 2 * sizes[i]
        if doubling and diffs[i] > 0.0 and diffs[i + 1] > 0.0:
            rates[i] = -math.log2(diffs[i + 1] / diffs[i])
            errs[i] = diffs[i] * 2.0 ** (-rates[i])
    return ConvergenceReport(
        method=method,
        n_values=tuple(sizes),
        values=np.asarray(values),
        sup_diffs=diffs,
        rates=rates,
        err_estimates=errs,
        headstart=float(headstart),
        threshold=float(threshold),
        solutions=tuple(solutions),
    )


@dataclass(frozen=True)
class CalibrationResult:
    """Threshold matched to a target expected run length."""

    gamma: float
    threshold: float
    achieved_arl: float
    iterations: int
    history: tuple  # (lo, hi, mid, arl_at_mid) per bisection step
    num_nodes: int
    rel_tol: float
    headstart: float

    def __post_init__(self) -> None:
        if abs(self.achieved_arl - self.gamma) > self.rel_tol * self.gamma:
            raise CalibrationError("calibration result does not meet its own tolerance")


def calibrate_threshold(
    model: ChangePointModel,
    gamma: float,
    headstart: float = 0.0,
    num_nodes: int = 1024,
    rel_tol: float = 1e-4,
    method: Method = Method.COLLOCATION_HAT,
) -> CalibrationResult:
    """Find the threshold whose expected pre-change run length is ``gamma``.

    The expected run length grows monotonically with the threshold, so plain
    bisection is reliable: start from the bracket [max(0.3*gamma, 1),
    1.5*gamma], widen it geometrically until it straddles the target, then
    bisect until the achieved value is within ``rel_tol * gamma``.
    """
    gamma = float(gamma)
    if not (gamma > 1.0):
        raise ValueError("gamma must exceed 1: every stopping time takes at least one step")
    if not (0.0 < rel_tol < 1.0):
        raise ValueError("rel_tol must lie in (0, 1)")
    r = float(headstart)

    evaluations = 0

    def arl_at(threshold: float) -> float:
        nonlocal evaluations
        evaluations += 1
        sol = solve_arl(build_matrix(model, threshold, num_nodes, method))
        return float(evaluate_iterated(sol, r))

    lo = max(0.3 * gamma, 1.0)
    hi = 1.5 * gamma
    ceiling = 1e6 * gamma
    f_lo = arl_at(lo)
    while f_lo > gamma:
        hi = lo
        lo *= 0.5
        if lo < 1e-8:
            raise CalibrationError("could not bracket the target from below")
        f_lo = arl_at(lo)
    f_hi = arl_at(hi)
    while f_hi < gamma:
        lo = hi
        hi *= 2.0
        if hi > ceiling:
            raise CalibrationError(f"no threshold below {ceiling:g} reaches the target run length")
        f_hi = arl_at(hi)

    history = []
    tol = rel_tol * gamma
    mid, achieved = lo, f_lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        achieved = arl_at(mid)
        history.append((lo, hi, mid, achieved))
        if abs(achieved - gamma) <= tol:
            break
        if achieved < gamma:
            lo = mid
        else:
            hi = mid
    else:
        raise CalibrationError("bisection failed to reach the tolerance in 200 steps")

    return CalibrationResult(
        gamma=gamma,
        threshold=float(mid),
        achieved_arl=float(achieved),
        iterations=evaluations,
        history=tuple(history),
        num_nodes=int(num_nodes),
        rel_tol=float(rel_tol),
        headstart=r,
    )


@dataclass(eq=False)
class MethodComparison:
    """Side-by-side convergence of several discretizations of one problem."""

    reference: float
    studies: tuple  # ConvergenceReport per method
    errors: tuple   # |value - reference| arrays matching each study


def compare_methods(
    model: ChangePointModel,
    threshold: float,
    n_values: Sequence[int],
    headstart: float = 0.0,
    methods: tuple = (Method.COLLOCATION_HAT, Method.MIDPOINT),
    probe_count: int = _DEFAULT_PROBE,
) -> MethodComparison:
    """Run one convergence study per method against a common reference.

    The reference is the hat-collocation value at the largest size (falling
    back to the first listed method if hat collocation is not among them).
    """
    if not methods:
        raise ValueError("at least one method is required")
    studies = tuple(
        convergence_study(model, threshold, n_values, method=m, headstart=headstart, probe_count=probe_count)
        for m in methods
    )
    ref_method = Method.COLLOCATION_HAT if Method.COLLOCATION_HAT in methods else methods[0]
    ref_study = studies[methods.index(ref_method)]
    reference = float(ref_study.values[-1])
    errors = tuple(np.abs(study.values - reference) for study in studies)
    return MethodComparison(reference=reference, studies=studies, errors=errors)
