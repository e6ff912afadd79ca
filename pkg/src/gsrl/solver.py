"""Run-length functionals from the discretized renewal equations.

Everything here reduces to linear algebra with the operator matrix ``K``:

* expected run length: ``(I - K) ell = 1``
* running second moment: ``(I - K) mu2 = 2*ell - 1``
* survival probabilities: ``rho_0 = 1`` and ``rho_{k+1} = K rho_k``

Solved coefficient vectors live on the collocation points; off those points
the iterated form ``u(x) = forcing(x) + row(x) . coeffs`` extends the
solution to any admissible state, including headstarts above the threshold.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import NumericsError, UndefinedConditionalError
from .kernel import KernelMatrix, operator_rows
from .model import PsiKind

__all__ = [
    "SolutionKind",
    "RunLengthSolution",
    "SurvivalSeries",
    "Truncation",
    "solve_arl",
    "solve_second_moment",
    "run_length_std",
    "evaluate_iterated",
    "survival_series",
    "pmf",
    "conditional_pfa",
]

# Relative slack for invariant checks on solved vectors; the properties hold
# exactly in real arithmetic, so only rounding noise is forgiven.
_INVARIANT_RTOL = 1e-9
# A consecutive-difference of survival values below this (relative to 1) is
# rounding noise; anything larger signals a genuinely broken recursion.
_MONOTONE_TOL = 1e-12


class SolutionKind(enum.Enum):
    ARL = "arl"
    SECOND_MOMENT = "second-moment"
    GENERIC = "generic"


@dataclass(eq=False)
class RunLengthSolution:
    """Nodal solution of one renewal equation.  Treat as immutable.

    ``coeffs[i]`` is the solution value at ``matrix.collocation_points[i]``.
    ``forcing`` is the equation's inhomogeneous term as a function of the
    state; it is what the iterated evaluation adds back outside the nodes.
    """

    kind: SolutionKind
    coeffs: np.ndarray
    matrix: KernelMatrix
    rhs: np.ndarray
    forcing: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass(frozen=True)
class Truncation:
    epsilon_tail: float
    k_max: int
    terminated_by: str  # "epsilon_tail" or "k_max"


@dataclass(eq=False)
class SurvivalSeries:
    """Pre-change survival probabilities rho_k = P(run length > k) at one headstart."""

    headstart: float
    values: np.ndarray
    truncation: Truncation
    matrix: KernelMatrix

    @property
    def horizon(self) -> int:
        """Largest k with a stored value."""
        return self.values.size - 1


def _solve(matrix: KernelMatrix, rhs: np.ndarray) -> np.ndarray:
    coeffs = scipy.linalg.lu_solve(matrix.lu(), rhs)
    residual = coeffs - matrix.entries @ coeffs - rhs
    bound = 1e-10 * max(1.0, float(np.max(np.abs(coeffs))))
    worst = float(np.max(np.abs(residual)))
    if worst > bound:
        raise NumericsError(f"linear solve residual {worst:g} exceeds {bound:g}")
    return coeffs


def solve_arl(matrix: KernelMatrix) -> RunLengthSolution:
    """Expected pre-change run length at every collocation point.

    The solution of ``(I - K) u = 1`` is at least 1 everywhere and, for the
    monotone recursion maps, nonincreasing in the state; both properties are
    verified up to rounding.
    """
    rhs = np.ones(matrix.dim)
    coeffs = _solve(matrix, rhs)
    slack = _INVARIANT_RTOL * max(1.0, float(coeffs.max()))
    if float(coeffs.min()) < 1.0 - slack:
        raise NumericsError("expected run length fell below 1")
    if matrix.model.psi_kind in (PsiKind.GSR, PsiKind.CUSUM):
        if float(np.max(np.diff(coeffs))) > slack:
            raise NumericsError("expected run length is not nonincreasing in the state")
    return RunLengthSolution(
        kind=SolutionKind.ARL,
        coeffs=coeffs,
        matrix=matrix,
        rhs=rhs,
        forcing=lambda x: np.ones_like(np.asarray(x, dtype=float)),
    )


def solve_second_moment(matrix: KernelMatrix, arl: RunLengthSolution) -> RunLengthSolution:
    """Second moment of the run length, reusing the matrix factorization.

    Differentiating the transform identity for the run length twice at the
    origin gives ``(I - K) mu2 = 2*ell - 1`` with the same operator, so the
    cached LU factors of the ARL solve are reused on a new right-hand side.
    """
    if arl.matrix is not matrix:
        raise ValueError("the ARL solution must come from the same matrix")
    if arl.kind is not SolutionKind.ARL:
        raise ValueError("second moment needs the ARL solution for its right-hand side")
    rhs = 2.0 * arl.coeffs - 1.0
    coeffs = _solve(matrix, rhs)
    deficit = coeffs - arl.coeffs**2
    if float(deficit.min()) < -_INVARIANT_RTOL * max(1.0, float(coeffs.max())):
        raise NumericsError("second moment implies a negative run-length variance")
    return RunLengthSolution(
        kind=SolutionKind.SECOND_MOMENT,
        coeffs=coeffs,
        matrix=matrix,
        rhs=rhs,
        forcing=lambda x: 2.0 * evaluate_iterated(arl, x) - 1.0,
    )


def run_length_std(arl: RunLengthSolution, second_moment: RunLengthSolution, x=None):
    """Standard deviation of the run length, at nodes or at arbitrary states.

    Negative variances within rounding slack are clamped to zero (they occur
    when the run length is nearly deterministic); larger ones raise.
    """
    if x is None:
        mean, msq = arl.coeffs, second_moment.coeffs
    else:
        mean = np.asarray(evaluate_iterated(arl, x), dtype=float)
        msq = np.asarray(evaluate_iterated(second_moment, x), dtype=float)
    var = msq - mean**2
    floor = -_INVARIANT_RTOL * np.maximum(1.0, np.abs(msq))
    if np.any(var < floor):
        raise NumericsError("negative run-length variance beyond rounding slack")
    out = np.sqrt(np.maximum(var, 0.0))
    if np.ndim(x) == 0 and x is not None:
        return float(out)
    return out


def evaluate_iterated(solution: RunLengthSolution, x):
    """Iterated (Nystrom) evaluation of a solved equation at states ``x >= -1``.

    At a collocation point the result is the stored coefficient, bit for bit;
    elsewhere one application of the exact operator row to the coefficients
    plus the forcing term gives the natural off-node extension.
    """
    if solution.forcing is None:
        raise ValueError("this solution does not carry a forcing term to iterate with")
    x_arr = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x_arr)
    if np.any(flat < -1.0):
        raise ValueError("states must satisfy x >= -1")
    out = np.asarray(solution.forcing(flat), dtype=float) + operator_rows(solution.matrix, flat) @ solution.coeffs
    points = solution.matrix.collocation_points
    idx = np.searchsorted(points, flat)
    idx = np.minimum(idx, points.size - 1)
    exact = points[idx] == flat
    if np.any(exact):
        out[exact] = solution.coeffs[idx[exact]]
    if x_arr.ndim == 0:
        return float(out[0])
    return out


def survival_series(
    matrix: KernelMatrix,
    headstart: float,
    epsilon_tail: float = 1e-12,
    k_max: Optional[int] = None,
) -> SurvivalSeries:
    """Survival probabilities of the run length from a given headstart.

    Propagates the nodal vectors ``rho_{k+1} = K rho_k`` from all ones and
    reads each step off at the headstart through one precomputed operator
    row.  Stops once the survival value drops below ``epsilon_tail`` or after
    ``k_max`` steps, whichever comes first; by default ``k_max`` is
    ``max(10**6, 50 * ell(0))`` which the epsilon tail reaches long before.
    """
    r = float(headstart)
    if r < -1.0:
        raise ValueError("headstart must satisfy r >= -1")
    if epsilon_tail < 0.0:
        raise ValueError("epsilon_tail must be nonnegative")
    if k_max is None:
        k_max = max(10**6, int(math.ceil(50.0 * float(solve_arl(matrix).coeffs[0]))))
    k_max = int(k_max)
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")

    row = operator_rows(matrix, r)[0]
    nodal = np.ones(matrix.dim)
    values = [1.0]
    terminated = "k_max"
    # entry rounding grows like eps * n^2 near clustered nodes, same envelope
    # as the assembly row-sum certificate
    slack = max(_MONOTONE_TOL, float(np.finfo(float).eps) * matrix.dim * matrix.dim)
    for _ in range(k_max):
        value = float(row @ nodal)
        if value > values[-1] + slack:
            raise NumericsError("survival probabilities must be nonincreasing")
        values.append(min(value, values[-1]))
        if value < epsilon_tail:
            terminated = "epsilon_tail"
            break
        nodal = matrix.entries @ nodal
    return SurvivalSeries(
        headstart=r,
        values=np.asarray(values),
        truncation=Truncation(epsilon_tail=float(epsilon_tail), k_max=k_max, terminated_by=terminated),
        matrix=matrix,
    )


def pmf(series: SurvivalSeries) -> np.ndarray:
    """Run-length probabilities p_k for k = 1..horizon from a survival series.

    ``p_k = rho_{k-1} - rho_k`` is nonnegative by monotonicity; rounding can
    produce dust-sized negatives which are clamped, anything worse raises.
    """
    probs = series.values[:-1] - series.values[1:]
    low = float(probs.min(initial=0.0))
    if low < -1e-12:
        raise NumericsError(f"probability mass fell below zero: {low:g}")
    return np.maximum(probs, 0.0)


def conditional_pfa(series: SurvivalSeries, k: int, m: int) -> float:
    """Probability of a false alarm within the next ``m`` steps given survival to ``k``.

    Computes ``1 - rho_{k+m} / rho_k``.  Requires the series to extend to
    ``k + m``; conditioning on a zero-probability survival event raises.
    """
    k = int(k)
    m = int(m)
    if k < 0:
        raise ValueError("k must be nonnegative")
    if m < 1:
        raise ValueError("the look-ahead window m must be at least 1")
    if k + m > series.horizon:
        raise ValueError(
            f"series covers k <= {series.horizon}, but k + m = {k + m}; "
            "recompute with a smaller epsilon_tail or larger k_max"
        )
    base = float(series.values[k])
    if base <= 0.0:
        raise UndefinedConditionalError(f"survival probability at k = {k} is zero")
    return min(1.0, max(0.0, 1.0 - float(series.values[k + m]) / base))
