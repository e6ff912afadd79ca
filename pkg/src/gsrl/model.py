"""Gaussian mean-shift change-point model.

Observations are independent standard normal before the change and normal
with mean ``theta`` (unit variance) after it.  The per-observation likelihood
ratio is log-normal under both measures, which gives closed forms for its
distribution function and for the transition density of recursive detection
statistics of the form ``V_n = psi(V_{n-1}) * LR_n``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr

__all__ = ["Measure", "PsiKind", "ChangePointModel"]

# Sample abscissae used to spot-check that a user-supplied recursion map is
# admissible (nonnegative on the nonnegative half-line).
_PSI_CHECK_POINTS = (0.0, 1e-6, 0.5, 1.0, 2.0, 10.0, 1e3, 1e6)


class Measure(enum.Enum):
    """Probability measure indexing: the change happens at time ``d``."""

    PRE_CHANGE = "pre"    # change never happens (d = infinity)
    POST_CHANGE = "post"  # change is in effect from the first observation (d = 0)


class PsiKind(enum.Enum):
    """Shape of the recursion map driving the detection statistic."""

    GSR = "gsr"        # psi(x) = 1 + x
    CUSUM = "cusum"    # psi(x) = max(1, x)
    CUSTOM = "custom"


def _psi_gsr(x: float) -> float:
    return 1.0 + x


def _psi_cusum(x: float) -> float:
    return x if x > 1.0 else 1.0


@dataclass(frozen=True)
class ChangePointModel:
    """Mean-shift model plus the recursion map of the monitored statistic.

    Parameters
    ----------
    theta : float
        Post-change mean of the observations, strictly positive.
    psi_kind : PsiKind
        Recursion family. ``GSR`` tracks ``R_n = (1 + R_{n-1}) * LR_n``,
        ``CUSUM`` tracks ``W_n = max(1, W_{n-1}) * LR_n``.
    psi : callable, optional
        Scalar recursion map, only consulted for ``PsiKind.CUSTOM``.
    label : str
        Human-readable tag used in reports.
    """

    theta: float
    psi_kind: PsiKind = PsiKind.GSR
    psi: Callable[[float], float] = field(default=None, repr=False)  # type: ignore[assignment]
    label: str = ""

    def __post_init__(self) -> None:
        theta = float(self.theta)
        if not math.isfinite(theta):
            raise ValueError("theta must be finite")
        if theta < 0.0:
            raise ValueError(
                "theta must be positive; a negative mean shift is equivalent "
                "to a positive one after reflecting the observations"
            )
        if theta == 0.0:
            raise ValueError("theta must be nonzero: theta = 0 means no change to detect")
        object.__setattr__(self, "theta", theta)

        if self.psi_kind is PsiKind.GSR:
            object.__setattr__(self, "psi", _psi_gsr)
        elif self.psi_kind is PsiKind.CUSUM:
            object.__setattr__(self, "psi", _psi_cusum)
        else:
            if self.psi is None:
                raise ValueError("a psi callable is required for PsiKind.CUSTOM")
            bad = [p for p in _PSI_CHECK_POINTS if float(self.psi(p)) < 0.0]
            if bad:
                raise ValueError(f"custom psi must be nonnegative on x >= 0, negative at {bad[0]}")
            warnings.warn(
                "custom psi accepted: matrix entries stay exact for any "
                "nonnegative recursion map, but results are only validated "
                "for the GSR and CUSUM families",
                UserWarning,
                stacklevel=2,
            )
        if not self.label:
            object.__setattr__(self, "label", f"{self.psi_kind.value}(theta={self.theta:g})")

    # -- constructors ------------------------------------------------------

    @classmethod
    def gsr(cls, theta: float) -> "ChangePointModel":
        """Generalized Shiryaev-Roberts statistic, psi(x) = 1 + x."""
        return cls(theta=theta, psi_kind=PsiKind.GSR)

    @classmethod
    def cusum(cls, theta: float) -> "ChangePointModel":
        """CUSUM-type statistic, psi(x) = max(1, x)."""
        return cls(theta=theta, psi_kind=PsiKind.CUSUM)

    @classmethod
    def custom(cls, theta: float, psi: Callable[[float], float], label: str = "") -> "ChangePointModel":
        return cls(theta=theta, psi_kind=PsiKind.CUSTOM, psi=psi, label=label)

    # -- recursion map -----------------------------------------------------

    def psi_values(self, x) -> np.ndarray:
        """Vectorized evaluation of the recursion map."""
        arr = np.asarray(x, dtype=float)
        if self.psi_kind is PsiKind.GSR:
            return 1.0 + arr
        if self.psi_kind is PsiKind.CUSUM:
            return np.maximum(1.0, arr)
        out = np.array([float(self.psi(v)) for v in np.atleast_1d(arr)])
        return out.reshape(arr.shape)

    # -- likelihood-ratio distribution --------------------------------------

    def lr_cdf(self, t, measure: Measure):
        """Distribution function of the one-observation likelihood ratio.

        Under either measure ``log LR`` is normal with variance ``theta**2``
        and mean ``-theta**2/2`` (pre-change) or ``+theta**2/2`` (post-change),
        so the value is a normal cdf of ``(log t -+ theta**2/2) / theta``.

        Parameters
        ----------
        t : float or array_like
            Evaluation points, ``t >= 0``. ``t = 0`` gives exactly 0.
        measure : Measure
            Which regime the observation is drawn from.

        Returns
        -------
        float or ndarray
        """
        arr = np.asarray(t, dtype=float)
        if np.any(arr < 0.0):
            raise ValueError("likelihood-ratio values are nonnegative, got t < 0")
        sign = 1.0 if measure is Measure.PRE_CHANGE else -1.0
        with np.errstate(divide="ignore"):
            z = (np.log(arr) + sign * 0.5 * self.theta * self.theta) / self.theta
        out = ndtr(z)
        if arr.ndim == 0:
            return float(out)
        return out

    def kernel_density(self, x, y, measure: Measure):
        """Transition density of the detection statistic.

        ``K_d(x, y)`` is the density at ``y`` of ``psi(x) * LR`` where the
        likelihood ratio is drawn under measure ``d``; equivalently the
        derivative in ``y`` of ``lr_cdf(y / psi(x), d)``.  Both measures use
        their own closed form, so the size-bias identity
        ``psi(x) * K_0(x, y) = y * K_inf(x, y)`` is a genuine cross-check
        rather than a definition.

        Parameters
        ----------
        x : float or array_like
            Current state, ``x > -1`` (the recursion map must be positive).
        y : float or array_like
            Next state, ``y >= 0``. ``y = 0`` gives 0.
        measure : Measure

        Returns
        -------
        float or ndarray
        """
        x_arr = np.asarray(x, dtype=float)
        y_arr = np.asarray(y, dtype=float)
        if np.any(x_arr <= -1.0):
            raise ValueError("state must satisfy x > -1")
        if np.any(y_arr < 0.0):
            raise ValueError("next state must satisfy y >= 0")
        psi = self.psi_values(x_arr)
        if np.any(psi <= 0.0):
            raise ValueError("recursion map must be positive at x")
        sign = 1.0 if measure is Measure.PRE_CHANGE else -1.0
        theta = self.theta
        psi_b, y_b = np.broadcast_arrays(psi, y_arr)
        out = np.zeros(y_b.shape, dtype=float)
        pos = y_b > 0.0
        with np.errstate(divide="ignore"):
            z = (np.log(y_b[pos] / psi_b[pos]) + sign * 0.5 * theta * theta) / theta
        out[pos] = np.exp(-0.5 * z * z) / (y_b[pos] * theta * math.sqrt(2.0 * math.pi))
        if y_arr.ndim == 0 and x_arr.ndim == 0:
            return float(out)
        return out
