"""Monte Carlo oracle for run-length quantities.

Simulation is the independent cross-check for everything the integral
equation solvers produce, so it shares no code with them.  Randomness comes
from counter-split 64-bit mix streams: each path derives its own generator
state from (seed, path index), which makes every estimate reproducible bit
for bit regardless of how many threads execute the paths.  Normal variates
use inverse-cdf sampling (a rational initial guess polished by one Halley
step on the complementary error function), not rejection, so a path's draws
depend only on its own stream position.

Set the environment variable ``GSR_THREADS`` to cap simulation parallelism.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedConditionalError
from .model import ChangePointModel, PsiKind

__all__ = [
    "MonteCarloEstimate",
    "SimulationResult",
    "simulate_run_length",
    "martingale_residual",
]

# SplitMix64 increment and finalizer multipliers.
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_1 = 0xBF58476D1CE4E5B9
_MIX_2 = 0x94D049BB133111EB
_TWO53_INV = 1.1102230246251565e-16   # 2**-53
_TWO54_INV = 5.551115123125783e-17    # 2**-54

# Rational approximation coefficients for the inverse normal cdf
# (central region and tails), good to ~1e-9 before refinement.
_INV_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
          1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_INV_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
          6.680131188771972e+01, -1.328068155288572e+01)
_INV_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
          -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_INV_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
          3.754408661907416e+00)
_P_LOW = 0.02425
_SQRT_TWO_PI = math.sqrt(2.0 * math.pi)

_PSI_CODES = {PsiKind.GSR: 0, PsiKind.CUSUM: 1}

_jit_cache: dict = {}


def _inverse_normal_cdf(p: float) -> float:
    """Scalar inverse normal cdf for p in (0, 1); also the numba kernel body.

    Works on the lower half only: for p > 1/2 the complement 1 - p is exact
    and the quantile is mirrored, so the erfc refinement always runs where the
    cdf keeps full relative precision.
    """
    flip = p > 0.5
    q = 1.0 - p if flip else p
    if q < _P_LOW:
        t = math.sqrt(-2.0 * math.log(q))
        x = (((((_INV_C[0] * t + _INV_C[1]) * t + _INV_C[2]) * t + _INV_C[3]) * t
              + _INV_C[4]) * t + _INV_C[5]) / \
            ((((_INV_D[0] * t + _INV_D[1]) * t + _INV_D[2]) * t + _INV_D[3]) * t + 1.0)
    else:
        s = q - 0.5
        r = s * s
        x = (((((_INV_A[0] * r + _INV_A[1]) * r + _INV_A[2]) * r + _INV_A[3]) * r
              + _INV_A[4]) * r + _INV_A[5]) * s / \
            (((((_INV_B[0] * r + _INV_B[1]) * r + _INV_B[2]) * r + _INV_B[3]) * r
              + _INV_B[4]) * r + 1.0)
    # One Halley step against the exact cdf via erfc; x <= 0 here.
    err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - q
    step = err * _SQRT_TWO_PI * math.exp(0.5 * x * x)
    x = x - step / (1.0 + 0.5 * x * step)
    return -x if flip else x


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_2)
    return z ^ (z >> np.uint64(31))


def _inverse_normal_cdf_array(p: np.ndarray) -> np.ndarray:
    # mirrors the scalar version: fold onto the lower half, refine, unfold
    from scipy.special import erfc

    flip = p > 0.5
    q = np.where(flip, 1.0 - p, p)
    x = np.empty_like(q)
    lo = q < _P_LOW
    if np.any(lo):
        t = np.sqrt(-2.0 * np.log(q[lo]))
        x[lo] = (((((_INV_C[0] * t + _INV_C[1]) * t + _INV_C[2]) * t + _INV_C[3]) * t
                  + _INV_C[4]) * t + _INV_C[5]) / \
                ((((_INV_D[0] * t + _INV_D[1]) * t + _INV_D[2]) * t + _INV_D[3]) * t + 1.0)
    if np.any(~lo):
        s = q[~lo] - 0.5
        r = s * s
        x[~lo] = (((((_INV_A[0] * r + _INV_A[1]) * r + _INV_A[2]) * r + _INV_A[3]) * r
                   + _INV_A[4]) * r + _INV_A[5]) * s / \
                 (((((_INV_B[0] * r + _INV_B[1]) * r + _INV_B[2]) * r + _INV_B[3]) * r
                   + _INV_B[4]) * r + 1.0)
    err = 0.5 * erfc(-x / math.sqrt(2.0)) - q
    step = err * _SQRT_TWO_PI * np.exp(0.5 * x * x)
    x = x - step / (1.0 + 0.5 * x * step)
    return np.where(flip, -x, x)


def _apply_thread_cap() -> None:
    import numba

    raw = os.environ.get("GSR_THREADS")
    if not raw:
        return
    try:
        requested = int(raw)
    except ValueError as exc:
        raise ValueError("GSR_THREADS must be an integer") from exc
    numba.set_num_threads(max(1, min(requested, numba.config.NUMBA_NUM_THREADS)))


def _kernels():
    """Compile the jitted simulation kernels once per process."""
    if _jit_cache:
        return _jit_cache
    import numba

    golden = np.uint64(_GOLDEN)
    ndtri = numba.njit(_inverse_normal_cdf)

    @numba.njit(inline="always")
    def mix(z):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_2)
        return z ^ (z >> np.uint64(31))

    @numba.njit(parallel=True)
    def run_paths(theta, threshold, headstart, n_paths, seed, cap, psi_code):
        lengths = np.empty(n_paths, np.int64)
        capped = np.zeros(n_paths, np.uint8)
        drift = -0.5 * theta * theta
        for p in numba.prange(n_paths):
            state = mix(seed + np.uint64(p + 1) * golden)
            v = headstart
            n = 0
            alarmed = False
            while n < cap:
                state = state + golden
                z = mix(state)
                u = np.float64(z >> np.uint64(11)) * _TWO53_INV + _TWO54_INV
                lam = math.exp(theta * ndtri(u) + drift)
                if psi_code == 0:
                    v = (1.0 + v) * lam
                else:
                    v = (v if v > 1.0 else 1.0) * lam
                n += 1
                if v >= threshold:
                    alarmed = True
                    break
            lengths[p] = n
            if not alarmed:
                capped[p] = 1
        return lengths, capped

    @numba.njit(parallel=True)
    def run_fixed_horizon(theta, headstart, n_paths, seed, n_steps):
        final = np.empty(n_paths, np.float64)
        drift = -0.5 * theta * theta
        for p in numba.prange(n_paths):
            state = mix(seed + np.uint64(p + 1) * golden)
            v = headstart
            for _ in range(n_steps):
                state = state + golden
                z = mix(state)
                u = np.float64(z >> np.uint64(11)) * _TWO53_INV + _TWO54_INV
                v = (1.0 + v) * math.exp(theta * ndtri(u) + drift)
            final[p] = v
        return final

    _jit_cache["run_paths"] = run_paths
    _jit_cache["run_fixed_horizon"] = run_fixed_horizon
    return _jit_cache


def _simulate_custom_psi(model: ChangePointModel, threshold: float, headstart: float,
                         n_paths: int, seed: int, cap: int):
    """Vectorized fallback for arbitrary recursion maps (slower than the jitted path)."""
    golden = np.uint64(_GOLDEN)
    lengths = np.full(n_paths, cap, dtype=np.int64)
    capped = np.ones(n_paths, dtype=bool)
    drift = -0.5 * model.theta * model.theta
    chunk = 16384
    for start in range(0, n_paths, chunk):
        stop = min(start + chunk, n_paths)
        idx = np.arange(start, stop, dtype=np.uint64)
        state = _mix_array(np.uint64(seed) + (idx + np.uint64(1)) * golden)
        v = np.full(idx.size, headstart, dtype=float)
        alive = np.arange(idx.size)
        for n in range(1, cap + 1):
            if alive.size == 0:
                break
            state[alive] += golden
            z = _mix_array(state[alive])
            u = (z >> np.uint64(11)).astype(np.float64) * _TWO53_INV + _TWO54_INV
            lam = np.exp(model.theta * _inverse_normal_cdf_array(u) + drift)
            v[alive] = model.psi_values(v[alive]) * lam
            hit = v[alive] >= threshold
            if np.any(hit):
                done = alive[hit]
                lengths[start + done] = n
                capped[start + done] = False
                alive = alive[~hit]
    return lengths, capped


@dataclass(frozen=True)
class MonteCarloEstimate:
    """One simulated quantity with its standard error and provenance."""

    quantity: str
    estimate: float
    std_error: float
    paths: int
    seed: int
    cap: int
    capped_fraction: float
    reliable: bool
    params: tuple = ()

    def __post_init__(self) -> None:
        if not self.std_error >= 0.0:
            raise ValueError("standard error must be nonnegative")
        if self.paths < 1:
            raise ValueError("an estimate needs at least one path")


@dataclass(eq=False)
class SimulationResult:
    """Raw simulated run lengths plus estimate accessors.

    Paths that never alarmed carry the cap as their run length, so mean-type
    estimates are biased low when capping occurs; ``capped_fraction`` says
    how often, and estimates are flagged unreliable above one percent.
    """

    model: ChangePointModel
    threshold: float
    headstart: float
    paths: int
    seed: int
    cap: int
    run_lengths: np.ndarray = field(repr=False)
    capped: np.ndarray = field(repr=False)

    @property
    def capped_fraction(self) -> float:
        return float(np.mean(self.capped))

    @property
    def reliable(self) -> bool:
        return self.capped_fraction <= 0.01

    def _wrap(self, quantity: str, estimate: float, std_error: float, params: tuple = ()) -> MonteCarloEstimate:
        return MonteCarloEstimate(
            quantity=quantity,
            estimate=float(estimate),
            std_error=float(std_error),
            paths=self.paths,
            seed=self.seed,
            cap=self.cap,
            capped_fraction=self.capped_fraction,
            reliable=self.reliable,
            params=params,
        )

    def arl(self) -> MonteCarloEstimate:
        if self.paths < 2:
            raise ValueError("need at least two paths for a standard error")
        lengths = self.run_lengths.astype(float)
        return self._wrap("arl", lengths.mean(), lengths.std(ddof=1) / math.sqrt(self.paths))

    def std_dev(self) -> MonteCarloEstimate:
        """Run-length standard deviation; its standard error uses the fourth moment."""
        if self.paths < 2:
            raise ValueError("need at least two paths for a standard error")
        lengths = self.run_lengths.astype(float)
        centered = lengths - lengths.mean()
        m2 = float(np.mean(centered**2))
        m4 = float(np.mean(centered**4))
        s = float(lengths.std(ddof=1))
        se = 0.0 if s == 0.0 else math.sqrt(max(m4 - m2 * m2, 0.0) / self.paths) / (2.0 * s)
        return self._wrap("std_dev", s, se)

    def survival(self, k: int) -> MonteCarloEstimate:
        k = int(k)
        if k < 0:
            raise ValueError("k must be nonnegative")
        p = float(np.mean(self.run_lengths > k))
        se = math.sqrt(p * (1.0 - p) / self.paths)
        return self._wrap("survival", p, se, params=(k,))

    def conditional_pfa(self, k: int, m: int) -> MonteCarloEstimate:
        k = int(k)
        m = int(m)
        if k < 0:
            raise ValueError("k must be nonnegative")
        if m < 1:
            raise ValueError("the look-ahead window m must be at least 1")
        surviving = self.run_lengths > k
        n_k = int(np.count_nonzero(surviving))
        if n_k == 0:
            raise UndefinedConditionalError(f"no simulated path survived past k = {k}")
        hits = int(np.count_nonzero(surviving & (self.run_lengths <= k + m)))
        p = hits / n_k
        se = math.sqrt(p * (1.0 - p) / n_k)
        est = self._wrap("pfa", p, se, params=(k, m))
        return est

    def survival_curve(self, k_max: int) -> np.ndarray:
        """Empirical P(run length > k) for k = 0..k_max."""
        k_max = int(k_max)
        counts = np.bincount(self.run_lengths, minlength=k_max + 2)
        below = np.cumsum(counts[: k_max + 1])
        return 1.0 - below / self.paths

    def histogram(self) -> np.ndarray:
        """Counts of each observed run length (index = run length)."""
        return np.bincount(self.run_lengths)


def simulate_run_length(
    model: ChangePointModel,
    threshold: float,
    headstart: float = 0.0,
    paths: int = 100_000,
    seed: int = 0,
    cap: int | None = None,
) -> SimulationResult:
    """Simulate the detection statistic to its first threshold crossing.

    ``cap`` bounds every path (default ``100 * max(threshold, 10)`` steps);
    capped paths keep the cap as a lower bound for their run length.
    Results are deterministic given (model, threshold, headstart, paths,
    seed, cap) and independent of thread count.
    """
    threshold = float(threshold)
    if not (threshold > 0.0):
        raise ValueError("threshold must be positive")
    headstart = float(headstart)
    if headstart < -1.0:
        raise ValueError("headstart must satisfy r >= -1")
    paths = int(paths)
    if paths < 1:
        raise ValueError("at least one path is required")
    if cap is None:
        cap = int(math.ceil(100.0 * max(threshold, 10.0)))
    cap = int(cap)
    if cap < 1:
        raise ValueError("cap must be at least one step")
    seed_u64 = int(seed) % (1 << 64)

    if model.psi_kind in _PSI_CODES:
        _apply_thread_cap()
        kernels = _kernels()
        lengths, capped8 = kernels["run_paths"](
            float(model.theta), threshold, headstart, paths,
            np.uint64(seed_u64), np.int64(cap), _PSI_CODES[model.psi_kind],
        )
        capped = capped8.astype(bool)
    else:
        lengths, capped = _simulate_custom_psi(model, threshold, headstart, paths, seed_u64, cap)

    return SimulationResult(
        model=model,
        threshold=threshold,
        headstart=headstart,
        paths=paths,
        seed=int(seed),
        cap=cap,
        run_lengths=lengths,
        capped=capped,
    )


def martingale_residual(
    model: ChangePointModel,
    headstart: float = 0.0,
    n_steps: int = 10,
    paths: int = 100_000,
    seed: int = 0,
) -> MonteCarloEstimate:
    """Mean of ``R_n - n - r`` after ``n`` unstopped steps (zero in expectation).

    The zero-mean property is specific to the GSR recursion; other maps are
    rejected.
    """
    if model.psi_kind is not PsiKind.GSR:
        raise ValueError("the martingale identity holds only for the GSR recursion")
    headstart = float(headstart)
    if headstart < -1.0:
        raise ValueError("headstart must satisfy r >= -1")
    n_steps = int(n_steps)
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    paths = int(paths)
    if paths < 2:
        raise ValueError("need at least two paths for a standard error")
    seed_u64 = int(seed) % (1 << 64)
    _apply_thread_cap()
    kernels = _kernels()
    final = kernels["run_fixed_horizon"](
        float(model.theta), headstart, paths, np.uint64(seed_u64), np.int64(n_steps)
    )
    residual = final - n_steps - headstart
    return MonteCarloEstimate(
        quantity="martingale_residual",
        estimate=float(residual.mean()),
        std_error=float(residual.std(ddof=1) / math.sqrt(paths)),
        paths=paths,
        seed=int(seed),
        cap=n_steps,
        capped_fraction=0.0,
        reliable=True,
        params=(n_steps,),
    )
