"""Bias-variance bounds for direct, iterative and generative forecasting.

The analytic part covers the quadratic bias recurrence of the iterative
forecaster, the closed-form upper bounds on bias + variance for the three
strategies, and the condition under which the generative bound beats both
pure strategies. The empirical part measures the noise / bias / variance
split of the mean squared error on processes whose conditional mean is
known exactly.

Note on the generative split: the decomposition used here is

    S_genf = E[gamma(theta, N - L)^2] + B_dir(N - L) + V_dir(N - L)

where gamma is the discrepancy between the direct forecast fed with
synthetic steps and the same forecast fed with the real ones; with L = N it
reduces to the iterative S_iter. An earlier form wrote the first term as
B_iter(L) + V_iter(L) + E[gamma^2] on top of the direct terms; it is kept
here only as a comment.
"""
from __future__ import annotations

import decimal
import math
import warnings
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from typing import Callable, Sequence

import numpy as np

from genf.errors import ConfigError


@dataclass(frozen=True)
class TheoryParams:
    L1: float
    L2: float
    alpha: float
    sigma_I: float
    sigma_D: float
    beta0: float
    beta1: float
    beta2: float
    N: int
    L: int | None = None

    def __post_init__(self):
        for name in ("L1", "L2", "alpha", "sigma_I", "sigma_D", "beta0", "beta1", "beta2"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be finite and nonnegative, got {v!r}")
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        if self.L is not None and not 0 < self.L < self.N:
            raise ConfigError(f"need 0 < L < N, got L={self.L}, N={self.N}")

    def replace(self, **changes) -> "TheoryParams":
        return TheoryParams(**{**asdict(self), **changes})


def b_sequence(alpha: float, sigma_I: float, L1: float, L2: float, k: int) -> tuple[np.ndarray, bool]:
    """Iterate the bias recurrence up to index ``k``.

    Returns ``(values, saturated)`` where ``values[i]`` is b(i + 1). Once the
    iteration overflows every later entry is ``inf`` and ``saturated`` is set.
    """
    if k < 1:
        raise ConfigError(f"recurrence index must be >= 1, got {k}")
    out = np.empty(k)
    # each step can double the relative rounding error, so iterate in 34-digit
    # decimal and round to double once per entry
    with decimal.localcontext() as ctx:
        ctx.prec = 34
        a, s, l1, l2 = (Decimal(float(v)) for v in (alpha, sigma_I, L1, L2))
        b = a * s * s
        grow = l1 + 1
        saturated = False
        for i in range(k):
            if saturated:
                out[i] = math.inf
                continue
            if i:
                b = b * (grow + b * l2)
            out[i] = float(b)
            saturated = out[i] == math.inf
    return out, saturated


def recurrence_b(alpha: float, sigma_I: float, L1: float, L2: float, k: int) -> float:
    """b(k) with b(1) = alpha * sigma_I**2 and b(k+1) = b(k) * (L1 + 1 + b(k) * L2).

    Overflow saturates to ``inf``; use :func:`b_sequence` to get the flag.
    """
    return float(b_sequence(alpha, sigma_I, L1, L2, k)[0][-1])


def _b(params: TheoryParams, k: int) -> float:
    return recurrence_b(params.alpha, params.sigma_I, params.L1, params.L2, k)


def bound_direct(params: TheoryParams) -> float:
    return (params.N - 1) * params.beta1 + params.sigma_D ** 2 * params.beta2


def bound_iterative(params: TheoryParams) -> float:
    b = _b(params, params.N)
    return b * b  # float ** raises on overflow, * saturates to inf


def bound_genf(params: TheoryParams, L: int | None = None) -> float:
    L = params.L if L is None else L
    if L is None or not 1 <= L <= params.N - 1:
        raise ConfigError(f"generative bound defined for 1 <= L <= N-1, got L={L}, N={params.N}")
    bL = _b(params, L)
    head = 0.0 if params.beta0 == 0.0 else bL * bL * params.beta0
    return head + (params.N - L - 1) * params.beta1 + params.sigma_D ** 2 * params.beta2


def bounds(params: TheoryParams) -> tuple[float, float, float]:
    """(U_dir, U_iter, U_genf) for the horizon and synthetic length in ``params``."""
    return bound_direct(params), bound_iterative(params), bound_genf(params)


def scan_genf(params: TheoryParams) -> np.ndarray:
    """U_genf(L) for L = 1..N-1 (index 0 holds L = 1)."""
    return np.array([bound_genf(params, L) for L in range(1, params.N)])


@dataclass
class CorollaryResult:
    condition_holds: bool
    threshold: float
    best_L: int | None
    any_L_regime: bool
    reason: str = ""
    u_dir: float = math.nan
    u_iter: float = math.nan
    u_genf: list[float] = field(default_factory=list)


def corollary_check(params: TheoryParams, rel_tol: float = 0.05) -> CorollaryResult:
    """Test whether beta0 is small enough for the generative bound to win.

    The threshold is ``min(beta1 / b(1)^2, (b(N)^2 - sigma_D^2 beta2) / b(N-1)^2)``.
    ``any_L_regime`` flags the case where the two pure-strategy bounds agree
    within ``rel_tol`` (relative to the larger one) and the condition holds.
    """
    N = params.N
    u_dir = bound_direct(params)
    u_iter = bound_iterative(params)
    if N < 2:
        return CorollaryResult(False, math.nan, None, False, "no 0 < L < N exists for N < 2", u_dir, u_iter)

    scan = scan_genf(params)
    best_L = int(np.argmin(scan)) + 1
    b1 = _b(params, 1)
    bN = _b(params, N)
    bN1 = _b(params, N - 1)
    reason = ""

    with np.errstate(divide="ignore", invalid="ignore"):
        first = params.beta1 / (b1 * b1) if b1 > 0 else (math.inf if params.beta1 > 0 else math.nan)
        gap = bN * bN - params.sigma_D ** 2 * params.beta2
        if math.isinf(bN):
            second = math.inf if not math.isinf(bN1) else math.nan
        elif bN1 > 0:
            second = gap / (bN1 * bN1)
        else:
            second = math.inf if gap > 0 else math.nan

    if math.isnan(first) or math.isnan(second):
        threshold = math.nan
        reason = "threshold undefined (zero or saturated recurrence)"
    else:
        threshold = min(first, second)
    if gap <= 0:
        reason = "b(N)^2 <= sigma_D^2 * beta2: second ratio nonpositive"
        holds = False
    elif math.isnan(threshold):
        holds = False
    else:
        holds = params.beta0 < threshold
        if not holds:
            reason = "beta0 does not clear the threshold"

    top = max(u_dir, u_iter)
    close = math.isfinite(top) and abs(u_dir - u_iter) <= rel_tol * top
    return CorollaryResult(holds, threshold, best_L, holds and close, reason, u_dir, u_iter, scan.tolist())


# ---------------------------------------------------------------- empirical split


@dataclass
class BiasVarianceReport:
    horizons: list[int]
    noise: dict[int, float]
    bias: dict[int, float]
    variance: dict[int, float]
    mse: dict[int, float]
    mse_stderr: dict[int, float]
    ensemble_size: int
    process: str
    dropped: list[int] = field(default_factory=list)

    def total(self, N: int) -> float:
        return self.noise[N] + self.bias[N] + self.variance[N]

    def rows(self) -> list[dict]:
        return [
            {
                "horizon": N,
                "noise": self.noise[N],
                "bias": self.bias[N],
                "variance": self.variance[N],
                "sum": self.total(N),
                "mse": self.mse[N],
                "mse_stderr": self.mse_stderr[N],
                "ensemble_size": self.ensemble_size,
            }
            for N in self.horizons
        ]


Trainer = Callable[[np.ndarray, np.ndarray, int], Callable[[np.ndarray], np.ndarray]]


def least_squares_trainer(windows: np.ndarray, targets: np.ndarray, seed: int):
    """Linear direct forecaster on the flattened window plus intercept."""
    S = windows.shape[0]
    design = np.hstack([windows.reshape(S, -1), np.ones((S, 1))])
    coef, *_ = np.linalg.lstsq(design, targets, rcond=None)

    def predict(w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return np.hstack([w.reshape(w.shape[0], -1), np.ones((w.shape[0], 1))]) @ coef

    return predict


def empirical_bias_variance(
    process,
    M: int,
    horizons: Sequence[int],
    trainer: Trainer = least_squares_trainer,
    R: int = 10,
    seeds: Sequence[int] | None = None,
    train_units: int = 20,
    train_length: int = 200,
    test_points: int = 20000,
    target: int = 0,
    test_seed: int = 10_000,
) -> BiasVarianceReport:
    """Noise / bias / variance split of the forecast MSE, per horizon.

    Each of the R replicates draws a fresh training set from ``process`` and
    fits ``trainer`` on it. The expectation over trained parameters is the
    ensemble mean at every test window; the true conditional mean comes from
    the process itself. Replicates whose trainer raises are dropped.
    """
    from genf.data import make_windows, synth_ar_process

    if R < 2:
        raise ConfigError("ensemble needs R >= 2")
    seeds = list(seeds) if seeds is not None else list(range(R))
    if len(seeds) != R:
        raise ConfigError(f"need {R} seeds, got {len(seeds)}")
    horizons = sorted(set(int(h) for h in horizons))
    hmax = max(horizons)

    # test windows: independent units, one window each, so every point is an
    # independent draw of (Y, X_{M+N})
    test = synth_ar_process(process, units=test_points, length=M + hmax, seed=test_seed, burn_in=200)
    test_w = make_windows(test, M, horizons)
    Y = test_w.windows

    report = BiasVarianceReport(horizons, {}, {}, {}, {}, {}, 0, process.describe())
    for N in horizons:
        u = process.conditional_mean(Y, N)[:, target]
        x = test_w.targets[N][:, target]
        preds = []
        for r, seed in enumerate(seeds):
            data = synth_ar_process(process, units=train_units, length=train_length, seed=seed)
            w = make_windows(data, M, [N])
            try:
                model = trainer(w.windows, w.targets[N][:, target], seed)
                preds.append(np.asarray(model(Y), dtype=float).ravel())
            except Exception as exc:  # noqa: BLE001 - replicate isolation
                warnings.warn(f"replicate {r} (seed {seed}) failed at N={N}: {exc}")
                if r not in report.dropped:
                    report.dropped.append(r)
        if len(preds) < 2:
            raise ConfigError(f"fewer than 2 replicates survived at N={N}")
        F = np.vstack(preds)
        mean_f = F.mean(axis=0)
        report.noise[N] = float(np.mean((x - u) ** 2))
        report.bias[N] = float(np.mean((u - mean_f) ** 2))
        report.variance[N] = float(np.mean(F.var(axis=0)))
        per_point = ((F - x) ** 2).mean(axis=0)
        report.mse[N] = float(per_point.mean())
        report.mse_stderr[N] = float(per_point.std(ddof=1) / math.sqrt(per_point.size))
        report.ensemble_size = F.shape[0]
    return report
