"""Direct, iterative and generative forecasting, and seed-replicated comparisons."""
from __future__ import annotations

import logging
import math
import time
import traceback
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from genf.cwgan import CwganHyper, FittedGenerator, extend_windows, train_cwgan
from genf.data import (ScalingParams, TimeSeriesDataset, WindowedDataset, make_windows, scale_minmax,
                       split_chronological, split_units)
from genf.errors import ConfigError, ContractError, GenfError
from genf.itc import ItcConfig, itc_split
from genf.metrics import METRICS
from genf.predictor import PredictorHyper, train_one_step, train_predictor

log = logging.getLogger(__name__)

STRATEGIES = ("direct", "iterative", "genf")
LABELS = {"direct": "DF", "iterative": "IF", "genf": "GenF"}


# ---------------------------------------------------------------- stub models


class PersistencePredictor:
    """Predicts the last observed value of ``target``; a baseline and a test double."""

    def __init__(self, horizon: int | None = None, target: int = 0, synthetic_length: int | None = None):
        self.horizon, self.target, self.synthetic_length = horizon, target, synthetic_length

    def __call__(self, windows):
        return np.asarray(windows, dtype=float)[..., -1, self.target].copy()


class LastRowModel:
    """One-step model that repeats the last row (the fixed point of iteration)."""

    horizon = 1
    target = None

    def __call__(self, windows):
        return np.asarray(windows, dtype=float)[..., -1, :].copy()


class EchoGenerator:
    """Generator that ignores its noise and repeats the condition's last row."""

    def __call__(self, condition, noise):
        return np.asarray(condition, dtype=float)[..., -1, :].copy()


# ------------------------------------------------------------------ forecasts


def _check_window(window) -> tuple[np.ndarray, bool]:
    w = np.asarray(window, dtype=float)
    if w.ndim not in (2, 3):
        raise ContractError(f"window must be (M, K) or (S, M, K), got shape {w.shape}")
    return w, w.ndim == 2


def forecast_direct(predictor, window, N: int):
    """One forward pass of a predictor trained at horizon ``N``."""
    h = getattr(predictor, "horizon", None)
    if h is not None and h != N:
        raise ContractError(f"predictor was trained for horizon {h}, asked for {N}")
    L = getattr(predictor, "synthetic_length", None)
    if L:
        raise ContractError(f"predictor expects windows with {L} synthetic rows; use forecast_genf")
    w, single = _check_window(window)
    out = np.asarray(predictor(w), dtype=float)
    return float(out) if single else out


def forecast_iterative(model, window, N: int, target: int = 0):
    """Apply a full-K one-step model ``N`` times, feeding predictions back."""
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    w, single = _check_window(window)
    if single:
        w = w[None]
    K = w.shape[2]
    pred = None
    for _ in range(N):
        pred = np.asarray(model(w), dtype=float)
        if pred.ndim != 2 or pred.shape[1] != K:
            raise ContractError(f"one-step model must emit all {K} features, got shape {pred.shape}")
        w = np.concatenate([w[:, 1:], pred[:, None]], axis=1)
    out = pred[:, target]
    return float(out[0]) if single else out


def genf_window(generator, window, L: int, seed: int | None = None, noise=None) -> np.ndarray:
    """Effective predictor input: the last M-L real rows followed by L synthetic rows."""
    return extend_windows(generator, window, L, seed=seed, noise=noise)


def forecast_genf(generator, predictor, window, L: int, N: int, seed: int | None = None, noise=None):
    """Generate ``L`` synthetic steps, then hop directly to horizon ``N``."""
    if not 0 <= L < N:
        raise ConfigError(f"need 0 <= L < N, got L={L}, N={N}")
    h = getattr(predictor, "horizon", None)
    if h is not None and h != N:
        raise ContractError(f"predictor was trained for horizon {h}, asked for {N}")
    pl = getattr(predictor, "synthetic_length", None)
    if pl is not None and pl != L:
        raise ContractError(f"predictor was trained with L={pl}, asked for L={L}")
    if L == 0:
        w, single = _check_window(window)
        out = np.asarray(predictor(w), dtype=float)
        return float(out) if single else out
    w, single = _check_window(window)
    ext = genf_window(generator, w, L, seed=seed, noise=noise)
    out = np.asarray(predictor(ext), dtype=float)
    return float(out) if single else out


# ------------------------------------------------------------- configuration


@dataclass
class StrategyConfig:
    kind: str
    N: int
    L: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.kind!r}; choose from {STRATEGIES}")
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        if self.kind == "direct" and self.L != 0:
            raise ConfigError("direct forecasting uses L=0")
        if self.kind == "iterative":
            self.L = self.N - 1
        if self.kind == "genf" and not 0 < self.L < self.N:
            raise ConfigError(f"genf needs 0 < L < N, got L={self.L}, N={self.N}")

    @property
    def label(self) -> str:
        return f"GenF-{self.L}" if self.kind == "genf" else LABELS[self.kind]


@dataclass
class ComparisonConfig:
    M: int = 24
    horizons: list[int] = field(default_factory=lambda: [8])
    strategies: dict[str, list[int]] = field(default_factory=lambda: {"direct": [], "iterative": [], "genf": [2, 4, 6]})
    seeds: list[int] = field(default_factory=lambda: [0])
    target: int = 0
    split: str = "unit-random"
    split_ratios: tuple = (0.6, 0.2, 0.2)
    itc: ItcConfig = field(default_factory=ItcConfig)
    use_itc: bool = True
    cwgan: CwganHyper = field(default_factory=CwganHyper)
    predictor: PredictorHyper = field(default_factory=PredictorHyper)
    iterative_model: str = "transformer"  # transformer | generator
    metric_space: str = "original"  # original | scaled

    def cells(self) -> list[StrategyConfig]:
        out = []
        for N in self.horizons:
            for kind in STRATEGIES:
                if kind not in self.strategies:
                    continue
                if kind == "genf":
                    out.extend(StrategyConfig("genf", N, L) for L in self.strategies[kind] if L < N)
                else:
                    out.append(StrategyConfig(kind, N))
        return out


class ModelFactory:
    """Training hooks used by :func:`run_comparison`; override to plug in stubs."""

    def generator(self, data: WindowedDataset, hyper: CwganHyper):
        gen, _, trace = train_cwgan(data, hyper)
        return FittedGenerator(gen, data.M)

    def predictor(self, data: WindowedDataset, N: int, hyper: PredictorHyper, target: int, L: int):
        return train_predictor(data, N, hyper, target, synthetic_length=L)

    def one_step(self, data: WindowedDataset, hyper: PredictorHyper):
        return train_one_step(data, hyper)


class StubFactory(ModelFactory):
    """Echo generator and persistence predictors; no training."""

    def generator(self, data, hyper):
        return EchoGenerator()

    def predictor(self, data, N, hyper, target, L):
        return PersistencePredictor(N, target, L)

    def one_step(self, data, hyper):
        return LastRowModel()


# -------------------------------------------------------------------- report


@dataclass
class ReplicateRecord:
    strategy: str
    N: int
    L: int
    seed: int
    status: str  # ok | failed
    metrics: dict[str, float] = field(default_factory=dict)
    val_metrics: dict[str, float] = field(default_factory=dict)
    n_test: int = 0
    error: str = ""
    seconds: float = 0.0

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.strategy, self.N, self.L)


@dataclass
class ExperimentReport:
    records: list[ReplicateRecord] = field(default_factory=list)
    config_hash: str = ""
    provenance: dict = field(default_factory=dict)

    def add(self, rec: ReplicateRecord):
        self.records.append(rec)

    def cell_keys(self) -> list[tuple[str, int, int]]:
        seen = []
        for r in self.records:
            if r.key not in seen:
                seen.append(r.key)
        return seen

    def replicates(self, strategy: str, N: int, L: int) -> list[ReplicateRecord]:
        return [r for r in self.records if r.key == (strategy, N, L)]

    def summary(self) -> list[dict]:
        """Per-cell mean and sample std (std only with >= 2 successful replicates)."""
        rows = []
        for key in self.cell_keys():
            reps = self.replicates(*key)
            ok = [r for r in reps if r.status == "ok"]
            row = {"strategy": key[0], "N": key[1], "L": key[2], "replicates": len(reps), "ok": len(ok),
                   "status": "ok" if len(ok) == len(reps) else ("failed" if not ok else "partial")}
            for m in METRICS:
                vals = np.array([r.metrics[m] for r in ok])
                row[f"{m}_mean"] = float(math.fsum(vals.tolist()) / len(vals)) if len(vals) else None
                row[f"{m}_std"] = float(np.std(vals, ddof=1)) if len(vals) >= 2 else None
            rows.append(row)
        return rows

    def mean(self, strategy: str, N: int, L: int, metric: str = "mse") -> float:
        for row in self.summary():
            if (row["strategy"], row["N"], row["L"]) == (strategy, N, L):
                return row[f"{metric}_mean"]
        raise KeyError((strategy, N, L))

    @property
    def n_failed(self) -> int:
        return sum(r.status != "ok" for r in self.records)


# ----------------------------------------------------------------- comparison


def _noise_seed(seed: int, L: int, part: int) -> list[int]:
    return [seed, L, part]


def _evaluate(pred: np.ndarray, truth: np.ndarray, scaling: ScalingParams, target: int, space: str) -> dict:
    if space == "original":
        pred = scaling.inverse_feature(pred, target)
        truth = scaling.inverse_feature(truth, target)
    return {name: fn(pred, truth) for name, fn in METRICS.items()}


def _split(dataset: TimeSeriesDataset, cfg: ComparisonConfig, seed: int):
    if cfg.split == "unit-random":
        return split_units(dataset, cfg.split_ratios, seed)
    if cfg.split == "chronological":
        return split_chronological(dataset, cfg.split_ratios, min_length=cfg.M + max(cfg.horizons))
    raise ConfigError(f"unknown split mode {cfg.split!r}")


def _random_halves(train: TimeSeriesDataset, fraction: float, seed: int):
    ids = np.array(train.ids, dtype=object)
    perm = np.random.default_rng(seed).permutation(len(ids))
    n_gen = int(math.floor(fraction * len(ids) + 0.5))
    gen_ids = set(ids[perm[:n_gen]].tolist())
    return (train.subset(gen_ids, itc="generator"),
            train.subset([u for u in train.ids if u not in gen_ids], itc="predictor"))


def _with_seed(hyper, seed: int):
    return type(hyper)(**{**hyper.__dict__, "seed": seed})


def _one_seed(dataset, config: ComparisonConfig, factory, seed: int) -> list[ReplicateRecord]:
    import torch

    torch.set_num_threads(1)
    cfg = ComparisonConfig(**{**config.__dict__, "seeds": [seed]})
    return run_comparison(dataset, cfg, factory).records


def run_comparison(dataset: TimeSeriesDataset, config: ComparisonConfig, factory: ModelFactory | None = None,
                   on_record: Callable[[ReplicateRecord], None] | None = None,
                   workers: int = 1) -> ExperimentReport:
    """Train and evaluate every (strategy, N, L) cell once per seed.

    Per seed: unit split, [0,1] scaling fitted on train, ITC split of train
    into generator/predictor sets, generator training, window rewriting for
    each L, predictor training and test evaluation. Failures are recorded on
    the affected cells and the sweep carries on.

    With ``workers > 1`` seeds run in separate processes (one torch thread
    each); records are still delivered in seed order, so reports do not
    depend on the worker count.
    """
    factory = factory or ModelFactory()
    cells = config.cells()
    if not cells:
        raise ConfigError("no strategy cells to run")
    report = ExperimentReport()
    if workers > 1 and len(config.seeds) > 1:
        import multiprocessing
        from concurrent.futures import ProcessPoolExecutor

        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(min(workers, len(config.seeds)), mp_context=ctx) as pool:
            futures = [pool.submit(_one_seed, dataset, config, factory, s) for s in config.seeds]
            for fut in futures:
                for rec in fut.result():
                    report.add(rec)
                    if on_record is not None:
                        on_record(rec)
        return report
    horizons = sorted(set(config.horizons) | {1})
    t = config.target

    def emit(rec):
        report.add(rec)
        if on_record is not None:
            on_record(rec)

    for seed in config.seeds:
        try:
            train_raw, test_raw, val_raw = _split(dataset, config, seed)
            train, scaling = scale_minmax(train_raw)
            test, _ = scale_minmax(test_raw, scaling)
            val, _ = scale_minmax(val_raw, scaling)
            W_train = make_windows(train, config.M, horizons)
            W_test = make_windows(test, config.M, horizons)
            W_val = make_windows(val, config.M, horizons)
            if len(W_train) == 0 or len(W_test) == 0:
                raise ContractError("train or test split produced no windows")
        except GenfError as exc:
            for c in cells:
                emit(ReplicateRecord(c.kind, c.N, c.L, seed, "failed", error=f"split: {exc}"))
            continue

        def evaluate(fn, W: WindowedDataset, N: int) -> dict:
            if len(W) == 0:
                return {}
            return _evaluate(fn(W), W.targets[N][:, t], scaling, t, config.metric_space)

        generator, gen_error = None, ""
        P = None
        needs_gen = any(c.kind == "genf" for c in cells) or (
            "iterative" in config.strategies and config.iterative_model == "generator")
        if needs_gen:
            try:
                if config.use_itc:
                    G_units, P_units = itc_split(train, _with_seed(config.itc, seed))
                else:
                    G_units, P_units = _random_halves(train, config.itc.generator_fraction, seed)
                W_G = make_windows(G_units, config.M, [1])
                P = make_windows(P_units, config.M, horizons)
                generator = factory.generator(W_G, _with_seed(config.cwgan, seed))
            except Exception as exc:  # noqa: BLE001 - isolate the failure to dependent cells
                gen_error = f"generator: {type(exc).__name__}: {exc}"
                log.warning("seed %d: %s", seed, gen_error)

        one_step, one_step_error = None, ""
        phyper = _with_seed(config.predictor, seed)
        for c in cells:
            t0 = time.perf_counter()
            try:
                if c.kind == "direct":
                    model = factory.predictor(W_train, c.N, phyper, t, 0)
                    fn = lambda W, m=model, N=c.N: forecast_direct(m, W.windows, N)
                elif c.kind == "iterative":
                    if config.iterative_model == "generator":
                        if generator is None:
                            raise GenfError(gen_error or "no generator")
                        step = _NoisyStep(generator, seed)
                    else:
                        if one_step is None and not one_step_error:
                            try:
                                one_step = factory.one_step(W_train, phyper)
                            except Exception as exc:  # noqa: BLE001
                                one_step_error = f"{type(exc).__name__}: {exc}"
                        if one_step is None:
                            raise GenfError(one_step_error)
                        step = one_step
                    fn = lambda W, m=step, N=c.N: forecast_iterative(m, W.windows, N, t)
                else:
                    if generator is None:
                        raise GenfError(gen_error or "no generator")
                    ext = extend_windows(generator, P.windows, c.L, seed=_noise_seed(seed, c.L, 0))
                    model = factory.predictor(P.with_windows(ext), c.N, phyper, t, c.L)
                    fn = lambda W, m=model, c=c, part=1: forecast_genf(
                        generator, m, W.windows, c.L, c.N, seed=_noise_seed(seed, c.L, part))
                metrics = evaluate(fn, W_test, c.N)
                val_metrics = evaluate(fn, W_val, c.N)
                emit(ReplicateRecord(c.kind, c.N, c.L, seed, "ok", metrics, val_metrics, len(W_test),
                                     seconds=time.perf_counter() - t0))
            except Exception as exc:  # noqa: BLE001 - a failed cell never aborts the sweep
                log.warning("seed %d cell %s N=%d failed: %s", seed, c.label, c.N, exc)
                log.debug("%s", traceback.format_exc())
                emit(ReplicateRecord(c.kind, c.N, c.L, seed, "failed", error=f"{type(exc).__name__}: {exc}",
                                     seconds=time.perf_counter() - t0))
    return report


class _NoisyStep:
    """Generator used as an iterative one-step model, with seeded noise per call."""

    target = None

    def __init__(self, generator, seed: int):
        self.generator = generator
        self.rng = np.random.default_rng([seed, 7])

    def __call__(self, windows):
        w = np.asarray(windows, dtype=float)
        return np.asarray(self.generator(w, self.rng.standard_normal((w.shape[0], w.shape[2]))), dtype=float)
