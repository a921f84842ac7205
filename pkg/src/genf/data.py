"""Series ingestion, imputation, scaling, windowing and splitting."""
from __future__ import annotations

import json
import logging
import math
import warnings
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from genf.errors import ConfigError, ContractError, DataError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class Unit:
    id: str
    values: np.ndarray  # (time, K); NaN marks a missing cell before imputation
    times: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise DataError(f"unit {self.id!r}: values must be a nonempty (time, K) matrix")
        if self.times is None:
            self.times = np.arange(self.values.shape[0])
        else:
            self.times = np.asarray(self.times)
            if self.times.shape[0] != self.values.shape[0]:
                raise DataError(f"unit {self.id!r}: {self.times.shape[0]} times for {self.values.shape[0]} rows")

    def __len__(self):
        return self.values.shape[0]

    def slice(self, start: int, stop: int) -> "Unit":
        return Unit(self.id, self.values[start:stop].copy(), self.times[start:stop].copy())


@dataclass
class TimeSeriesDataset:
    units: list[Unit]
    feature_names: list[str]
    interval_description: str = ""
    process: "ArProcess | None" = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [u.id for u in self.units]
        if len(set(ids)) != len(ids):
            raise DataError("unit identifiers must be unique")
        K = len(self.feature_names)
        for u in self.units:
            if u.values.shape[1] != K:
                raise DataError(f"unit {u.id!r} has {u.values.shape[1]} features, expected {K}")

    @property
    def K(self) -> int:
        return len(self.feature_names)

    @property
    def ids(self) -> list[str]:
        return [u.id for u in self.units]

    def __len__(self):
        return len(self.units)

    def unit(self, unit_id: str) -> Unit:
        for u in self.units:
            if u.id == unit_id:
                return u
        raise KeyError(unit_id)

    def subset(self, ids: Iterable[str], **meta) -> "TimeSeriesDataset":
        wanted = set(ids)
        units = [u for u in self.units if u.id in wanted]
        return TimeSeriesDataset(units, list(self.feature_names), self.interval_description, self.process,
                                 {**self.meta, **meta})

    def with_units(self, units: list[Unit], **meta) -> "TimeSeriesDataset":
        return TimeSeriesDataset(units, list(self.feature_names), self.interval_description, self.process,
                                 {**self.meta, **meta})

    def has_missing(self) -> bool:
        return any(np.isnan(u.values).any() for u in self.units)

    def feature_index(self, name_or_index) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            if not 0 <= name_or_index < self.K:
                raise ConfigError(f"feature index {name_or_index} out of range for K={self.K}")
            return int(name_or_index)
        try:
            return self.feature_names.index(name_or_index)
        except ValueError:
            raise ConfigError(f"unknown feature {name_or_index!r}; have {self.feature_names}") from None


# --------------------------------------------------------------------------- CSV

SCHEMA_PRESETS = {
    # Beijing multi-site air quality (PRSA_Data_*.csv), one file per station
    "uci_air_quality": {
        "unit": "station",
        "time": ["year", "month", "day", "hour"],
        "features": ["PM10", "SO2", "NO2", "O3", "PM2.5", "CO"],
        "interval": "hourly",
    },
}


def load_schema(schema) -> dict:
    """Resolve a schema given as a dict, a preset name, or a YAML file path."""
    if isinstance(schema, dict):
        out = dict(schema)
    elif isinstance(schema, str) and schema in SCHEMA_PRESETS:
        out = dict(SCHEMA_PRESETS[schema])
    else:
        import yaml

        path = Path(schema)
        if not path.exists():
            raise ConfigError(f"schema {schema!r} is neither a preset nor an existing file")
        out = yaml.safe_load(path.read_text()) or {}
        if "preset" in out:
            out = {**SCHEMA_PRESETS[out.pop("preset")], **out}
    missing = [k for k in ("unit", "time", "features") if not out.get(k)]
    if missing:
        raise ConfigError(f"schema lacks {missing}")
    if isinstance(out["time"], str):
        out["time"] = [out["time"]]
    out["features"] = list(out["features"])
    return out


def load_csv_dataset(path, schema) -> TimeSeriesDataset:
    """Read one or more CSV files into a dataset, one unit per distinct unit id.

    Unparseable feature cells become NaN and are left for
    :func:`impute_last_observation`.
    """
    schema = load_schema(schema)
    paths = [Path(p) for p in (path if isinstance(path, (list, tuple)) else [path])]
    frames = []
    for p in paths:
        if not p.exists():
            raise DataError(f"no such file: {p}")
        try:
            frames.append(pd.read_csv(p, dtype=str, keep_default_na=False, encoding="utf-8"))
        except pd.errors.EmptyDataError:
            raise DataError(f"{p} is empty") from None
    df = pd.concat(frames, ignore_index=True)
    needed = [schema["unit"], *schema["time"], *schema["features"]]
    absent = [c for c in needed if c not in df.columns]
    if absent:
        raise ConfigError(f"columns {absent} named in schema not found in {[str(p) for p in paths]}")
    if df.empty:
        raise DataError("CSV has a header but no rows")

    for c in schema["features"]:
        df[c] = pd.to_numeric(df[c].str.strip().replace({"": None, "NA": None}), errors="coerce")
    time_cols = schema["time"]
    for c in time_cols:
        as_num = pd.to_numeric(df[c], errors="coerce")
        if as_num.notna().all():
            df[c] = as_num
    df = df.sort_values([schema["unit"], *time_cols], kind="mergesort")

    units = []
    for uid, g in df.groupby(schema["unit"], sort=True):
        times = g[time_cols[0]].to_numpy() if len(time_cols) == 1 else np.arange(len(g))
        units.append(Unit(str(uid), g[schema["features"]].to_numpy(dtype=float), times))
    return TimeSeriesDataset(units, schema["features"], schema.get("interval", ""),
                             meta={"source": [str(p) for p in paths]})


# ------------------------------------------------------------------ imputation


def impute_last_observation(dataset: TimeSeriesDataset) -> TimeSeriesDataset:
    """Forward-fill missing values within each unit and feature."""
    units = []
    for u in dataset.units:
        v = u.values
        first_bad = np.flatnonzero(np.isnan(v[0]))
        if first_bad.size:
            raise DataError(
                f"unit {u.id!r}: feature {dataset.feature_names[first_bad[0]]!r} missing at the first "
                "time step, nothing to carry forward"
            )
        filled = pd.DataFrame(v).ffill().to_numpy()
        units.append(Unit(u.id, filled, u.times.copy()))
    return dataset.with_units(units)


# --------------------------------------------------------------------- scaling


@dataclass
class ScalingParams:
    min: np.ndarray
    max: np.ndarray
    constant_features: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.min = np.asarray(self.min, dtype=float)
        self.max = np.asarray(self.max, dtype=float)
        if np.any(self.max < self.min):
            raise ConfigError("scaling max below min")

    @property
    def span(self) -> np.ndarray:
        span = self.max - self.min
        return np.where(span > 0, span, 1.0)

    def transform(self, values: np.ndarray) -> np.ndarray:
        out = (np.asarray(values, dtype=float) - self.min) / self.span
        if self.constant_features:
            out[..., self.constant_features] = 0.0
        return out

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.span + self.min

    def inverse_feature(self, values: np.ndarray, j: int) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.span[j] + self.min[j]

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist(), "constant_features": self.constant_features}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingParams":
        return cls(np.array(d["min"]), np.array(d["max"]), list(d.get("constant_features", [])))


def fit_scaling(dataset: TimeSeriesDataset) -> ScalingParams:
    stacked = np.vstack([u.values for u in dataset.units])
    if np.isnan(stacked).any():
        raise DataError("impute before scaling")
    lo, hi = stacked.min(axis=0), stacked.max(axis=0)
    const = [int(j) for j in np.flatnonzero(hi == lo)]
    for j in const:
        warnings.warn(f"feature {dataset.feature_names[j]!r} is constant on the fitting set; mapped to 0.0")
    return ScalingParams(lo, hi, const)


def scale_minmax(dataset: TimeSeriesDataset, fit_on=None) -> tuple[TimeSeriesDataset, ScalingParams]:
    """Min-max scale every feature using statistics from ``fit_on``.

    ``fit_on`` may be a dataset, an iterable of unit ids, an existing
    :class:`ScalingParams`, or None (fit on ``dataset`` itself).
    """
    if isinstance(fit_on, ScalingParams):
        params = fit_on
    elif fit_on is None:
        params = fit_scaling(dataset)
    elif isinstance(fit_on, TimeSeriesDataset):
        params = fit_scaling(fit_on)
    else:
        params = fit_scaling(dataset.subset(fit_on))
    units = [Unit(u.id, params.transform(u.values), u.times.copy()) for u in dataset.units]
    return dataset.with_units(units, scaling=params.to_dict()), params


# ------------------------------------------------------------------- windowing


@dataclass
class WindowedDataset:
    """Supervised samples stored column-wise.

    ``windows[i]`` holds rows ``starts[i] .. starts[i] + M - 1`` of unit
    ``unit_ids[i]`` and ``targets[h][i]`` the row ``h`` steps after the
    window's last row.
    """

    unit_ids: np.ndarray
    starts: np.ndarray
    windows: np.ndarray  # (S, M, K)
    targets: dict[int, np.ndarray]  # h -> (S, K)
    M: int
    horizons: list[int]
    skipped: list[str] = field(default_factory=list)

    def __len__(self):
        return self.windows.shape[0]

    @property
    def K(self) -> int:
        return self.windows.shape[2]

    def sample(self, i: int) -> tuple[str, np.ndarray, dict[int, np.ndarray]]:
        return str(self.unit_ids[i]), self.windows[i], {h: t[i] for h, t in self.targets.items()}

    def take(self, idx) -> "WindowedDataset":
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.intp)  # an empty list arrives as float64
        return WindowedDataset(self.unit_ids[idx], self.starts[idx], self.windows[idx],
                               {h: t[idx] for h, t in self.targets.items()}, self.M, list(self.horizons),
                               list(self.skipped))

    def with_windows(self, windows: np.ndarray) -> "WindowedDataset":
        if windows.shape != self.windows.shape:
            raise ContractError(f"replacement windows {windows.shape} != {self.windows.shape}")
        return WindowedDataset(self.unit_ids, self.starts, windows, self.targets, self.M, list(self.horizons),
                               list(self.skipped))


def make_windows(dataset: TimeSeriesDataset, M: int, horizons: Sequence[int]) -> WindowedDataset:
    """Stride-1 sliding windows of length ``M`` with targets at each horizon."""
    horizons = sorted(set(int(h) for h in horizons))
    if M < 1:
        raise ConfigError(f"window length must be >= 1, got {M}")
    if not horizons or horizons[0] < 1:
        raise ConfigError(f"horizons must be >= 1, got {horizons}")
    hmax = horizons[-1]
    K = dataset.K
    ids, starts, wins = [], [], []
    tg = {h: [] for h in horizons}
    skipped = []
    for u in dataset.units:
        T = len(u)
        n = T - M - hmax + 1
        if n < 1:
            skipped.append(u.id)
            continue
        view = np.lib.stride_tricks.sliding_window_view(u.values, M, axis=0)  # (T-M+1, K, M)
        wins.append(np.ascontiguousarray(view[:n].transpose(0, 2, 1)))
        for h in horizons:
            tg[h].append(u.values[M - 1 + h: M - 1 + h + n])
        ids.extend([u.id] * n)
        starts.append(np.arange(n))
    if skipped:
        log.info("make_windows skipped %d unit(s) shorter than M + max horizon = %d", len(skipped), M + hmax)
    if not wins:
        return WindowedDataset(np.array([], dtype=object), np.array([], dtype=int), np.empty((0, M, K)),
                               {h: np.empty((0, K)) for h in horizons}, M, horizons, skipped)
    return WindowedDataset(
        np.array(ids, dtype=object),
        np.concatenate(starts),
        np.concatenate(wins),
        {h: np.concatenate(v) for h, v in tg.items()},
        M,
        horizons,
        skipped,
    )


# ---------------------------------------------------------------------- splits


def _check_ratios(ratios) -> tuple[float, float, float]:
    if len(ratios) != 3:
        raise ConfigError("ratios must be (train, test, val)")
    r = tuple(float(x) for x in ratios)
    if any(x < 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be nonnegative and sum to 1, got {ratios}")
    return r


def _split_counts(n: int, ratios) -> list[int]:
    counts = [int(math.floor(n * r + 0.5)) for r in ratios]
    counts[0] += n - sum(counts)
    return counts


def split_units(dataset: TimeSeriesDataset, ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Random unit-level split into (train, test, val)."""
    ratios = _check_ratios(ratios)
    n = len(dataset)
    if n < 3:
        raise DataError(f"need at least 3 units to split, have {n}")
    counts = _split_counts(n, ratios)
    order = np.random.default_rng(seed).permutation(n)
    ids = np.array(dataset.ids, dtype=object)[order]
    a, b = counts[0], counts[0] + counts[1]
    return (
        dataset.subset(ids[:a], split="train", split_seed=seed),
        dataset.subset(ids[a:b], split="test", split_seed=seed),
        dataset.subset(ids[b:], split="val", split_seed=seed),
    )


def split_chronological(dataset: TimeSeriesDataset, ratios=(0.6, 0.2, 0.2), min_length: int = 1):
    """Cut every unit's time axis into train | val | test segments.

    Returns ``(train, test, val)`` like :func:`split_units`. Segments shorter
    than ``min_length`` (typically M + max horizon) are dropped and listed in
    each split's ``meta["skipped_units"]``.
    """
    r_train, r_test, r_val = _check_ratios(ratios)
    parts = {"train": [], "val": [], "test": []}
    skipped = {"train": [], "val": [], "test": []}
    for u in dataset.units:
        T = len(u)
        a = int(math.floor(T * r_train + 0.5))
        b = int(math.floor(T * (r_train + r_val) + 0.5))
        for name, (lo, hi) in {"train": (0, a), "val": (a, b), "test": (b, T)}.items():
            if hi - lo >= max(min_length, 1):
                parts[name].append(u.slice(lo, hi))
            else:
                skipped[name].append(u.id)
    return tuple(
        dataset.with_units(parts[name], split=name, skipped_units=skipped[name]) for name in ("train", "test", "val")
    )


# ------------------------------------------------------------ synthetic process


@dataclass
class ArProcess:
    """Vector autoregression X_t = sum_i A_i X_{t-i} + e_t, e_t ~ N(0, diag(noise_std^2))."""

    coefs: np.ndarray  # (p, K, K)
    noise_std: np.ndarray  # (K,)

    def __post_init__(self):
        c = np.asarray(self.coefs, dtype=float)
        if c.ndim == 1:  # univariate lags
            c = c[:, None, None]
        if c.ndim != 3 or c.shape[1] != c.shape[2]:
            raise ConfigError(f"coefficients must be (p, K, K), got {c.shape}")
        self.coefs = c
        s = np.broadcast_to(np.asarray(self.noise_std, dtype=float), (c.shape[1],)).copy()
        if np.any(s < 0):
            raise ConfigError("noise level must be nonnegative")
        self.noise_std = s

    @property
    def order(self) -> int:
        return self.coefs.shape[0]

    @property
    def K(self) -> int:
        return self.coefs.shape[1]

    def companion(self) -> np.ndarray:
        p, K = self.order, self.K
        C = np.zeros((p * K, p * K))
        C[:K, :] = np.hstack(list(self.coefs))
        if p > 1:
            C[K:, :-K] = np.eye((p - 1) * K)
        return C

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.companion()))))

    def check_stable(self):
        rho = self.spectral_radius()
        if not rho < 1.0:
            raise ConfigError(f"AR process is not stationary (companion spectral radius {rho:.4f} >= 1)")

    def _state(self, windows: np.ndarray) -> np.ndarray:
        w = np.asarray(windows, dtype=float)
        if w.ndim == 2:
            w = w[None]
        if w.shape[1] < self.order:
            raise ContractError(f"window of {w.shape[1]} rows is shorter than AR order {self.order}")
        # newest row first
        return w[:, ::-1][:, : self.order].reshape(w.shape[0], -1)

    def conditional_mean(self, windows: np.ndarray, N: int) -> np.ndarray:
        """E[X_{M+N} | window] for each window, shape (S, K)."""
        P = np.linalg.matrix_power(self.companion(), N)
        return self._state(windows) @ P[: self.K].T

    def forecast_noise_variance(self, N: int) -> np.ndarray:
        """Per-feature Var[X_{M+N} | window] = sum_{j<N} Psi_j Sigma Psi_j^T (diagonal)."""
        C = self.companion()
        sigma = np.diag(self.noise_std ** 2)
        total = np.zeros((self.K, self.K))
        P = np.eye(C.shape[0])
        for _ in range(N):
            psi = P[: self.K, : self.K]
            total += psi @ sigma @ psi.T
            P = C @ P
        return np.diag(total).copy()

    def describe(self) -> str:
        if self.K == 1 and self.order == 1:
            return f"ar1:phi={self.coefs[0, 0, 0]:g},sigma={self.noise_std[0]:g}"
        return f"var({self.order}) K={self.K}"

    def to_dict(self) -> dict:
        return {"coefs": self.coefs.tolist(), "noise_std": self.noise_std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ArProcess":
        return cls(np.array(d["coefs"]), np.array(d["noise_std"]))


def parse_process(text: str) -> ArProcess:
    """Parse ``ar1:phi=0.9[,sigma=1]`` or ``ar2:a1=..,a2=..[,sigma=..]``."""
    kind, _, rest = text.partition(":")
    kv = {}
    for part in filter(None, rest.split(",")):
        k, _, v = part.partition("=")
        kv[k.strip()] = float(v)
    sigma = kv.pop("sigma", 1.0)
    if kind == "ar1":
        return ArProcess(np.array([kv.get("phi", 0.0)]), sigma)
    if kind.startswith("ar") and kind[2:].isdigit():
        p = int(kind[2:])
        return ArProcess(np.array([kv.get(f"a{i + 1}", 0.0) for i in range(p)]), sigma)
    raise ConfigError(f"unknown process spec {text!r}")


def synth_ar_process(
    process: ArProcess,
    units: int = 1,
    length: int = 100,
    seed: int = 0,
    burn_in: int = 100,
    feature_names: Sequence[str] | None = None,
) -> TimeSeriesDataset:
    """Draw ``units`` independent stationary paths of ``length`` steps."""
    if not isinstance(process, ArProcess):
        process = ArProcess(*process)
    process.check_stable()
    p, K = process.order, process.K
    rng = np.random.default_rng(seed)
    total = burn_in + length
    eps = rng.standard_normal((total, units, K)) * process.noise_std
    x = np.zeros((total + p, units, K))
    A = process.coefs
    for t in range(total):
        acc = eps[t].copy()
        for i in range(p):
            acc += x[p + t - 1 - i] @ A[i].T
        x[p + t] = acc
    x = x[p + burn_in:]
    names = list(feature_names) if feature_names else [f"x{j}" for j in range(K)]
    out = [Unit(f"u{i:04d}", x[:, i, :].copy()) for i in range(units)]
    return TimeSeriesDataset(out, names, "synthetic", process, {"seed": seed, "process": process.to_dict()})


def synth_sinusoid(
    units: int = 8,
    length: int = 120,
    K: int = 2,
    seed: int = 0,
    period: tuple[float, float] = (10.0, 20.0),
    noise_std: float = 0.05,
) -> TimeSeriesDataset:
    """Noisy sine waves, one random period per unit and a random phase per feature.

    x[t, k] = sin(2 pi t / T_u + phi_uk) + noise_std * e. Cheap toy task for
    checking that a one-step generator tracks a smooth nonlinear signal.
    """
    if units < 1 or length < 1 or K < 1:
        raise ConfigError("units, length and K must be positive")
    rng = np.random.default_rng(seed)
    t = np.arange(length)[:, None]
    out = []
    for i in range(units):
        T = rng.uniform(*period)
        phase = rng.uniform(0, 2 * np.pi, size=K)
        x = np.sin(2 * np.pi * t / T + phase) + noise_std * rng.standard_normal((length, K))
        out.append(Unit(f"s{i:03d}", x))
    return TimeSeriesDataset(out, [f"x{j}" for j in range(K)], "synthetic", None,
                             {"seed": seed, "process": "sinusoid"})


# ---------------------------------------------------------------- persistence


def save_dataset(path, dataset: TimeSeriesDataset, scaling: ScalingParams | None = None, **provenance) -> Path:
    """Write a self-describing ``.npz``: arrays per unit plus a JSON header."""
    path = Path(path)
    meta = {
        "format": "genf-dataset",
        "version": FORMAT_VERSION,
        "ids": dataset.ids,
        "feature_names": dataset.feature_names,
        "interval": dataset.interval_description,
        "process": dataset.process.to_dict() if dataset.process is not None else None,
        "scaling": scaling.to_dict() if scaling is not None else dataset.meta.get("scaling"),
        "meta": _jsonable(dataset.meta),
        "provenance": _jsonable(provenance),
    }
    arrays = {}
    for i, u in enumerate(dataset.units):
        arrays[f"v{i}"] = u.values
        arrays[f"t{i}"] = np.asarray(u.times)
    with open(path, "wb") as fh:
        np.savez_compressed(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_dataset(path) -> tuple[TimeSeriesDataset, ScalingParams | None]:
    try:
        with np.load(Path(path), allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            if meta.get("format") != "genf-dataset":
                raise DataError(f"{path} is not a genf dataset file")
            units = [Unit(uid, z[f"v{i}"], z[f"t{i}"]) for i, uid in enumerate(meta["ids"])]
    except (ValueError, KeyError, OSError, zipfile.BadZipFile) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    process = ArProcess.from_dict(meta["process"]) if meta.get("process") else None
    ds = TimeSeriesDataset(units, meta["feature_names"], meta.get("interval", ""), process,
                           {**meta.get("meta", {}), "provenance": meta.get("provenance", {})})
    scaling = ScalingParams.from_dict(meta["scaling"]) if meta.get("scaling") else None
    return ds, scaling


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj
