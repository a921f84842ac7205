"""Mutual-information unit scoring and the generator/predictor training split."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma

from genf.data import TimeSeriesDataset
from genf.errors import ConfigError, DataError
from genf.kernels import ksg_counts

log = logging.getLogger(__name__)

MAX_PAIR_SAMPLES = 2000


@dataclass
class ItcConfig:
    k_neighbors: int = 3
    gamma_groups: int = 4
    generator_fraction: float = 0.5
    seed: int = 0
    max_pair_samples: int = MAX_PAIR_SAMPLES

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ConfigError("k_neighbors must be positive")
        if self.gamma_groups < 1:
            raise ConfigError("gamma_groups must be positive")
        if not 0.0 < self.generator_fraction < 1.0:
            raise ConfigError("generator_fraction must lie in (0, 1)")


def ksg_mi(x, y, k: int = 3, backend: str | None = None) -> float:
    """Kraskov-Stoegbauer-Grassberger estimator (variant 1) of I(X;Y) in nats.

    Max-norm in the joint space; marginal counts use strict inequality
    against the k-th neighbor distance. Negative estimates are clamped to 0.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    n = x.shape[0]
    if y.shape[0] != n:
        raise ConfigError(f"x has {n} samples, y has {y.shape[0]}")
    if n <= k or k < 1:
        raise ConfigError(f"need n > k >= 1, got n={n}, k={k}")
    if np.isnan(x).any() or np.isnan(y).any():
        raise DataError("NaN in MI inputs")
    nx, ny = ksg_counts(x, y, k, backend)
    mi = digamma(k) + digamma(n) - np.mean(digamma(nx + 1) + digamma(ny + 1))
    return max(float(mi), 0.0)


def _pair_seed(seed: int, i: int, j: int) -> np.random.Generator:
    return np.random.default_rng([seed, min(i, j), max(i, j)])


def pair_mi(a: np.ndarray, b: np.ndarray, k: int, rng: np.random.Generator | None = None,
            cap: int = MAX_PAIR_SAMPLES) -> float | None:
    """MI between two units, treating aligned time steps as joint samples.

    Both series are truncated to their common prefix; at most ``cap`` steps
    are kept (uniformly, without replacement). Returns None when the common
    length does not exceed ``k``.
    """
    n = min(a.shape[0], b.shape[0])
    if n <= k:
        return None
    idx = np.arange(n)
    if n > cap:
        rng = rng or np.random.default_rng(0)
        idx = np.sort(rng.choice(n, size=cap, replace=False))
    return ksg_mi(a[idx], b[idx], k)


@dataclass
class UnitScoreTable:
    ids: list[str]
    mi: np.ndarray  # (n, n), symmetric, zero diagonal
    skipped_pairs: int = 0

    @property
    def scores(self) -> dict[str, float]:
        n = len(self.ids)
        # sequential sums so unit_score() reproduces them bit for bit
        return {uid: float(sum(self.mi[i, j] for j in range(n) if j != i)) for i, uid in enumerate(self.ids)}

    def score(self, unit_id: str) -> float:
        return self.scores[unit_id]


def score_table(dataset: TimeSeriesDataset, k: int = 3, seed: int = 0,
                cap: int = MAX_PAIR_SAMPLES) -> UnitScoreTable:
    """Pairwise MI matrix and per-unit scores J(P_i) = sum_{j != i} I(P_i, P_j)."""
    n = len(dataset)
    if n < 2:
        raise DataError("scoring needs at least 2 units")
    mi = np.zeros((n, n))
    skipped = 0
    vals = [u.values for u in dataset.units]
    for i in range(n):
        for j in range(i + 1, n):
            v = pair_mi(vals[i], vals[j], k, _pair_seed(seed, i, j), cap)
            if v is None:
                skipped += 1
                continue
            mi[i, j] = mi[j, i] = v
    if skipped:
        log.warning("%d unit pair(s) too short for k=%d were skipped", skipped, k)
    return UnitScoreTable(dataset.ids, mi, skipped)


def unit_score(dataset: TimeSeriesDataset, unit_id: str, k: int = 3, seed: int = 0,
               cap: int = MAX_PAIR_SAMPLES) -> float:
    """Score of one unit, recomputed from scratch against every other unit."""
    ids = dataset.ids
    if len(ids) < 2:
        raise DataError("scoring needs at least 2 units")
    i = ids.index(unit_id)
    total = 0.0
    for j, other in enumerate(dataset.units):
        if j == i:
            continue
        lo, hi = min(i, j), max(i, j)
        v = pair_mi(dataset.units[lo].values, dataset.units[hi].values, k, _pair_seed(seed, i, j), cap)
        if v is not None:
            total += v
    return total


def group_quotas(sizes: list[int], fraction: float) -> list[int]:
    """Per-group generator counts: floor of the proportional share, then one
    extra unit per group, highest-scoring group first, until the rounded
    overall target is met."""
    n = sum(sizes)
    target = int(math.floor(fraction * n + 0.5))
    quotas = [int(math.floor(fraction * s)) for s in sizes]
    g = 0
    while sum(quotas) < target and g < len(sizes):
        if quotas[g] < sizes[g]:
            quotas[g] += 1
        g += 1
    return quotas


@dataclass
class ItcResult:
    generator_set: TimeSeriesDataset
    predictor_set: TimeSeriesDataset
    table: UnitScoreTable
    groups: dict[str, int] = field(default_factory=dict)
    assignment: dict[str, str] = field(default_factory=dict)

    def __iter__(self):
        # unpacks as (generator_set, predictor_set)
        return iter((self.generator_set, self.predictor_set))

    def rows(self) -> list[dict]:
        sc = self.table.scores
        order = sorted(self.table.ids, key=lambda u: (-sc[u], u))
        return [{"unit_id": u, "score": sc[u], "group": self.groups[u], "assignment": self.assignment[u]}
                for u in order]


def itc_split(dataset: TimeSeriesDataset, config: ItcConfig | None = None,
              table: UnitScoreTable | None = None) -> ItcResult:
    """Split training units into generator and predictor sets.

    Units are ranked by descending score, cut into ``gamma_groups`` contiguous
    groups, and each group contributes its quota of randomly chosen units to
    the generator set. Everything else goes to the predictor set.
    """
    config = config or ItcConfig()
    n = len(dataset)
    if config.gamma_groups > n:
        raise ConfigError(f"gamma_groups={config.gamma_groups} exceeds the {n} available units")
    if table is None:
        table = score_table(dataset, config.k_neighbors, config.seed, config.max_pair_samples)
    sc = table.scores
    ranked = sorted(table.ids, key=lambda u: (-sc[u], u))
    groups = [list(g) for g in np.array_split(np.array(ranked, dtype=object), config.gamma_groups)]
    quotas = group_quotas([len(g) for g in groups], config.generator_fraction)
    rng = np.random.default_rng(config.seed)
    gen_ids, group_of, assignment = set(), {}, {}
    for gi, (members, q) in enumerate(zip(groups, quotas)):
        chosen = set(rng.choice(len(members), size=q, replace=False).tolist()) if q else set()
        for mi_, uid in enumerate(members):
            group_of[uid] = gi
            if mi_ in chosen:
                gen_ids.add(uid)
                assignment[uid] = "generator"
            else:
                assignment[uid] = "predictor"
    pred_ids = [u for u in dataset.ids if u not in gen_ids]
    return ItcResult(
        dataset.subset(gen_ids, itc="generator"),
        dataset.subset(pred_ids, itc="predictor"),
        table,
        group_of,
        assignment,
    )
