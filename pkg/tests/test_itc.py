import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset
from genf.data import TimeSeriesDataset, Unit
from genf.errors import ConfigError, DataError
from genf.itc import ItcConfig, group_quotas, itc_split, ksg_mi, score_table, unit_score


def gaussian_pair(rho, n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    y = rho * x + math.sqrt(1 - rho * rho) * rng.normal(size=n)
    return x, y


def test_independent_uniform_near_zero():
    rng = np.random.default_rng(0)
    assert abs(ksg_mi(rng.uniform(size=2000), rng.uniform(size=2000))) <= 0.05


def test_gaussian_rho_09():
    est = np.mean([ksg_mi(*gaussian_pair(0.9, 5000, s)) for s in range(10)])
    assert est == pytest.approx(-0.5 * math.log(1 - 0.81), abs=0.05)


def test_identical_and_duplicated_points():
    rng = np.random.default_rng(1)
    x = rng.normal(size=500)
    v = ksg_mi(x, x)
    assert np.isfinite(v) and v > 2
    d = np.repeat(rng.normal(size=50), 10)  # every point has 9 exact twins
    v = ksg_mi(d, d + 0.0)
    assert np.isfinite(v) and v >= 0


def test_monotone_transform_invariance():
    x, y = gaussian_pair(0.7, 2000, 3)
    a = ksg_mi(x, y)
    b = ksg_mi(np.exp(x), np.exp(y))
    assert abs(a - b) <= 0.08


def test_independent_estimate_shrinks_with_n():
    rng = np.random.default_rng(2)
    vals = []
    for n in (500, 2000, 8000):
        vals.append(abs(ksg_mi(rng.normal(size=n), rng.normal(size=n))))
    assert vals[1] <= vals[0] + 0.02 and vals[2] <= vals[1] + 0.02


def test_ksg_errors():
    with pytest.raises(ConfigError):
        ksg_mi(np.zeros(3), np.zeros(3), k=3)
    with pytest.raises(ConfigError):
        ksg_mi(np.zeros(10), np.zeros(9))
    with pytest.raises(DataError):
        ksg_mi(np.r_[np.nan, np.zeros(9)], np.arange(10.0))


def test_ksg_deterministic():
    x, y = gaussian_pair(0.5, 800, 9)
    assert ksg_mi(x, y) == ksg_mi(x, y)


# --------------------------------------------------------------- scoring


def coupled_dataset(n_coupled=5, T=600, seed=0):
    rng = np.random.default_rng(seed)
    shared = rng.normal(size=(T, 2))
    units = [Unit(f"c{i}", shared + 0.3 * rng.normal(size=(T, 2))) for i in range(n_coupled)]
    units.append(Unit("noise", rng.normal(size=(T, 2))))
    return TimeSeriesDataset(units, ["a", "b"])


def test_two_units_scores_equal_pair_mi():
    ds = make_dataset([200, 200])
    t = score_table(ds)
    assert t.scores["u0"] == t.scores["u1"] == t.mi[0, 1]


def test_identical_units_equal_scores():
    u = np.random.default_rng(0).normal(size=(150, 2))
    ds = TimeSeriesDataset([Unit(f"x{i}", u.copy()) for i in range(3)], ["a", "b"])
    s = score_table(ds).scores
    assert s["x0"] == s["x1"] == s["x2"]


def test_noise_unit_scores_lowest():
    t = score_table(coupled_dataset())
    s = t.scores
    assert min(s, key=s.get) == "noise"
    assert np.array_equal(t.mi, t.mi.T) and np.all(np.diag(t.mi) == 0)


def test_row_sums_match_recomputation():
    ds = make_dataset([80, 60, 120, 90], seed=4)
    t = score_table(ds, seed=3)
    for uid in ds.ids:
        assert unit_score(ds, uid, seed=3) == t.scores[uid]


def test_short_pairs_skipped_and_counted(caplog):
    ds = make_dataset([3, 50, 50])
    t = score_table(ds, k=3)
    assert t.skipped_pairs == 2 and t.scores["u0"] == 0.0
    with pytest.raises(DataError):
        score_table(make_dataset([10]))


def test_pair_cap_subsamples():
    ds = coupled_dataset(n_coupled=2, T=400).subset(["c0", "c1"])
    full = score_table(ds).mi[0, 1]
    capped = score_table(ds, cap=100).mi[0, 1]
    assert full != capped


# ----------------------------------------------------------------- split


def test_gamma_one_half_split():
    ds = make_dataset([40] * 10)
    G, P = itc_split(ds, ItcConfig(gamma_groups=1))
    assert len(G) == len(P) == 5 and not set(G.ids) & set(P.ids)


def test_split_deterministic():
    ds = make_dataset([40] * 12)
    a = itc_split(ds, ItcConfig(seed=4))
    b = itc_split(ds, ItcConfig(seed=4))
    assert a.generator_set.ids == b.generator_set.ids
    assert a.rows() == b.rows()


def test_group_quota_rule():
    # 20 units, 4 groups of 5: floor(2.5)=2 each, 2 leftovers to the top two groups
    assert group_quotas([5, 5, 5, 5], 0.5) == [3, 3, 2, 2]
    ds = make_dataset([40] * 20)
    res = itc_split(ds, ItcConfig(gamma_groups=4))
    per_group = [sum(1 for u, g in res.groups.items() if g == gi and res.assignment[u] == "generator")
                 for gi in range(4)]
    assert per_group == [3, 3, 2, 2] and len(res.generator_set) == 10


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 20), min_size=1, max_size=8), st.floats(0.01, 0.99))
def test_group_quotas_properties(sizes, frac):
    q = group_quotas(sizes, frac)
    assert sum(q) == int(math.floor(frac * sum(sizes) + 0.5)) or all(a == s for a, s in zip(q, sizes))
    assert all(math.floor(frac * s) <= a <= s for a, s in zip(q, sizes))


@settings(max_examples=15, deadline=None)
@given(st.integers(4, 14), st.integers(1, 4), st.integers(0, 100))
def test_split_is_partition(n, gamma, seed):
    ds = make_dataset([25] * n, seed=seed)
    G, P = itc_split(ds, ItcConfig(gamma_groups=gamma, seed=seed))
    assert sorted(G.ids + P.ids) == sorted(ds.ids) and not set(G.ids) & set(P.ids)


def test_split_rows_ordered_by_score():
    res = itc_split(coupled_dataset(), ItcConfig(gamma_groups=2))
    rows = res.rows()
    assert [r["score"] for r in rows] == sorted((r["score"] for r in rows), reverse=True)
    assert rows[-1]["unit_id"] == "noise" and rows[-1]["group"] == 1


def test_itc_config_errors():
    with pytest.raises(ConfigError):
        itc_split(make_dataset([20] * 3), ItcConfig(gamma_groups=4))
    for bad in ({"k_neighbors": 0}, {"gamma_groups": 0}, {"generator_fraction": 1.0}):
        with pytest.raises(ConfigError):
            ItcConfig(**bad)
