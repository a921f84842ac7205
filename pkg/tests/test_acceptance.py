"""Acceptance checks, one test per criterion.

Every test records a PASS/FAIL line through ``acceptance_log.record``; the
lines are repeated in the pytest terminal summary. The heavy trade-off run
(criterion 1) takes tens of minutes on a single core and the public-data
trend (criterion 10) only runs when ``GENF_UCI_DIR`` points at the CSVs.
"""
import json
import math
import os
import random
import sys
import time

import mpmath
import numpy as np
import pytest
import torch

from acceptance_log import record
from fdcheck import directional_probes, max_rel_error
from genf.cwgan import Critic, CwganHyper, FittedGenerator, gradient_penalty, n_params as cwgan_params, train_cwgan
from genf.data import ArProcess, make_windows, parse_process, scale_minmax, synth_ar_process, synth_sinusoid
from genf.harness.config import validate_config
from genf.harness.pipeline import run_pipeline
from genf.itc import ItcConfig, ksg_mi
from genf.metrics import mae, mse, smape
from genf.predictor import AttentionConfig, PredictorHyper, TransformerPredictor, n_params, train_predictor
from genf.strategies import ComparisonConfig, forecast_direct, forecast_genf, run_comparison
from genf.theory import TheoryParams, corollary_check, empirical_bias_variance, recurrence_b

# ------------------------------------------------------------- 1: trade-off

AR2 = ArProcess(np.stack([np.array([[1.7, 0.05, 0.0], [0.0, 1.7, 0.05], [0.05, 0.0, 1.7]]), -0.85 * np.eye(3)]), 0.5)
TRADEOFF_BUDGET_S = 15 * 60  # on 4 cores
TRADEOFF_CORES = 4


@pytest.mark.slow
def test_strategy_tradeoff_on_coupled_ar2(tmp_path):
    ds = synth_ar_process(AR2, units=50, length=400, seed=123)
    cfg = ComparisonConfig(
        M=20, horizons=[8], strategies={"direct": [], "iterative": [], "genf": [2, 4, 6]}, seeds=[0, 1, 2, 3, 4],
        itc=ItcConfig(max_pair_samples=400),
        cwgan=CwganHyper(epochs=1000, max_steps=40_000),
        predictor=PredictorHyper(epochs=1000, max_steps=1200),
    )
    cores = os.cpu_count() or 1
    t0 = time.perf_counter()
    rep = run_comparison(ds, cfg, workers=cores)
    elapsed = time.perf_counter() - t0
    (tmp_path / "tradeoff.json").write_text(json.dumps(rep.summary(), indent=2))
    for row in rep.summary():
        print(row["strategy"], row["L"], row["mse_mean"], row["mse_std"])
    assert rep.n_failed == 0, [r.error for r in rep.records if r.status != "ok"]
    # the iterative cell is keyed by its N - 1 generated steps
    df, it = rep.mean("direct", 8, 0), rep.mean("iterative", 8, 7)
    genf = {L: rep.mean("genf", 8, L) for L in (2, 4, 6)}
    best_L = min(genf, key=genf.get)
    margin = 1 - genf[best_L] / max(df, it)
    # single-threaded seeds: wall time scales with the cores available, up to one per seed
    budget = TRADEOFF_BUDGET_S * TRADEOFF_CORES / min(cores, TRADEOFF_CORES)
    quality = genf[best_L] <= df and genf[best_L] <= it and margin >= 0.03
    ok = quality and elapsed <= budget
    detail = (f"DF={df:.4f} IF={it:.4f} " + " ".join(f"GenF-{L}={v:.4f}" for L, v in genf.items())
              + f" margin={margin:.1%} (need >=3%) time={elapsed / 60:.1f}min on {cores} core(s)"
              f" (budget {budget / 60:.0f}min)")
    record(1, ok, "strategy trade-off", detail)
    assert quality, detail
    assert elapsed <= budget, detail


# ------------------------------------------------------------- 2: corollary


def _draw(rng):
    return TheoryParams(*rng.uniform(0, 1, 2), rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 1),
                        rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2), int(rng.integers(2, 12)))


def test_corollary_condition_confirmed_by_scan():
    rng = np.random.default_rng(2024)
    confirmed = held = 0
    any_total = any_ok = 0
    t0 = time.perf_counter()
    while held < 100 or any_total < 20:
        res = corollary_check(p := _draw(rng))
        if not res.condition_holds:
            continue
        scan = np.array(res.u_genf)
        if held < 100:
            held += 1
            confirmed += bool(scan[res.best_L - 1] < min(res.u_dir, res.u_iter))
            assert res.best_L == int(np.argmin(scan)) + 1 and len(scan) == p.N - 1
        if res.any_L_regime:
            any_total += 1
            any_ok += bool(np.all((scan < res.u_dir) & (scan < res.u_iter)))
    elapsed = time.perf_counter() - t0
    ok = confirmed == 100 and any_ok == any_total and elapsed < 60
    record(2, ok, "corollary scan", f"{confirmed}/100 condition draws confirmed, any-L regime {any_ok}/{any_total}"
                                    f" all-L wins, {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------- 3: recurrence


def _mp_b(alpha, sigma_I, L1, L2, k):
    with mpmath.workdps(50):
        b = mpmath.mpf(alpha) * mpmath.mpf(sigma_I) ** 2
        for _ in range(k - 1):
            b = b * (mpmath.mpf(L1) + 1 + b * mpmath.mpf(L2))
        return b


def _sig_figs(a: float, ref) -> float:
    if ref == 0:
        return math.inf if a == 0 else 0.0
    rel = abs(mpmath.mpf(a) - ref) / abs(ref)
    return math.inf if rel == 0 else float(-mpmath.log10(rel))


def test_recurrence_matches_high_precision():
    rng = np.random.default_rng(3)
    worst = math.inf
    compared = 0
    for _ in range(1000):
        alpha, sigma_I = rng.uniform(0, 1), rng.uniform(0, 1.5)
        L1, L2 = rng.uniform(0, 1), rng.uniform(0, 1)
        k = int(rng.integers(1, 31))
        ref = _mp_b(alpha, sigma_I, L1, L2, k)
        got = recurrence_b(alpha, sigma_I, L1, L2, k)
        if ref > sys.float_info.max:
            # beyond double range the recurrence reports saturation instead of a value
            assert got == math.inf
            continue
        compared += 1
        worst = min(worst, _sig_figs(got, ref))
    ok = worst >= 12
    record(3, ok, "recurrence precision", f"worst agreement {worst:.1f} significant figures over {compared} "
                                          f"finite draws (need >=12)")
    assert ok


# ------------------------------------------------------------------- 4: KSG


def test_ksg_against_gaussian_closed_form():
    t0 = time.perf_counter()
    errs = {}
    for rho in (0.0, 0.5, 0.9):
        est = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            x = rng.standard_normal(4000)
            y = rho * x + math.sqrt(1 - rho * rho) * rng.standard_normal(4000)
            est.append(ksg_mi(x, y, k=3))
        errs[rho] = abs(np.mean(est) + 0.5 * math.log(1 - rho * rho))
    elapsed = time.perf_counter() - t0
    ok = max(errs.values()) <= 0.05 and elapsed <= 60
    record(4, ok, "KSG oracle", " ".join(f"rho={r}: err={e:.4f}" for r, e in errs.items())
           + f" (tol 0.05), {elapsed:.1f}s")
    assert ok


# --------------------------------------------------------- 5: gradient checks


def test_penalty_and_predictor_finite_differences():
    torch.manual_seed(11)
    critic = Critic(2, hidden=2, dense=3, dense2=2).double()
    cond = torch.rand(4, 5, 2, dtype=torch.float64)
    real, fake = torch.rand(4, 2, dtype=torch.float64), torch.rand(4, 2, dtype=torch.float64)
    eps = torch.rand(4, dtype=torch.float64)
    gp_err = max_rel_error(directional_probes(lambda: gradient_penalty(critic, cond, real, fake, eps).mean(),
                                              critic.parameters(), 20))

    tiny = AttentionConfig(d_model=2, heads=1, d_ff=2, encoder_layers=1, decoder_layers=1, dropout=0.0)
    model = TransformerPredictor(2, 4, tiny).double().eval()
    x = torch.rand(3, 4, 2, dtype=torch.float64)
    y = torch.rand(3, 1, dtype=torch.float64)
    pred_err = max_rel_error(directional_probes(lambda: ((model(x) - y) ** 2).mean(), model.parameters(), 20))

    sizes = (cwgan_params(critic), n_params(model))
    ok = max(gp_err, pred_err) < 1e-4 and max(sizes) <= 200
    record(5, ok, "gradient checks", f"penalty max rel err {gp_err:.1e} ({sizes[0]} params), predictor "
                                     f"{pred_err:.1e} ({sizes[1]} params), tol 1e-4, 20 probes each")
    assert ok


# ---------------------------------------------------------- 6: CWGAN ablation

SINE = dict(units=8, length=80, period=(5.0, 8.0))
SINE_M = 10
SINE_HYPER = dict(epochs=500, batch_size=16)


def _sine_one_step(seed: int, eta: float) -> tuple[float, float]:
    train = synth_sinusoid(seed=100 + seed, **SINE)
    test = synth_sinusoid(seed=900 + seed, **SINE)
    train, sc = scale_minmax(train)
    test, _ = scale_minmax(test, sc)
    W, Wt = make_windows(train, SINE_M, [1]), make_windows(test, SINE_M, [1])
    gen, _, _ = train_cwgan(W, CwganHyper(eta_sup=eta, seed=seed, **SINE_HYPER))
    noise = np.random.default_rng(seed).standard_normal((len(Wt), Wt.K))
    pred = FittedGenerator(gen)(Wt.windows, noise)
    return mse(pred, Wt.targets[1]), mse(Wt.windows[:, -1], Wt.targets[1])


@pytest.mark.slow
def test_supervised_term_ablation_on_sinusoid():
    ts, gp, pers = [], [], []
    for seed in range(3):
        a, p = _sine_one_step(seed, 1.0)
        b, _ = _sine_one_step(seed, 0.0)
        ts.append(a)
        gp.append(b)
        pers.append(p)
    m_ts, m_gp, m_p = np.mean(ts), np.mean(gp), np.mean(pers)
    ok = m_ts < m_gp and m_ts < m_p
    record(6, ok, "CWGAN-TS ablation", f"one-step MSE CWGAN-TS={m_ts:.5f} CWGAN-GP(eta=0)={m_gp:.5f} "
                                       f"persistence={m_p:.5f} over 3 seeds")
    assert ok


# ------------------------------------------------------ 7: bias-variance split


def test_bias_variance_closure_on_ar1():
    phi, sigma = 0.9, 1.0
    proc = parse_process(f"ar1:phi={phi},sigma={sigma}")
    rep = empirical_bias_variance(proc, M=10, horizons=[1, 4, 8], R=10)
    parts = []
    ok = True
    for N in (1, 4, 8):
        gap = abs(rep.total(N) - rep.mse[N]) / rep.mse_stderr[N]
        z_ref = sigma ** 2 * (1 - phi ** (2 * N)) / (1 - phi ** 2)
        z_rel = abs(rep.noise[N] - z_ref) / z_ref
        ok &= gap <= 3 and z_rel <= 0.10
        parts.append(f"N={N}: |Z+B+V-MSE|={gap:.2f}SE Z err={z_rel:.1%}")
    record(7, ok, "decomposition closure", "; ".join(parts))
    assert ok


# -------------------------------------------------------------- 8: metrics


def _loop_mse(p, t):
    from fractions import Fraction

    return float(sum((Fraction((a - b) * (a - b)) for a, b in zip(p, t)), Fraction(0))) / len(p)


def _loop_mae(p, t):
    from fractions import Fraction

    return float(sum((Fraction(abs(a - b)) for a, b in zip(p, t)), Fraction(0))) / len(p)


def _loop_smape(p, t):
    from fractions import Fraction

    total = Fraction(0)
    for a, b in zip(p, t):
        den = abs(a) + abs(b)
        if den > 0:
            total += Fraction(2.0 * abs(a - b) / den)
    return 100.0 * (float(total) / len(p))


def test_metric_oracles():
    rng = random.Random(8)
    bad = 0
    for _ in range(1000):
        n = rng.randint(1, 50)
        p = [rng.uniform(-100, 100) for _ in range(n)]
        t = [rng.uniform(-100, 100) for _ in range(n)]
        if rng.random() < 0.1:
            p[0] = t[0] = 0.0
        P, T = np.array(p), np.array(t)
        c = 2.0 ** rng.randint(-10, 10)
        exact = mse(P, T) == _loop_mse(p, t) and mae(P, T) == _loop_mae(p, t) and smape(P, T) == _loop_smape(p, t)
        props = smape(P, T) == smape(T, P) and smape(c * P, c * T) == smape(P, T)
        bad += not (exact and props)
    ok = bad == 0
    record(8, ok, "metric oracles", f"{1000 - bad}/1000 vectors exact against loop oracles, symmetry and "
                                    f"scale invariance")
    assert ok


# --------------------------------------------------------- 9: determinism


def test_l0_degeneracy_and_byte_identical_reports(tmp_path):
    ds = synth_ar_process(parse_process("ar1:phi=0.9"), units=6, length=60, seed=9)
    ds, _ = scale_minmax(ds)
    W = make_windows(ds, 8, [1, 4])
    pred = train_predictor(W, 4, PredictorHyper(max_steps=30, seed=1))
    gen, _, _ = train_cwgan(W, CwganHyper(max_steps=30, seed=1))
    fg = FittedGenerator(gen, 8)
    a = forecast_direct(pred, W.windows, 4)
    b = forecast_genf(fg, pred, W.windows, 0, 4, seed=5)
    bit_identical = a.dtype == b.dtype and a.tobytes() == b.tobytes()

    raw = {"dataset": {"source": "synthetic", "process": "ar1:phi=0.9", "units": 10, "length": 60},
           "M": 8, "horizons": [4], "seeds": [0, 1], "strategies": {"direct": True, "iterative": True, "genf": [2]},
           "itc": {"gamma_groups": 2, "max_pair_samples": 60},
           "cwgan": {"max_steps": 40}, "predictor": {"max_steps": 20}}
    for d in ("a", "b"):
        run_pipeline(validate_config({**raw, "output_dir": str(tmp_path / d)}))
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("report.csv", "report_long.csv"))
    ok = bit_identical and same
    record(9, ok, "determinism", f"L=0 bit-identical to direct: {bit_identical}; repeated run CSVs "
                                 f"byte-identical: {same}")
    assert ok


# -------------------------------------------------- 10: public-data trend

UCI_ENV = "GENF_UCI_DIR"
UCI_SITES = ["Aotizhongxin", "Changping", "Dingling"]


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get(UCI_ENV), reason=f"set {UCI_ENV} to the PRSA_Data_*.csv directory")
def test_no2_trend_on_uci_subsample(tmp_path):
    raw = {
        "dataset": {"source": os.environ[UCI_ENV], "schema": "uci_air_quality", "select_units": UCI_SITES},
        "M": 24, "horizons": [12], "target": "NO2", "seeds": [0, 1, 2],
        "strategies": {"direct": True, "genf": [2]},
        "split": {"mode": "chronological", "ratios": [0.6, 0.2, 0.2]},
        "itc": {"gamma_groups": 1},
        "cwgan": {"epochs": 200}, "predictor": {"epochs": 200},
        "workers": os.cpu_count() or 1, "output_dir": str(tmp_path),
    }
    t0 = time.perf_counter()
    rep = run_pipeline(validate_config(raw))
    elapsed = time.perf_counter() - t0
    df, g2 = rep.mean("direct", 12, 0, "mae"), rep.mean("genf", 12, 2, "mae")
    ok = g2 <= df and elapsed <= 45 * 60
    record(10, ok, "NO2 trend", f"MAE DF={df:.3f} GenF-2={g2:.3f}, {elapsed / 60:.1f}min")
    assert ok
