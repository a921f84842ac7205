"""Command-line entry point: ``genf <subcommand> ...``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 training
failure (every cell), 4 partial failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from genf.errors import ConfigError, DataError, GenfError

log = logging.getLogger("genf")


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not exit code 2 (reserved for data)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _out_path(path: str | None, default_name: str) -> Path:
    if path:
        return Path(path)
    return Path(os.environ.get("GENF_OUTPUT_ROOT", ".")) / default_name


def _read_ids(path: str | None, role: str | None) -> list[str] | None:
    if not path:
        return None
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if role:
        rows = [r for r in rows if r.get("assignment") == role]
    return [r["unit_id"] for r in rows]


def _load(args):
    from genf.data import load_dataset

    ds, scaling = load_dataset(args.data)
    ids = _read_ids(getattr(args, "units_file", None), getattr(args, "role", None))
    if ids is not None:
        ds = ds.subset(ids)
    return ds, scaling


# ----------------------------------------------------------------- commands


def cmd_prepare_data(args) -> int:
    from genf.data import (impute_last_observation, load_csv_dataset, parse_process, save_dataset,
                           scale_minmax, synth_ar_process)

    if args.source == "synthetic":
        ds = synth_ar_process(parse_process(args.process), units=args.units, length=args.length, seed=args.seed)
    else:
        src = Path(args.source)
        files = sorted(src.glob("*.csv")) if src.is_dir() else [src]
        ds = load_csv_dataset(files, args.schema)
    if args.select_units:
        ds = ds.subset(args.select_units.split(","))
    if ds.has_missing():
        ds = impute_last_observation(ds)
    scaling = None
    if args.scale:
        ds, scaling = scale_minmax(ds)
    out = _out_path(args.out, "data.npz")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(out, ds, scaling, source=args.source, seed=args.seed)
    print(f"wrote {out}: {len(ds)} units, K={ds.K}")
    return 0


def cmd_mi_score(args) -> int:
    from genf.itc import ItcConfig, itc_split

    ds, _ = _load(args)
    res = itc_split(ds, ItcConfig(args.k, args.gamma, args.fraction, args.seed))
    out = _out_path(args.out, "mi_scores.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        w = csv.DictWriter(f, ["unit_id", "score", "group", "assignment"], lineterminator="\n")
        w.writeheader()
        for row in res.rows():
            w.writerow({**row, "score": repr(row["score"])})
    print(f"wrote {out}: {len(res.generator_set)} generator / {len(res.predictor_set)} predictor units")
    return 0


def cmd_train_generator(args) -> int:
    from genf.bundle import GenfModelBundle
    from genf.cwgan import CwganHyper, train_cwgan
    from genf.data import make_windows, scale_minmax

    ds, _ = _load(args)
    scaled, scaling = scale_minmax(ds)
    W = make_windows(scaled, args.M, [1])
    hyper = CwganHyper(lambda_gp=args.lambda_gp, eta_sup=args.eta, epochs=args.epochs, seed=args.seed,
                       max_steps=args.max_steps)
    gen, critic, trace = train_cwgan(W, hyper)
    out = _out_path(args.out, "gen.bundle")
    GenfModelBundle.from_generator(gen, critic, args.M, scaling, hyper).save(out)
    sup = [v for v in trace.column("supervised") if math.isfinite(v)]  # a cut-short epoch may lack generator steps
    last = f"{sup[-1]:.4g}" if sup else "n/a"
    print(f"wrote {out}: {len(trace.epochs)} epochs, final supervised loss {last}")
    return 0


def cmd_generate(args) -> int:
    from genf.bundle import GenfModelBundle
    from genf.cwgan import generate_recursive
    from genf.data import make_windows

    bundle = GenfModelBundle.load(args.gen_bundle)
    gen = bundle.generator()
    ds, _ = _load(args)
    scaling = bundle.scaling
    scaled = ds.with_units([type(u)(u.id, scaling.transform(u.values), u.times) for u in ds.units])
    W = make_windows(scaled, gen.M, [1])
    synth = generate_recursive(gen, W.windows, args.L, seed=args.seed)
    out = _out_path(args.out, "synthetic.npz")
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(out, unit_ids=W.unit_ids.astype(str), starts=W.starts, synthetic=scaling.inverse(synth))
    print(f"wrote {out}: {len(W)} windows x {args.L} synthetic steps")
    return 0


def _scaled_windows(ds, scaling, M, horizons):
    from genf.data import make_windows

    scaled = ds.with_units([type(u)(u.id, scaling.transform(u.values), u.times) for u in ds.units])
    return make_windows(scaled, M, horizons)


def cmd_train_predictor(args) -> int:
    from genf.bundle import GenfModelBundle
    from genf.cwgan import extend_windows
    from genf.data import fit_scaling
    from genf.predictor import PredictorHyper, train_predictor

    ds, _ = _load(args)
    L = 0
    if args.strategy == "genf":
        if not args.gen_bundle:
            raise ConfigError("--strategy genf needs --gen-bundle")
        gb = GenfModelBundle.load(args.gen_bundle)
        gen, scaling, M = gb.generator(), gb.scaling, gb.arch["M"]
        L = args.L
        if not 0 < L < args.horizon:
            raise ConfigError(f"need 0 < L < N, got L={L}, N={args.horizon}")
    else:
        scaling, M = fit_scaling(ds), args.M
    target = ds.feature_index(int(args.target) if args.target.isdigit() else args.target)
    W = _scaled_windows(ds, scaling, M, [args.horizon])
    if L:
        W = W.with_windows(extend_windows(gen, W.windows, L, seed=[args.seed, L, 0]))
    hyper = PredictorHyper(arch=args.arch, epochs=args.epochs, seed=args.seed, max_steps=args.max_steps)
    fitted = train_predictor(W, args.horizon, hyper, target, synthetic_length=L)
    out = _out_path(args.out, "pred.bundle")
    cfg = {"strategy": args.strategy, "gen_bundle": args.gen_bundle}
    GenfModelBundle.from_predictor(fitted, scaling, cfg, args.seed).save(out)
    print(f"wrote {out}: final training loss {fitted.trace.loss[-1]:.4g}")
    return 0


def cmd_evaluate(args) -> int:
    from genf.bundle import GenfModelBundle
    from genf.metrics import METRICS
    from genf.strategies import forecast_direct, forecast_genf

    pb = GenfModelBundle.load(args.pred_bundle)
    pred = pb.predictor()
    ds, _ = _load(args)
    scaling = pb.scaling
    W = _scaled_windows(ds, scaling, pb.arch["M"], [pred.horizon])
    L = pred.synthetic_length
    if L:
        if not args.gen_bundle:
            raise ConfigError("this predictor needs --gen-bundle to build its synthetic rows")
        gen = GenfModelBundle.load(args.gen_bundle).generator()
        yhat = forecast_genf(gen, pred, W.windows, L, pred.horizon, seed=[args.seed, L, 1])
    else:
        yhat = forecast_direct(pred, W.windows, pred.horizon)
    t = pred.target
    truth = W.targets[pred.horizon][:, t]
    metrics = {k: fn(scaling.inverse_feature(yhat, t), scaling.inverse_feature(truth, t))
               for k, fn in METRICS.items()}
    text = json.dumps({"horizon": pred.horizon, "L": L, "n": len(W), "metrics": metrics}, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_run_experiment(args) -> int:
    from genf.harness.config import validate_config
    from genf.harness.pipeline import exit_code, run_pipeline
    from genf.strategies import StubFactory

    cfg = validate_config(args.config)
    out_dir = Path(args.out).parent if args.out else None
    factory = StubFactory() if args.stub else None
    if cfg.raw.get("tuning"):
        from genf.harness.report import emit_report
        from genf.harness.tuning import tune

        res = tune(cfg, factory, out_root=(out_dir or cfg.output_dir) / "tuning")
        report = res.selected_report()
        emit_report(report, out_dir or cfg.output_dir, json_path=args.out)
        for row in res.rows():
            print(f"selected for {row['strategy']} N={row['N']} L={row['L']}: {row['point']}")
    else:
        report = run_pipeline(cfg, factory, out_dir=out_dir, json_path=args.out)
    for row in report.summary():
        label = f"GenF-{row['L']}" if row["strategy"] == "genf" else row["strategy"]
        std = row["mse_std"]
        mse = row["mse_mean"]
        print(f"N={row['N']:<3} {label:<10} mse {mse if mse is None else f'{mse:.4g}'}"
              f"{'' if std is None else f' ± {std:.2g}'}  ({row['ok']}/{row['replicates']} ok)")
    return exit_code(report)


def cmd_theory_bounds(args) -> int:
    from genf.theory import TheoryParams, bounds, corollary_check, scan_genf

    p = TheoryParams(args.L1, args.L2, args.alpha, args.sigma_I, args.sigma_D, args.beta0, args.beta1, args.beta2,
                     args.N)
    u_dir, u_iter, _ = bounds(p.replace(L=1)) if args.N > 1 else (bounds(p)[0], bounds(p)[1], None)
    scan = scan_genf(p) if args.N > 1 else np.array([])
    res = corollary_check(p) if args.N > 1 else None
    out = {
        "U_dir": u_dir,
        "U_iter": u_iter,
        "U_genf": {str(L): float(v) for L, v in zip(range(1, args.N), scan)},
        "condition_holds": res.condition_holds if res else None,
        "threshold": res.threshold if res else None,
        "best_L": res.best_L if res else None,
        "any_L_regime": res.any_L_regime if res else None,
        "reason": res.reason if res else "",
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_bias_variance(args) -> int:
    from genf.data import parse_process
    from genf.theory import empirical_bias_variance

    horizons = [int(h) for h in args.horizons.split(",")]
    rep = empirical_bias_variance(parse_process(args.process), args.M, horizons, R=args.R,
                                  test_points=args.test_points)
    rows = rep.rows()
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.DictWriter(f, list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    for r in rows:
        print(f"N={r['horizon']:<3} Z={r['noise']:.4g} B={r['bias']:.3g} V={r['variance']:.3g} "
              f"sum={r['sum']:.4g} mse={r['mse']:.4g} ± {r['mse_stderr']:.2g}")
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="genf", description="Generative forecasting laboratory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare-data", help="load or synthesize a dataset, impute, save as .npz")
    s.add_argument("--source", required=True, help="CSV file, directory of CSVs, or 'synthetic'")
    s.add_argument("--schema", default="uci_air_quality")
    s.add_argument("--process", default="ar1:phi=0.9,sigma=1")
    s.add_argument("--units", type=int, default=50)
    s.add_argument("--length", type=int, default=400)
    s.add_argument("--select-units", default=None, help="comma-separated unit ids to keep")
    s.add_argument("--scale", action="store_true", help="store data min-max scaled")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_prepare_data)

    s = sub.add_parser("mi-score", help="score units by mutual information and split them")
    s.add_argument("--data", required=True)
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--gamma", type=int, default=4)
    s.add_argument("--fraction", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_mi_score)

    def data_args(s, role_default=None):
        s.add_argument("--data", required=True)
        s.add_argument("--units-file", help="CSV from mi-score restricting the units used")
        s.add_argument("--role", default=role_default, choices=["generator", "predictor"])

    s = sub.add_parser("train-generator", help="train the CWGAN-TS generator")
    data_args(s, "generator")
    s.add_argument("--M", type=int, default=24)
    s.add_argument("--epochs", type=int, default=1000)
    s.add_argument("--max-steps", type=int, default=None)
    s.add_argument("--lambda-gp", type=float, default=5.0)
    s.add_argument("--eta", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_train_generator)

    s = sub.add_parser("generate", help="extend every window with L synthetic steps")
    data_args(s)
    s.add_argument("--gen-bundle", required=True)
    s.add_argument("--L", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("train-predictor", help="train a direct or GenF predictor")
    data_args(s, "predictor")
    s.add_argument("--horizon", type=int, required=True)
    s.add_argument("--strategy", choices=["df", "genf"], default="df")
    s.add_argument("--gen-bundle")
    s.add_argument("--L", type=int, default=0)
    s.add_argument("--M", type=int, default=24)
    s.add_argument("--target", default="0")
    s.add_argument("--arch", choices=["transformer", "lstm"], default="transformer")
    s.add_argument("--epochs", type=int, default=1000)
    s.add_argument("--max-steps", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_train_predictor)

    s = sub.add_parser("evaluate", help="score a trained predictor on a dataset")
    data_args(s)
    s.add_argument("--pred-bundle", required=True)
    s.add_argument("--gen-bundle")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("run-experiment", help="run a full strategy comparison from a YAML config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="aggregated JSON path; CSVs are written beside it")
    s.add_argument("--stub", action="store_true", help="use echo/persistence stand-ins (smoke test)")
    s.set_defaults(func=cmd_run_experiment)

    s = sub.add_parser("theory-bounds", help="evaluate the analytic bias+variance bounds")
    for name in ("L1", "L2", "alpha", "sigma_I", "sigma_D", "beta0", "beta1", "beta2"):
        s.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float, required=True)
    s.add_argument("--N", type=int, required=True)
    s.set_defaults(func=cmd_theory_bounds)

    s = sub.add_parser("bias-variance", help="empirical noise/bias/variance split on an AR process")
    s.add_argument("--process", default="ar1:phi=0.9,sigma=1")
    s.add_argument("--M", type=int, default=10)
    s.add_argument("--horizons", default="1,4,8")
    s.add_argument("--R", type=int, default=10)
    s.add_argument("--test-points", type=int, default=20000)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bias_variance)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GenfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if getattr(args, "data", None) and str(args.data) in str(exc) else 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
