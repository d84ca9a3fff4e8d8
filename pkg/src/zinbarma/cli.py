"""Command-line entry point: ``zinbarma {simulate,fit,diagnose,mc-study,compare}``.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .estimation import EstimationError, fit, initialize, likelihood_ratio_test, vuong_test
from .io import (
    ConfigError,
    ModelConfig,
    RunReport,
    build_report,
    fit_from_report,
    load_csv_dataset,
    parse_model_config,
    save_csv_dataset,
    synthetic_covariates,
    write_csv,
    write_json,
)
from .likelihood import LikelihoodError
from .model import Dataset, ModelError
from .simulation import McStudyConfig, _n_workers, estimator_qq_data, run_mc_study, simulate_dataset

log = logging.getLogger("zinbarma")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2


class NumericalFailure(RuntimeError):
    pass


def simulate_from_config(cfg: ModelConfig, n: int, seed: int) -> Dataset:
    if cfg.true_params is None:
        raise ConfigError("config has no 'true_params' to simulate from")
    cov_seed, series_seed = np.random.SeedSequence(seed).spawn(2)
    cov = synthetic_covariates(cfg.simulate.synthetic_covariates, n, cov_seed)
    return simulate_dataset(cfg.spec, cfg.true_params, n, np.random.default_rng(series_seed), cov)


def _columns_needed(cfg: ModelConfig):
    cols = [r.column for r in list(cfg.spec.w_covariates) + list(cfg.spec.m_covariates) if r.kind == "external"]
    return list(dict.fromkeys(cols))


def _load(path, cfg):
    return load_csv_dataset(path, "y", _columns_needed(cfg))


def _fit_one(data, cfg, method, init):
    start = cfg.true_params if init == "truth" else initialize(data, cfg.spec)
    if init == "truth" and start is None:
        raise ConfigError("--init truth needs 'true_params' in the config")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit(data, cfg.spec, method=method, init=start)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = parse_model_config(args.config)
    n = args.n or cfg.simulate.n
    seed = cfg.simulate.seed if args.seed is None else args.seed
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = simulate_from_config(cfg, n, seed)
    save_csv_dataset(args.out, data)
    print(f"wrote {n} rows ({data.zero_fraction:.4f} zeros) to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = parse_model_config(args.config)
    data = _load(args.data, cfg)
    res = _fit_one(data, cfg, args.method, args.init)
    gof = dg.gof_summary(res, data) if np.isfinite(res.loglik) else None
    report = build_report(res, data, cfg.source, gof, args.seed, timestamp=not args.no_timestamp)
    Path(args.report).write_text(report.to_json())
    table = args.table or str(Path(args.report).with_suffix(".csv"))
    write_csv(table, ["parameter", "estimate", "std_error", "z", "p_value"],
              [[r["parameter"], r["estimate"], r["std_error"], r["z"], r["p_value"]] for r in report.estimates])
    print(f"{args.method}: loglik {res.loglik:.6f}, converged={res.converged}, iterations={res.iterations}",
          file=sys.stderr)
    if not res.converged:
        raise NumericalFailure("fit did not converge; report written with converged=false")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    report = RunReport.from_json(Path(args.report).read_text())
    res = fit_from_report(report)
    cfg_cols = [r.column for r in list(res.spec.w_covariates) + list(res.spec.m_covariates) if r.kind == "external"]
    data = load_csv_dataset(args.data, "y", list(dict.fromkeys(cfg_cols)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    st = dg.fitted_states(res, data)
    rq = dg.randomized_quantile_residuals(res, data, seed=args.seed, randomize=not args.midpoint)
    pr = (data.y - st.Lambda) / np.sqrt(st.Psi)
    write_csv(out / "residuals.csv", ["t", "y", "Lambda", "Psi", "pearson", "quantile"],
              [[int(data.time[i]), int(data.y[i]), st.Lambda[i], st.Psi[i], pr[i], rq[i]] for i in range(data.n)])
    acf, pacf = dg.acf_pacf(rq, args.max_lag)
    band = 1.96 / np.sqrt(data.n)
    write_csv(out / "acf.csv", ["lag", "acf", "pacf", "band"],
              [[h, acf[h], pacf[h], band] for h in range(args.max_lag + 1)])
    fitted_df = sum(res.spec.orders[:2]) - len(res.spec.ar_w_fixed_zero) - len(res.spec.ma_w_fixed_zero)
    q, p = dg.ljung_box(rq, args.max_lag, fitted_df)
    srt = np.sort(rq)
    from scipy import stats

    theo = stats.norm.ppf((np.arange(1, data.n + 1) - 0.5) / data.n)
    write_csv(out / "qq.csv", ["theoretical", "sample"], [[a, b] for a, b in zip(theo, srt)])
    thresholds = [float(v) for v in args.thresholds.split(",")]
    table = dg.zero_classification_table(res, data, thresholds)
    write_csv(out / "sensitivity.csv", ["threshold", "sensitivity", "specificity"],
              [[r["threshold"], r["sensitivity"], r["specificity"]] for r in table])
    with warnings.catch_warnings(record=True):
        p0 = dg.excess_zero_probability(res, data)
    ks = stats.kstest(rq, "norm")
    summary = {
        "excess_zero_probability": p0,
        "ljung_box": {"statistic": q, "p_value": p, "max_lag": args.max_lag, "df": max(args.max_lag - fitted_df, 1)},
        "quantile_residual_ks": {"statistic": float(ks.statistic), "p_value": float(ks.pvalue)},
        "gof": dg.gof_summary(res, data).to_dict(),
        "zero_classification": table,
        "seed": args.seed,
        "randomized": not args.midpoint,
    }
    write_json(out / "summary.json", summary)
    print(f"Ljung-Box Q={q:.4f} p={p:.4f}; excess-zero probability {p0:.4f}", file=sys.stderr)
    return EXIT_OK


def _study_progress(n, done, total):
    if done % max(1, total // 10) == 0 or done == total:
        log.info("N=%d: %d/%d replicates", n, done, total)


def cmd_mc_study(args) -> int:
    cfg = parse_model_config(args.config)
    if cfg.true_params is None:
        raise ConfigError("mc-study needs 'true_params' in the config")
    sizes = tuple(int(s) for s in args.sizes.split(",")) if args.sizes else cfg.study.sizes
    study = McStudyConfig(
        spec=cfg.spec, true_params=cfg.true_params, sizes=sizes,
        reps=args.reps or cfg.study.reps, estimator=args.estimator or cfg.study.estimator,
        seed=cfg.study.seed if args.seed is None else args.seed, init=args.init or cfg.study.init,
    )
    results = run_mc_study(study, progress=_study_progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"config": cfg.source, "sizes": list(sizes), "reps": study.reps, "seed": study.seed,
            "estimator": study.estimator, "init": study.init, "results": {}}
    for n, by_method in results.items():
        for m, s in by_method.items():
            stem = f"{m}_N{n}"
            write_csv(out / f"summary_{stem}.csv", ["parameter", "true", "est", "se", "abs_bias", "ci_low", "ci_high"],
                      [[r["parameter"], r["true"], r["est"], r["se"], r["abs_bias"], r["ci_low"], r["ci_high"]]
                       for r in s.table()])
            write_csv(out / f"estimates_{stem}.csv", s.names, s.estimates.tolist())
            write_csv(out / f"std_errors_{stem}.csv", s.names, s.std_errors.tolist())
            entry = {"n_requested": s.n_requested, "n_failed": s.n_failed, "valid": s.valid,
                     "mean_abs_bias_nu": s.mean_abs_bias_nu}
            if s.n_used >= 20:
                try:
                    qq = estimator_qq_data(s.estimates, s.true, s.std_errors, s.names)
                    entry["ks_p_values"] = {q.name: q.ks_pvalue for q in qq}
                    rows = [[q.name, a, b] for q in qq for a, b in zip(q.theoretical, q.sample)]
                    write_csv(out / f"qq_{stem}.csv", ["parameter", "theoretical", "sample"], rows)
                except ModelError as exc:
                    entry["qq_error"] = str(exc)
            meta["results"][stem] = entry
            flag = "" if s.valid else "  [INVALID: too many failed replicates]"
            print(f"N={n} {m}: used {s.n_used}/{s.n_requested}, mean |bias| (nu) {s.mean_abs_bias_nu:.4f}{flag}",
                  file=sys.stderr)
    write_json(out / "study.json", meta)
    return EXIT_OK


def _nested(small, big) -> bool:
    a, b = small.spec.layout().names(), big.spec.layout().names()
    return set(a) < set(b) and small.spec.zero_inflated <= big.spec.zero_inflated


def _compare_job(job):
    data_path, cfg_path, method, init = job
    cfg = parse_model_config(cfg_path)
    data = _load(data_path, cfg)
    return cfg, data, _fit_one(data, cfg, method, init)


def cmd_compare(args) -> int:
    paths = [c for c in args.configs.split(",") if c]
    if not paths:
        raise ConfigError("--configs needs at least one config")
    jobs = [(args.data, c, args.method, "data") for c in paths]
    workers = min(_n_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_compare_job, jobs))
    else:
        outs = [_compare_job(j) for j in jobs]
    rows = []
    for path, (cfg, data, res) in zip(paths, outs):
        g = dg.gof_summary(res, data)
        rows.append([cfg.spec.name or path, g.n_params, g.loglik, g.aic, g.bic, g.mse, g.mad, g.pearson_chi2,
                     g.deviance, g.df, bool(res.converged)])
    write_csv(args.out, ["model", "p", "loglik", "aic", "bic", "mse", "mad", "pearson_chi2", "deviance", "df",
                         "converged"], rows)
    tests = []
    for i, (ci, di, ri) in enumerate(outs):
        for j, (cj, dj, rj) in enumerate(outs):
            if i == j:
                continue
            if _nested(ri, rj):
                try:
                    stat, df, p = likelihood_ratio_test(ri, rj)
                    tests.append(["lrt", rows[i][0], rows[j][0], stat, df, p])
                except EstimationError as exc:
                    log.warning("LRT %s vs %s skipped: %s", rows[i][0], rows[j][0], exc)
            wi = [n for n in ri.names if n.startswith("W:")]
            wj = [n for n in rj.names if n.startswith("W:")]
            if rj.spec.zero_inflated and not ri.spec.zero_inflated and wi == wj:
                z, p = vuong_test(rj, ri, di)
                tests.append(["vuong", rows[j][0], rows[i][0], z, None, p])
    tpath = Path(args.out).with_name(Path(args.out).stem + "_tests.csv")
    write_csv(tpath, ["test", "model_a", "model_b", "statistic", "df", "p_value"], tests)
    print(f"compared {len(rows)} models; {len(tests)} pairwise tests in {tpath}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which is reserved for numerical failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="zinbarma", description="Zero-inflated NB-ARMA count time series models.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a series from a config's true parameters")
    s.add_argument("--config", required=True, help="config path or bundled name (model1, model3, ...)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--n", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="fit a model to a CSV series")
    s.add_argument("--data", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--method", choices=["nr", "em"], default="em")
    s.add_argument("--init", choices=["data", "truth"], default="data")
    s.add_argument("--report", required=True)
    s.add_argument("--table", help="estimates CSV (default: report path with .csv)")
    s.add_argument("--seed", type=int, help="recorded in the report; fitting itself is deterministic")
    s.add_argument("--no-timestamp", action="store_true", help="leave the report's 'created' field empty")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("diagnose", help="residual and zero-inflation diagnostics for a saved fit")
    s.add_argument("--report", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0, help="seed for randomized quantile residuals")
    s.add_argument("--midpoint", action="store_true", help="use interval midpoints instead of randomization")
    s.add_argument("--max-lag", type=int, default=10)
    s.add_argument("--thresholds", default="0.4,0.5,0.6")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("mc-study", help="Monte Carlo parameter-recovery study")
    s.add_argument("--config", required=True)
    s.add_argument("--reps", type=int)
    s.add_argument("--sizes", help="comma-separated sample sizes")
    s.add_argument("--estimator", choices=["em", "nr", "both"])
    s.add_argument("--init", choices=["truth", "data"])
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mc_study)

    s = sub.add_parser("compare", help="fit several configs to one series and tabulate selection criteria")
    s.add_argument("--data", required=True)
    s.add_argument("--configs", required=True, help="comma-separated config paths or names")
    s.add_argument("--method", choices=["nr", "em"], default="em")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, help="recorded only; comparison is deterministic")
    s.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ModelError, ConfigError, FileNotFoundError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalFailure, EstimationError, LikelihoodError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
