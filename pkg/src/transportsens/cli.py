"""Command-line front end.

Subcommands: estimate, sensitivity, benchmark, contour, wald, simulate,
power, oracle. Every report embeds the configuration that produced it (minus
execution-only options such as --threads, which must not change results) and
the package version. Exit codes: 0 clean, 2 completed with warnings, 1 error.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

import numpy as np

import transportsens
from transportsens import reports
from transportsens.bootstrap import (
    BootstrapPlan,
    EstimatorSpec,
    adjusted_ci_grid,
    bootstrap_estimate,
    minimal_bias_threshold,
)
from transportsens.data import ColumnSchema, PooledDataset, load_csv, max_abs_smd, write_csv
from transportsens.errors import TransportsensError
from transportsens.estimators import (
    estimate_cov_w_tau,
    estimate_pate,
    estimate_pate_single_study,
    potential_outcome_variances,
)
from transportsens.oracle import (
    bundled_population_names,
    load_population,
    verify_bias_decomposition,
    verify_identification,
)
from transportsens.rng import stream_key
from transportsens.sensitivity import (
    benchmark_modifiers,
    contour_grid,
    default_r2_axis,
    default_rho_axis,
    sigma2_tau_bound,
    summarize_sensitivity,
    with_significance_border,
)
from transportsens.simulation import SimConfig, generate_replicate, run_power_study
from transportsens.wald import WaldInput, wald_test
from transportsens.weights import (
    estimate_weights,
    leave_one_out_weights,
    write_weights_csv,
)

_EXEC_ONLY = {"func", "threads", "out", "command"}


def _config_payload(args: argparse.Namespace) -> dict:
    cfg = {}
    for key, value in sorted(vars(args).items()):
        if key in _EXEC_ONLY or callable(value):
            continue
        if isinstance(value, Path):
            value = str(value)
        cfg[key] = value
    return cfg


def _resolve_seed(args: argparse.Namespace) -> int:
    if args.seed is None:
        args.seed = int.from_bytes(os.urandom(8), "little")
        print(f"seed: {args.seed} (drawn; pass --seed to reproduce)")
    return args.seed


def _outdir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _schema_from_args(args: argparse.Namespace) -> ColumnSchema:
    if args.schema:
        return ColumnSchema.from_json(args.schema)
    if not args.modifiers:
        raise TransportsensError("provide --schema or --modifiers/--adjusters")
    modifiers = tuple(args.modifiers.split(","))
    adjusters = tuple(args.adjusters.split(",")) if args.adjusters else modifiers
    return ColumnSchema(modifiers=modifiers, adjusters=adjusters)


def _load_data(args: argparse.Namespace) -> PooledDataset:
    return load_csv(args.data, _schema_from_args(args))


def _gamma_method(args: argparse.Namespace) -> str:
    return "constant" if args.randomized else args.gamma_method


def _fit_pooled(args: argparse.Namespace, data: PooledDataset):
    ws = estimate_weights(
        data, w_method=args.w_method, gamma_method=_gamma_method(args), ridge=args.ridge
    )
    result = estimate_pate(data, ws)
    route = "pooled" if args.randomized else "hajek"
    v1, v0, moments = potential_outcome_variances(data, ws, route=route)
    if moments is None:
        _, _, moments = potential_outcome_variances(data, ws, route="hajek")
    cov = estimate_cov_w_tau(data, ws, moments, tau_hat=result.tau_hat)
    return ws, result, v1, v0, moments, cov


def _warnings_from(ws) -> list[str]:
    return [
        f"{name}: {diag.condition_flag}"
        for name, diag in ws.method_meta.items()
        if diag.condition_flag
    ]


# -- subcommands ---------------------------------------------------------------


def cmd_estimate(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    out = _outdir(args)
    data = _load_data(args)
    warnings: list[str] = []

    if args.single_study is not None:
        result, ws = estimate_pate_single_study(
            data, args.single_study, w_method=args.w_method,
            gamma_method=_gamma_method(args), ridge=args.ridge,
        )
        spec = EstimatorSpec(
            kind="single_study", study=args.single_study,
            w_method=args.w_method, gamma_method=_gamma_method(args),
            ridge=args.ridge,
        )
        payload = {
            "tau_hat": result.tau_hat,
            "study": args.single_study,
            "n1": result.n_used.n_treated,
            "n0": result.n_used.n_control,
        }
    else:
        ws, result, v1, v0, moments, cov = _fit_pooled(args, data)
        spec = EstimatorSpec(
            kind="pooled", w_method=args.w_method,
            gamma_method=_gamma_method(args), ridge=args.ridge,
        )
        payload = {
            "tau_hat": result.tau_hat,
            "mu1": moments.mu[1],
            "mu0": moments.mu[0],
            "var_y1": v1,
            "var_y0": v0,
            "cov_w_tau": cov,
            "n1": result.n_used.n_treated,
            "n0": result.n_used.n_control,
        }
    warnings += _warnings_from(ws)

    if args.boot > 0:
        plan = BootstrapPlan(replicates=args.boot, seed=seed)
        boot = bootstrap_estimate(data, plan, spec, alpha=args.alpha, threads=args.threads)
        payload["ci"] = {"alpha": args.alpha, "lower": boot.ci.lower, "upper": boot.ci.upper}
        payload["sd"] = boot.sd
        payload["bootstrap"] = {"replicates": boot.n_requested, "dropped": boot.n_dropped}
        if boot.n_dropped:
            warnings.append(f"bootstrap dropped {boot.n_dropped} replicates")
        if args.dump_replicates:
            with Path(args.dump_replicates).open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["tau_hat", "var_w"])
                for t, v in zip(boot.estimates, boot.var_w):
                    writer.writerow([repr(float(t)), repr(float(v))])

    payload["weight_ref"] = ws.ref
    payload["warnings"] = warnings
    payload["config"] = _config_payload(args)
    payload["version"] = transportsens.__version__
    reports.write_json(payload, out / "estimate.json")
    if args.dump_weights:
        write_weights_csv(ws, args.dump_weights)
    print(f"tau_hat: {payload['tau_hat']}")
    if "ci" in payload:
        print(f"{100 * (1 - args.alpha):g}% CI: ({payload['ci']['lower']}, {payload['ci']['upper']})")
    print(f"report: {out / 'estimate.json'}")
    return 2 if warnings else 0


def _sensitivity_core(args: argparse.Namespace, want_contour: bool, want_benchmark: bool) -> int:
    seed = _resolve_seed(args)
    out = _outdir(args)
    data = _load_data(args)
    ws, result, v1, v0, moments, cov = _fit_pooled(args, data)
    warnings = _warnings_from(ws)
    tau_hat = result.tau_hat
    var_w = float(np.var(ws.w, ddof=1))
    sigma2 = sigma2_tau_bound(v1, v0, mode=args.sigma2_mode)
    q_list = tuple(float(q) for q in args.q.split(","))

    r2_axis = default_r2_axis(step=args.grid_step)
    rho_axis = default_rho_axis(step=args.grid_step)
    grid = contour_grid(tau_hat, var_w, sigma2, r2_axis, rho_axis)

    plan = BootstrapPlan(replicates=args.boot, seed=seed)
    spec = EstimatorSpec(
        kind="pooled", w_method=args.w_method,
        gamma_method=_gamma_method(args), ridge=args.ridge,
    )
    boot = bootstrap_estimate(data, plan, spec, alpha=args.alpha, threads=args.threads)
    if boot.n_dropped:
        warnings.append(f"bootstrap dropped {boot.n_dropped} replicates")
    adjusted = adjusted_ci_grid(
        boot.estimates, boot.var_w, sigma2, r2_axis, rho_axis, args.alpha, tau_hat
    )
    threshold, status = minimal_bias_threshold(adjusted, var_w, sigma2)
    if status != "ok":
        warnings.append(f"minimal bias threshold: {status}")
    summary = summarize_sensitivity(
        tau_hat, sigma2, cov, var_w, q_list,
        threshold=threshold if status == "ok" else None,
    )
    rv_alpha = summary.rv_alpha if summary.rv_alpha is not None else 0.0
    grid = with_significance_border(grid, adjusted.border)

    payload = {
        "tau_hat": tau_hat,
        "var_w": var_w,
        "sigma2_tau_max": sigma2,
        "sigma_tau": math.sqrt(sigma2),
        "cov_w_tau": cov,
        "rho_bounds": list(summary.rho_bounds),
        "rv": {repr(q): val for q, val in summary.rv.items()},
        "rv_alpha": rv_alpha,
        "minimal_bias_threshold": threshold,
        "threshold_status": status,
        "ci": {"alpha": args.alpha, "lower": boot.ci.lower, "upper": boot.ci.upper},
        "sd": boot.sd,
        "warnings": warnings,
        "config": _config_payload(args),
        "version": transportsens.__version__,
    }

    if want_benchmark:
        loo = {
            j: leave_one_out_weights(data, j, method=args.w_method, ridge=args.ridge)[0]
            for j in data.modifier_names
        }
        rows = benchmark_modifiers(
            data, ws, tau_hat, sigma2, loo,
            threshold=threshold if status == "ok" else None,
        )
        payload["benchmark"] = reports.benchmark_rows_payload(rows)
        reports.write_benchmark_csv(rows, out / "benchmark.csv")

    if want_contour:
        reports.write_contour_csv(grid, out / "contour.csv", adjusted)
        reports.render_contour_svg(
            grid, out / "contour.svg", title="Bias needed to alter the estimate"
        )

    name = "sensitivity.json" if want_benchmark and want_contour else (
        "benchmark.json" if want_benchmark else "contour.json"
    )
    reports.write_json(payload, out / name)
    print(f"tau_hat: {tau_hat}")
    print(f"sigma_tau (bound): {math.sqrt(sigma2)}")
    print(f"rho bounds: {summary.rho_bounds}")
    for q, val in summary.rv.items():
        print(f"RV(q={q:g}): {val:.4f}")
    print(f"RV(alpha={args.alpha:g}): {rv_alpha:.4f}  [threshold {threshold:.6g}, {status}]")
    print(f"report: {out / name}")
    return 2 if warnings else 0


def cmd_sensitivity(args: argparse.Namespace) -> int:
    return _sensitivity_core(args, want_contour=True, want_benchmark=True)


def cmd_contour(args: argparse.Namespace) -> int:
    return _sensitivity_core(args, want_contour=True, want_benchmark=False)


def cmd_benchmark(args: argparse.Namespace) -> int:
    return _sensitivity_core(args, want_contour=False, want_benchmark=True)


def cmd_wald(args: argparse.Namespace) -> int:
    out = _outdir(args)
    if args.estimates:
        estimates = [float(x) for x in args.estimates.split(",")]
        sds = [float(x) for x in args.sds.split(",")]
        used = list(range(1, len(estimates) + 1))
    else:
        seed = _resolve_seed(args)
        data = _load_data(args)
        smd = max_abs_smd(data)
        estimates, sds, used = [], [], []
        for s in data.study_ids:
            size = data.study_sizes[s]
            if size < args.min_n or smd[s] > args.max_smd:
                continue
            res, _ = estimate_pate_single_study(
                data, s, w_method=args.w_method,
                gamma_method=_gamma_method(args), ridge=args.ridge,
            )
            plan = BootstrapPlan(replicates=args.boot, seed=stream_key(seed, "wald", s))
            boot = bootstrap_estimate(
                data, plan,
                EstimatorSpec(kind="single_study", study=s,
                              w_method=args.w_method,
                              gamma_method=_gamma_method(args), ridge=args.ridge),
                alpha=args.alpha, threads=args.threads,
            )
            estimates.append(res.tau_hat)
            sds.append(boot.sd)
            used.append(s)
        if len(estimates) < 2:
            raise TransportsensError(
                "fewer than two studies pass the eligibility screen"
            )
    res = wald_test(WaldInput(np.array(estimates), np.array(sds)))
    payload = {
        "statistic": res.statistic,
        "df": res.df,
        "p_value": res.p_value,
        "estimates": estimates,
        "sds": sds,
        "studies": used,
        "alpha_guidance": [0.05, 0.1, 0.15],
        "config": _config_payload(args),
        "version": transportsens.__version__,
    }
    reports.write_json(payload, out / "wald.json")
    print(f"statistic: {res.statistic:.4f}  df: {res.df}  p: {res.p_value:.4f}")
    print(f"report: {out / 'wald.json'}")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    out = _outdir(args)
    cfg = SimConfig(n=args.n, k=args.k, seed=seed)
    rep = generate_replicate(cfg, args.rep)
    write_csv(rep.dataset, out / "simulated.csv")
    reports.write_json(
        {
            "truth": rep.truth,
            "study_sizes": {str(k): v for k, v in rep.dataset.study_sizes.items()},
            "config": _config_payload(args),
            "version": transportsens.__version__,
        },
        out / "simulated.json",
    )
    print(f"dataset: {out / 'simulated.csv'} (exact effect {rep.truth:.4f})")
    return 0


def cmd_power(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    out = _outdir(args)
    ns = [int(x) for x in args.n.split(",")]
    ks = [float(x) for x in args.k.split(",")]
    alphas = [float(x) for x in args.alpha_levels.split(",")]
    cells = run_power_study(
        ns, ks, alphas, replications=args.reps, boot_b=args.boot,
        seed=seed, threads=args.threads,
    )
    path = out / "power.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "k", "alpha", "rejection_rate", "replicates", "failures"])
        for cell in cells:
            writer.writerow(
                [cell.n, f"{cell.k:g}", f"{cell.alpha:g}",
                 repr(float(cell.rejection_rate)), cell.replicates, cell.failures]
            )
    for cell in cells:
        print(
            f"n={cell.n} k={cell.k:g} alpha={cell.alpha:g}: "
            f"rate={cell.rejection_rate:.3f} ({cell.failures} failures)"
        )
    print(f"table: {path}")
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    out = _outdir(args)
    names = (
        [args.population]
        if args.population
        else bundled_population_names()
    )
    rows = []
    failed = False
    for name in names:
        pop = load_population(name)
        try:
            report = verify_bias_decomposition(pop)
            ident = verify_identification(pop)
            consistent = abs(report.identification_gap - report.exact_bias) <= 1e-12 * max(
                1.0, abs(report.exact_bias)
            )
            ok = consistent
        except TransportsensError as exc:
            rows.append({"population": pop.name, "ok": False, "error": str(exc)})
            print(f"[FAIL] {pop.name}: {exc}")
            failed = True
            continue
        rows.append(
            {
                "population": pop.name,
                "ok": ok,
                "exact_pate": report.exact_pate,
                "exact_bias": report.exact_bias,
                "cov_eps_tau": report.cov_eps_tau,
                "identification_holds": ident.holds,
                "identification_gap": ident.gap,
                "r2_eps": report.r2_eps,
                "rho_eps_tau": report.rho_eps_tau,
                "sigma2_tau": report.sigma2_tau,
            }
        )
        status = "PASS" if ok else "FAIL"
        failed = failed or not ok
        print(
            f"[{status}] {pop.name}: pate={report.exact_pate:.6f} "
            f"bias={report.exact_bias:.6f} identification "
            f"{'holds' if ident.holds else f'gap={ident.gap:.6f}'}"
        )
    reports.write_json(
        {"populations": rows, "config": _config_payload(args),
         "version": transportsens.__version__},
        out / "oracle.json",
    )
    return 1 if failed else 0


# -- parser --------------------------------------------------------------------


def _add_data_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="pooled CSV file")
    p.add_argument("--schema", help="JSON file with column roles")
    p.add_argument("--modifiers", help="comma-separated effect modifiers")
    p.add_argument("--adjusters", help="comma-separated adjustment covariates")


def _add_fit_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--w-method", default="entropy_balancing",
                   choices=("entropy_balancing", "logistic"))
    p.add_argument("--gamma-method", default="logistic_per_study",
                   choices=("logistic_per_study", "constant"))
    p.add_argument("--randomized", action="store_true",
                   help="all studies randomized: constant gamma, pooled variances")
    p.add_argument("--ridge", type=float, default=0.0)


def _add_common(p: argparse.ArgumentParser, boot_default: int = 1000) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--boot", type=int, default=boot_default)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default=".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transportsens",
        description="Generalized treatment-effect estimation with sensitivity analysis",
    )
    parser.add_argument("--version", action="version", version=transportsens.__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="pooled or single-study weighted estimate")
    _add_data_opts(p)
    _add_fit_opts(p)
    _add_common(p)
    p.add_argument("--single-study", type=int, default=None)
    p.add_argument("--dump-weights", default=None)
    p.add_argument("--dump-replicates", default=None)
    p.set_defaults(func=cmd_estimate)

    for name, fn, hlp in (
        ("sensitivity", cmd_sensitivity, "full sensitivity workflow"),
        ("contour", cmd_contour, "bias contour grid, CIs, and SVG"),
        ("benchmark", cmd_benchmark, "leave-one-modifier-out benchmarking"),
    ):
        p = sub.add_parser(name, help=hlp)
        _add_data_opts(p)
        _add_fit_opts(p)
        _add_common(p)
        p.add_argument("--sigma2-mode", default="conservative",
                       choices=("conservative", "sharp"))
        p.add_argument("--q", default="1.0", help="comma-separated q values for RV")
        p.add_argument("--grid-step", type=float, default=0.01)
        p.set_defaults(func=fn)

    p = sub.add_parser("wald", help="divergence test across per-study estimates")
    p.add_argument("--estimates", help="comma-separated estimates (skip estimation)")
    p.add_argument("--sds", help="comma-separated standard deviations")
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--modifiers")
    p.add_argument("--adjusters")
    _add_fit_opts(p)
    _add_common(p)
    p.add_argument("--min-n", type=int, default=0)
    p.add_argument("--max-smd", type=float, default=math.inf)
    p.set_defaults(func=cmd_wald)

    p = sub.add_parser("simulate", help="draw one synthetic pooled dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--rep", type=int, default=0)
    _add_common(p, boot_default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("power", help="rejection-rate study of the divergence test")
    p.add_argument("--n", default="500,1000,2000")
    p.add_argument("--k", default="1,1.5")
    p.add_argument("--alpha-levels", default="0.05,0.1,0.15")
    p.add_argument("--reps", type=int, default=1000)
    _add_common(p, boot_default=1000)
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("oracle", help="exact verification on discrete populations")
    p.add_argument("--suite", default="default")
    p.add_argument("--population", default=None, help="path to a population JSON")
    _add_common(p, boot_default=0)
    p.set_defaults(func=cmd_oracle)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TransportsensError, OSError) as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
