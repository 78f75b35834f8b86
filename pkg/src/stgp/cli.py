"""Command-line entry point: ``stgp <subcommand> [options]``.

Exit codes: 0 success, 2 configuration, 3 input/IO, 4 numerical failure,
5 tolerance breach.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings

import numpy as np

from .errors import ConfigError, InputError, StgpError, ToleranceError
from .kernels import FIXED_DEFAULTS, Family

log = logging.getLogger("stgp")

KERNEL_CHOICES = ["exp", "matern32", "te2exp", "te2exp+matern", "pd", "dc-input"]


def _workers(args) -> int:
    if args.workers is not None:
        w = args.workers
    else:
        env = os.environ.get("STGP_WORKERS", "1")
        try:
            w = int(env)
        except ValueError:
            raise ConfigError(f"STGP_WORKERS must be an integer, got {env!r}") from None
    if w < 1:
        raise ConfigError("worker count must be >= 1")
    return w


def _parse_grid(text: str):
    """``5`` (points per component) or a JSON object ``{"name": n_or_list}``."""
    try:
        g = json.loads(text)
    except json.JSONDecodeError:
        raise ConfigError(f"bad --grid {text!r}: expected an integer or JSON object") from None
    if isinstance(g, bool) or not isinstance(g, (int, dict)):
        raise ConfigError("--grid must be an integer or a JSON object")
    if isinstance(g, int) and g < 1:
        raise ConfigError("--grid must be >= 1")
    return g


def _parse_pairs(items, what) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"{what} expects name=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _fixed(args, family: Family) -> dict:
    fixed = {}
    for k, v in _parse_pairs(args.fixed, "--fixed").items():
        if k not in FIXED_DEFAULTS.get(family, {}):
            raise ConfigError(f"{family.value} has no fixed constant {k!r}")
        num, _, den = v.partition("/")
        try:
            fixed[k] = float(num) / (float(den) if den else 1.0)
        except ValueError:
            raise ConfigError(f"--fixed {k}: not a number: {v!r}") from None
    return fixed


def _box(args) -> dict:
    out = {}
    for k, v in _parse_pairs(args.box, "--box").items():
        try:
            lo, hi = (float(x) for x in v.split(":"))
        except ValueError:
            raise ConfigError(f"--box {k}: expected lo:hi, got {v!r}") from None
        out[k] = (lo, hi)
    return out


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_field(path, ids, times, values, var=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", *ids] + ([f"{i}_var" for i in ids] if var is not None else []))
        for j, t in enumerate(times):
            row = [repr(float(t)), *(repr(float(v)) for v in values[:, j])]
            if var is not None:
                row += [repr(float(v)) for v in var[:, j]]
            w.writerow(row)


def _load(args):
    from .pipeline import PanelConfig, load_panel

    if not args.data or not args.locations:
        raise ConfigError("--data and --locations are required")
    cfg = PanelConfig(args.coords, args.unit, args.train, args.test or 0)
    return load_panel(args.data, args.locations, cfg)


# -- subcommands -------------------------------------------------------------


def cmd_fit(args) -> int:
    from .hyper import write_trace
    from .kalman import posterior
    from .pipeline import (
        FieldProblem, compute_fit, ensure_dir, fill_missing, fit_hyper, write_fit_report, write_jsonl,
    )

    family = Family(args.temporal_kernel)
    if family is Family.DC_INPUT:
        raise ConfigError("fit on panels does not take an input signal; use sysid-demo for dc-input")
    if args.spatial_kernel != "se":
        raise ConfigError("only the se spatial kernel is available")
    fixed = _fixed(args, family)
    box = _box(args)
    grid = _parse_grid(args.grid)
    workers = _workers(args)
    out = ensure_dir(args.out)
    panel = _load(args)
    if panel.missing[:, : panel.n_train].any():
        if not args.fill_first:
            raise InputError("training block has missing values; rerun with --fill-first")
        panel, diags = fill_missing(panel, family, fixed, grid=min(grid, 3) if isinstance(grid, int) else 3,
                                    workers=workers)
        write_jsonl(out / "fill_diagnostics.jsonl", diags)

    sigma2 = None
    if args.sigma2 is not None and args.sigma2 != "mlm":
        try:
            sigma2 = float(args.sigma2)
        except ValueError:
            raise ConfigError(f"--sigma2 must be a number or 'mlm', got {args.sigma2!r}") from None
        if not sigma2 > 0:
            raise ConfigError("--sigma2 must be positive")
    mlm_result = None
    if args.method != "mlm" and sigma2 is None:
        if args.sigma2 != "mlm":
            raise ConfigError(f"--method {args.method} needs --sigma2 VALUE or --sigma2 mlm")
        pre = FieldProblem(panel.train, panel.locations, family, fixed, panel.Ts, "mlm", box=box)
        mlm_result = fit_hyper(pre, grid, args.starts, workers)
        sigma2 = float(pre.unpack(mlm_result.theta)[2])
        log.info("sigma2 from MLM: %g", sigma2)
    if args.method != "mlm":
        box.pop("sigma2", None)
    prob = FieldProblem(panel.train, panel.locations, family, fixed, panel.Ts, args.method, sigma2, box=box)
    res = fit_hyper(prob, grid, args.starts, workers)
    spec, sspec, s2 = prob.unpack(res.theta)
    rep = prob.report(res.theta)
    model = prob.model(res.theta)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        post = posterior(model, prob.transformed(model), horizon=panel.n_test)

    result = {
        "method": args.method,
        "cost": res.value,
        "temporal_kernel": spec.to_dict(),
        "spatial_kernel": {"family": "se", "alpha_se": sspec.alpha_se if sspec else None},
        "sigma2": s2,
        "sigma2_source": "estimated" if args.method == "mlm" and args.sigma2 is None else ("mlm" if mlm_result else "given"),
        "logdet": rep.logdet,
        "quad": rep.quad,
        "S": None if np.isnan(rep.S) else rep.S,
        "delta": None if np.isnan(rep.delta) else rep.delta,
        "n_floored": rep.n_floored,
        "starts": [int(i) for i in res.starts],
    }
    train_times = panel.times[: panel.n_train]
    test_times = panel.times[panel.n_train :]
    _write_field(out / "smoothed.csv", panel.ids, train_times, post.smoothed, post.field_var[:, : panel.n_train])
    _write_field(out / "predicted.csv", panel.ids, test_times, post.predicted, post.field_var[:, panel.n_train :])
    if panel.n_test:
        fr = compute_fit(post.predicted, panel.test)
        write_fit_report(out / "fit_report.csv", fr)
        result["avg_fit"] = fr.avg_fit
    _write_json(out / "hyperparams.json", result)
    if args.trace:
        write_trace(out / "trace.csv", res)
        if mlm_result is not None:
            write_trace(out / "trace_mlm.csv", mlm_result)
    print(json.dumps({"cost": res.value, "avg_fit": result.get("avg_fit")}))
    return 0


def cmd_fill(args) -> int:
    from .pipeline import ensure_dir, fill_missing, write_jsonl, write_panel

    family = Family(args.temporal_kernel)
    if family is Family.DC_INPUT:
        raise ConfigError("dc-input cannot be used for filling")
    fixed = _fixed(args, family)
    grid = _parse_grid(args.grid)
    out = ensure_dir(args.out)
    panel = _load(args)
    filled, diags = fill_missing(panel, family, fixed, grid=grid, n_starts=args.starts, workers=_workers(args))
    write_panel(out / "filled.csv", filled)
    write_jsonl(out / "fill_diagnostics.jsonl", diags)
    print(json.dumps({"locations_filled": len(diags), "cells_filled": int(sum(d["n_filled"] for d in diags))}))
    return 0


def cmd_oracle_check(args) -> int:
    from .oracle import TOLERANCES, equivalence_suite

    worst = equivalence_suite(args.instances, args.seed)
    bad = []
    for name, err in worst.items():
        ok = err <= TOLERANCES[name]
        print(f"{name:16s} max_rel_err={err:.3e} tol={TOLERANCES[name]:.0e} {'ok' if ok else 'FAIL'}")
        if not ok:
            bad.append(name)
    if bad:
        raise ToleranceError(f"tolerance breached for {', '.join(bad)}")
    return 0


def _parse_sizes(text: str):
    sizes = []
    for item in text.split(","):
        try:
            n, m = item.split(":")
            sizes.append((int(n), int(m)))
        except ValueError:
            raise ConfigError(f"bad size {item!r}; expected N:M") from None
    return sizes


def cmd_bench(args) -> int:
    from .bench import run_bench
    from .pipeline import ensure_dir

    rows = run_bench(_parse_sizes(args.sizes), args.repeats, args.naive_max_state)
    out = ensure_dir(args.out)
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"N={r['N']:5d} M={r['M']:5d} filter={r['t_filter']:.4f}s structured={r['t_structured']:.4f}s "
              f"naive={r['t_naive']:.4f}s speedup={r['speedup']:.1f}")
    return 0


def cmd_sysid_demo(args) -> int:
    from .pipeline import ensure_dir
    from .sysid import run_experiment

    out = ensure_dir(args.out)
    grid = _parse_grid(args.grid)
    workers = _workers(args)
    summary = []
    for k in range(args.seeds):
        seed = args.seed + k
        r = run_experiment(seed, args.M, args.N, args.n_b, args.snr, grid, args.starts, workers)
        st, tb, data = r["spatial_temporal"], r["temporal"], r["data"]
        _write_json(out / f"ensemble_seed{seed}.json", r["ensemble"].describe())
        with open(out / f"panel_seed{seed}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "u", *(f"sys{i + 1}" for i in range(args.M))])
            for j in range(args.N):
                w.writerow([j + 1, repr(float(data.u[j + 1])), *(repr(float(v)) for v in data.Y[:, j])])
        with open(out / f"fits_seed{seed}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["system", "fit_spatial_temporal", "fit_temporal"])
            for i, (a, b) in enumerate(zip(st.fits, tb.fits), 1):
                w.writerow([i, repr(float(a)), repr(float(b))])
        summary.append({"seed": seed, "spatial_temporal": st.avg_fit, "temporal": tb.avg_fit,
                        "sigma2": data.sigma2, "max_tail_energy": float(data.tail_energy.max()),
                        "params": st.params[0]})
        print(f"seed {seed}: spatial-temporal {st.avg_fit:.2f}  temporal {tb.avg_fit:.2f}", flush=True)
    with open(out / "fit_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "avg_fit_spatial_temporal", "avg_fit_temporal"])
        for s in summary:
            w.writerow([s["seed"], repr(s["spatial_temporal"]), repr(s["temporal"])])
    _write_json(out / "summary.json", summary)
    st_mean = float(np.mean([s["spatial_temporal"] for s in summary]))
    tb_mean = float(np.mean([s["temporal"] for s in summary]))
    print(f"mean: spatial-temporal {st_mean:.2f}  temporal {tb_mean:.2f}")
    return 0


def cmd_make_fixture(args) -> int:
    from .pipeline import ensure_dir, synthetic_panel, write_locations, write_panel

    out = ensure_dir(args.out)
    panel = synthetic_panel(args.M, args.N, args.test, args.seed, args.missing)
    write_panel(out / "data.csv", panel)
    write_locations(out / "locations.csv", panel)
    print(json.dumps({"data": str(out / "data.csv"), "locations": str(out / "locations.csv")}))
    return 0


# -- parser --------------------------------------------------------------------


def _common(p, data=True, kernel=True):
    if data:
        p.add_argument("--data", help="panel CSV: header of location IDs, first column time")
        p.add_argument("--locations", help="locations CSV: ID then coordinates")
        p.add_argument("--coords", choices=["raw", "ecef"], default="raw",
                       help="raw coordinates, or ECEF metres divided by --unit")
        p.add_argument("--unit", type=float, default=1e4, help="ECEF unit in metres (default 10 km)")
        p.add_argument("--train", type=int, help="number of training times N")
        p.add_argument("--test", type=int, default=0, help="number of test times N_T")
    if kernel:
        p.add_argument("--temporal-kernel", choices=KERNEL_CHOICES, default="te2exp")
        p.add_argument("--fixed", action="append", metavar="NAME=VALUE",
                       help="override a fixed kernel constant, e.g. f=1/12 or sigma=5000")
        p.add_argument("--grid", default="5", help="points per component or JSON {name: n or [values]}")
        p.add_argument("--starts", type=int, default=5, help="local searches from the best grid points")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, help="worker threads (default: $STGP_WORKERS or 1)")
    p.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stgp", description="Spatial-temporal GP regression via decoupled Kalman filtering")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate hyper-parameters, smooth and predict a panel")
    _common(p)
    p.add_argument("--spatial-kernel", default="se", choices=["se"])
    p.add_argument("--method", choices=["mlm", "gcv", "sure"], default="mlm")
    p.add_argument("--sigma2", help="fixed noise variance, or 'mlm' to take it from an MLM fit first")
    p.add_argument("--box", action="append", metavar="NAME=LO:HI", help="override a search box")
    p.add_argument("--fill-first", action="store_true", help="fill missing training values per location first")
    p.add_argument("--trace", action="store_true", help="write the optimizer trace CSV")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("fill", help="fill missing values location by location")
    _common(p)
    p.set_defaults(func=cmd_fill, grid="3", starts=2)

    p = sub.add_parser("oracle-check", help="compare the structured path with the dense oracle")
    p.add_argument("--instances", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("bench", help="time structured against naive cost evaluation")
    p.add_argument("--sizes", default="500:128,500:256,500:512,1000:256,200:128", help="comma list of N:M")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--naive-max-state", type=int, default=512, help="skip the naive filter above this Mr")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sysid-demo", help="spatially distributed FIR identification experiment")
    p.add_argument("--M", type=int, default=50)
    p.add_argument("--N", type=int, default=400)
    p.add_argument("--n-b", type=int, default=125)
    p.add_argument("--snr", type=float, default=1.0)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--grid", default="3")
    p.add_argument("--starts", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_sysid_demo)

    p = sub.add_parser("make-fixture", help="write a small synthetic panel")
    p.add_argument("--M", type=int, default=4)
    p.add_argument("--N", type=int, default=50)
    p.add_argument("--test", type=int, default=10)
    p.add_argument("--missing", type=float, default=0.0, help="fraction of training cells to blank")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="fixture")
    p.set_defaults(func=cmd_make_fixture)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except StgpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
