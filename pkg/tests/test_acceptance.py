"""Acceptance criteria 1-8, one printed PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they are
also collected in the terminal summary.
"""

import math
import warnings

import numpy as np
import pytest

from conftest import ACCEPTANCE
from stgp.bench import time_case
from stgp.hyper import cost_pass, finite_diff_check, gcv_sure_costs
from stgp.kalman import filter_pass, posterior
from stgp.kernels import SpatialKernelSpec, TemporalKernelSpec, eval_spatial_gram, eval_temporal, eval_temporal_gram
from stgp.oracle import (
    ALL_FAMILIES,
    TOLERANCES,
    DenseProblem,
    compare_instance,
    dense_posterior,
    equivalence_suite,
    random_instance,
    random_spec,
)
from stgp.pipeline import compute_fit, fill_location, fill_missing, synthetic_panel
from stgp.realize import realize, realize_exponential, spectral_radius
from stgp.stmodel import build_transformed_model, decompose_spatial, transform_outputs
from stgp.sysid import run_experiment


def record(k, ok, detail):
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[k] = line
    print(line)
    assert ok, line


def test_c1_oracle_equivalence():
    worst = equivalence_suite(n_instances=30, seed=0)
    keys = [k for k in worst if not k.startswith("fd_")]
    bad = {k: v for k, v in worst.items() if k in keys and v > TOLERANCES[k]}
    detail = "30 instances, worst " + ", ".join(f"{k}={worst[k]:.1e}" for k in keys)
    record(1, not bad, detail)


def test_c2_realization_fidelity():
    rng = np.random.default_rng(2)
    stationary = [f for f in ALL_FAMILIES if f != "dc-input"]
    worst, radius = 0.0, 0.0
    tau = np.arange(31.0)
    for k in range(25):
        spec = random_spec(rng, stationary[k % len(stationary)])
        real = realize(spec)
        ref = eval_temporal(spec, tau)
        got = real.lag_covariance(31)
        worst = max(worst, float(np.max(np.abs(got - ref)) / np.max(np.abs(ref))))
        radius = max(radius, spectral_radius(real.F))
    record(2, worst <= 1e-6 and radius < 1, f"25 draws, lags 0..30, worst rel err {worst:.1e}, max |eig F| {radius:.4f}")


def test_c3_sensitivity_finite_differences():
    rng = np.random.default_rng(3)
    worst = 0.0
    for k in range(24):
        inst = random_instance(rng, ALL_FAMILIES[k % len(ALL_FAMILIES)])
        Ks = eval_spatial_gram(SpatialKernelSpec(inst.alpha_se), inst.locations)
        m = build_transformed_model(realize(inst.spec), Ks, inst.sigma2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fd = finite_diff_check(m, transform_outputs(m, inst.Y))
        worst = max(worst, fd["rel_err_delta"], fd["rel_err_S"])
    record(3, worst <= 1e-4, f"24 instances, worst relative derivative error {worst:.1e}")


def test_c4_scalar_hand_checks():
    m = build_transformed_model(realize_exponential(1.0, math.log(2)), [[1.0]], 1.0)
    L = [[1.0]]
    fr = filter_pass(m, L)
    gcv, _ = gcv_sure_costs(m, L)
    post = posterior(m, L, horizon=1)
    got = {
        "E1": fr.innov_var[0, 0],
        "logdet": gcv.logdet,
        "quad": gcv.quad,
        "delta": gcv.delta,
        "S": gcv.S,
        "prediction": post.predicted[0, 0],
    }
    want = {"E1": 2.0, "logdet": math.log(2), "quad": 0.5, "delta": 0.5, "S": 0.25, "prediction": 0.25}
    err = max(abs(got[k] - want[k]) for k in want)
    record(4, err <= 1e-12, f"max abs error {err:.1e} over " + ", ".join(want))


@pytest.mark.slow
def test_c5_complexity_scaling():
    m128 = time_case(500, 128, repeats=5, naive=False)
    m256 = time_case(500, 256, repeats=5, naive=False)
    n1000 = time_case(1000, 256, repeats=3, naive=False)
    sp = time_case(200, 128, repeats=3, naive=True)
    r_m = m256.t_filter / m128.t_filter
    r_n = n1000.t_structured / m256.t_structured
    ok = r_m <= 3.0 and r_n <= 2.5 and sp.speedup >= 5.0
    record(5, ok, f"M doubling x{r_m:.2f} (<=3), N doubling x{r_n:.2f} (<=2.5), speedup x{sp.speedup:.1f} (>=5)")


@pytest.mark.slow
def test_c6_sysid_ordering():
    fits = []
    for seed in range(5):
        r = run_experiment(seed, M=50, N=400, n_b=125, snr=1.0)
        fits.append((r["spatial_temporal"].avg_fit, r["temporal"].avg_fit))
    st_mean, tb_mean = np.mean(fits, axis=0)
    gap = st_mean - tb_mean
    record(6, gap >= 20, f"5 seeds, mean fit {st_mean:.2f} vs baseline {tb_mean:.2f}, gap {gap:.2f} (>=20)")


def test_c7_weather_tables_substituted():
    # external station data is not available; the fill path is checked against the dense oracle instead
    y = np.sin(np.arange(24.0) / 5.0) + 0.1 * np.cos(np.arange(24.0))
    y[[3, 10, 11, 17]] = np.nan
    filled, diag = fill_location(y, "exp")
    p = diag["params"]
    spec = TemporalKernelSpec("exp", {"c": p["c"], "sigma": p["sigma"]})
    obs = ~np.isnan(y)
    t = np.arange(1, y.size + 1.0)
    idx = np.concatenate([np.flatnonzero(obs), np.flatnonzero(~obs)])
    Kt = eval_temporal_gram(spec, t[idx])
    mean, _ = dense_posterior(DenseProblem.from_panel(Kt, np.eye(1), p["sigma2"], y[obs][None]), int((~obs).sum()))
    err = float(np.max(np.abs(filled[~obs] - mean[0, obs.sum():])))
    ok = diag["method"] == "smoother" and err <= 1e-8
    record(7, ok, f"SUBSTITUTED (weather tables not reproducible offline); fill vs dense oracle max err {err:.1e}")


def test_c8_property_checks():
    rng = np.random.default_rng(8)
    checks = {}
    # kernel symmetry / PSD and transform orthogonality
    worst_sym = worst_psd = worst_orth = 0.0
    for _ in range(20):
        M = int(rng.integers(1, 30))
        Ks = eval_spatial_gram(SpatialKernelSpec(float(rng.uniform(0.1, 10))), rng.normal(size=(M, 2)))
        Kt = eval_temporal_gram(random_spec(rng, "te2exp+matern"), np.arange(1, 20.0))
        for K in (Ks, Kt):
            worst_sym = max(worst_sym, float(np.max(np.abs(K - K.T))))
            worst_psd = max(worst_psd, float(-np.linalg.eigvalsh(K).min() / np.trace(K)))
        Lam, _ = decompose_spatial(Ks)
        worst_orth = max(worst_orth, float(np.max(np.abs(Lam @ Lam.T - np.eye(M)))))
    checks["symmetry"] = worst_sym == 0.0
    checks["psd"] = worst_psd <= 1e-12
    checks["orthogonality"] = worst_orth <= 1e-10
    # fill idempotence and observed cells untouched
    p = synthetic_panel(3, 20, 0, seed=4, missing_frac=0.2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        once, _ = fill_missing(p, "exp", grid=2, n_starts=1)
        twice, d2 = fill_missing(once, "exp", grid=2, n_starts=1)
    checks["fill idempotent"] = d2 == [] and np.array_equal(once.values, twice.values)
    checks["fill keeps observed"] = np.array_equal(once.values[~p.missing], p.values[~p.missing])
    # fit metric bounds
    Y = rng.normal(size=(10, 4))
    rep = compute_fit(Y, Y + rng.normal(size=Y.shape))
    checks["fit <= 100"] = bool(np.all(rep.per_time_fit <= 100)) and compute_fit(Y, Y).avg_fit == 100
    # masked update exactness: a masked step leaves the state at its prediction
    m = build_transformed_model(realize_exponential(1.0, 0.3), [[1.0]], 0.5)
    mask = np.array([[False, True, False]])
    fr = filter_pass(m, [[1.0, np.nan, -1.0]], mask=mask)
    checks["masked update"] = np.array_equal(fr.xfilt[1], fr.xpred[1]) and np.isfinite(fr.xfilt).all()
    # determinism under fixed seeds
    a = compare_instance(random_instance(np.random.default_rng(5), "pd"))
    b = compare_instance(random_instance(np.random.default_rng(5), "pd"))
    checks["deterministic"] = a == b and np.array_equal(synthetic_panel(seed=9).values, synthetic_panel(seed=9).values)
    bad = [k for k, v in checks.items() if not v]
    record(8, not bad, f"{len(checks) - len(bad)}/{len(checks)} checks green" + (f", failing: {bad}" if bad else ""))
