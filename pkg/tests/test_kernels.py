import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stgp.errors import ConfigError
from stgp.kernels import (
    Family,
    SpatialKernelSpec,
    TemporalKernelSpec,
    dc_prior_cov,
    eval_dc,
    eval_spatial_gram,
    eval_temporal,
    eval_temporal_gram,
    format_kernel_config,
    input_convolved_gram,
    input_toeplitz,
    parse_kernel_config,
)


def te2(delta=1.0, c=0.5, f=1 / 12, sigma=5000.0):
    return TemporalKernelSpec("te2exp", {"delta": delta, "c": c}, {"f": f, "sigma": sigma})


def test_spatial_gram_small_cases():
    assert eval_spatial_gram(SpatialKernelSpec(1.0), [[0.3, 0.1]]).tolist() == [[1.0]]
    np.testing.assert_array_equal(eval_spatial_gram(SpatialKernelSpec(2.0), [[1, 1], [1, 1]]), np.ones((2, 2)))
    K = eval_spatial_gram(SpatialKernelSpec(1.0), [[0, 0], [1, 0]])
    np.testing.assert_allclose(K, [[1, math.exp(-1)], [math.exp(-1), 1]], rtol=1e-15)


def test_spatial_spec_rejects_bad_alpha():
    with pytest.raises(ConfigError):
        SpatialKernelSpec(0.0)
    with pytest.raises(ConfigError):
        SpatialKernelSpec(1.0, "matern")


def test_te2exp_values_in_the_no_decay_limit():
    spec = te2(sigma=1e300)
    assert eval_temporal(spec, 0.0) == pytest.approx(1.0, abs=1e-15)
    assert eval_temporal(spec, 6.0) == pytest.approx(0.5, abs=1e-14)


def test_te2exp_is_second_order_taylor_of_exp_cosine():
    # exp(x) ~ 1 + x + x^2/2 with x = c (cos(2 pi f tau) - 1), times delta exp(-|tau|/sigma)
    delta, c, f, sigma = 1.7, 0.35, 1 / 12, 40.0
    tau = np.linspace(-30, 30, 61)
    x = c * (np.cos(2 * np.pi * f * tau) - 1)
    expected = delta * (1 + x + x * x / 2) * np.exp(-np.abs(tau) / sigma)
    got = eval_temporal(te2(delta, c, f, sigma), tau)
    np.testing.assert_allclose(got, expected, rtol=1e-14, atol=1e-14)


def test_matern_and_dc_values():
    m = TemporalKernelSpec("matern32", {"h": 2.0, "theta": 1.0})
    assert eval_temporal(m, 0.0) == 2.0
    m1 = TemporalKernelSpec("matern32", {"h": 1.0, "theta": 5.0})
    assert eval_temporal(m1, 5.0) == pytest.approx((1 + math.sqrt(3)) * math.exp(-math.sqrt(3)), rel=1e-14)
    assert eval_dc(1.0, 0.81, 1.0, 1.0, 1.0) == pytest.approx(0.81, rel=1e-14)


def test_dc_gram_is_not_toeplitz():
    spec = TemporalKernelSpec("dc", {"delta": 2.0, "lam": 0.7, "rho": 0.4})
    t = np.arange(1, 6.0)
    K = eval_temporal_gram(spec, t)
    expected = 2.0 * 0.7 ** ((t[:, None] + t[None, :]) / 2) * 0.4 ** np.abs(t[:, None] - t[None, :])
    np.testing.assert_allclose(K, expected, rtol=1e-14)
    assert not np.isclose(K[0, 0], K[1, 1])


def test_dc_prior_puts_first_coefficient_at_time_zero():
    P = dc_prior_cov(3, 1.5, 0.5, 0.2)
    assert P[0, 0] == pytest.approx(1.5)
    assert P[1, 1] == pytest.approx(0.75)
    assert P[0, 1] == pytest.approx(1.5 * 0.5**0.5 * 0.2)


def test_input_toeplitz_layout():
    u = np.array([0.0, 1.0, 2.0, 3.0])
    Phi = input_toeplitz(u, 3, 2)
    # row j holds u(t_{j-1}), u(t_{j-2})
    np.testing.assert_array_equal(Phi, [[0, 0], [1, 0], [2, 1]])


def test_input_convolved_gram_matches_explicit_double_sum():
    spec = TemporalKernelSpec("dc", {"delta": 1.0, "lam": 0.8, "rho": 0.5})
    u = np.sin(np.arange(8.0))
    n_b, N = 4, 6
    K = input_convolved_gram(spec, u, N, n_b)
    ref = np.zeros((N, N))
    for j in range(1, N + 1):
        for jj in range(1, N + 1):
            for k in range(1, n_b + 1):
                for kk in range(1, n_b + 1):
                    if j - k >= 0 and jj - kk >= 0:
                        ref[j - 1, jj - 1] += eval_dc(1.0, 0.8, 0.5, k - 1, kk - 1) * u[j - k] * u[jj - kk]
    np.testing.assert_allclose(K, ref, rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize(
    "family,params",
    [
        ("exp", {"c": 1.0}),
        ("te2exp", {"delta": 1.0}),
        ("dc", {"delta": 1.0, "lam": 0.5}),
    ],
)
def test_missing_params_rejected(family, params):
    with pytest.raises(ConfigError):
        TemporalKernelSpec(family, params)


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        TemporalKernelSpec("te2exp", {"delta": 1.0, "c": 1.0})
    with pytest.raises(ConfigError):
        TemporalKernelSpec("dc", {"delta": 1.0, "lam": 1.0, "rho": 0.0})
    with pytest.raises(ConfigError):
        TemporalKernelSpec("te2exp+matern", {"delta": 1.0, "c": 0.1, "h": 0.5, "theta": 1.0})
    with pytest.raises(ConfigError):
        TemporalKernelSpec("nope", {})
    with pytest.raises(ConfigError):
        TemporalKernelSpec("exp", {"c": 1.0, "sigma": 1.0}, {"f": 0.1})


def test_config_round_trip():
    spec = TemporalKernelSpec("te2exp+matern", {"delta": 2.0, "c": 0.3, "h": 0.1, "theta": 4.0}, {"f": 1 / 12})
    assert parse_kernel_config(format_kernel_config(spec)) == spec
    text = "family=pd  # periodic\ndelta=1\nsigma=10\nfixed.f=1/12\n"
    parsed = parse_kernel_config(text)
    assert parsed.family is Family.PD and parsed["f"] == pytest.approx(1 / 12)
    assert parse_kernel_config('{"family": "exp", "params": {"c": 1, "sigma": 2}}')["sigma"] == 2.0
    with pytest.raises(ConfigError):
        parse_kernel_config("delta=1")
    with pytest.raises(ConfigError):
        parse_kernel_config('{"family": "exp", "params": {"c": 1, "sigma": 2}, "extra": 1}')


# -- properties ------------------------------------------------------------

pos = st.floats(0.05, 20.0)


@st.composite
def stationary_specs(draw):
    fam = draw(st.sampled_from(["exp", "matern32", "te2exp", "te2exp+matern", "pd"]))
    if fam == "exp":
        return TemporalKernelSpec(fam, {"c": draw(pos), "sigma": draw(pos)})
    if fam == "matern32":
        return TemporalKernelSpec(fam, {"h": draw(pos), "theta": draw(pos)})
    if fam == "pd":
        return TemporalKernelSpec(fam, {"delta": draw(pos), "sigma": draw(pos)}, {"f": draw(st.floats(0.01, 0.45))})
    delta, c = draw(pos), draw(st.floats(0.0, 0.95))
    fixed = {"f": draw(st.floats(0.01, 0.45)), "sigma": draw(st.floats(0.5, 5000))}
    if fam == "te2exp":
        return TemporalKernelSpec(fam, {"delta": delta, "c": c}, fixed)
    ratio = draw(st.floats(0.01, 0.1))
    return TemporalKernelSpec(fam, {"delta": delta, "c": c, "h": ratio * delta, "theta": draw(pos)}, fixed)


@given(stationary_specs(), st.lists(st.floats(-50, 50), min_size=1, max_size=10))
def test_stationary_kernels_are_even(spec, taus):
    tau = np.array(taus)
    np.testing.assert_array_equal(eval_temporal(spec, tau), eval_temporal(spec, -tau))


@given(stationary_specs(), st.lists(st.floats(0, 60), min_size=1, max_size=12, unique=True))
def test_temporal_gram_is_psd(spec, times):
    K = eval_temporal_gram(spec, np.array(times))
    np.testing.assert_array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-8 * np.trace(K)


@given(
    st.floats(0.1, 1.0),
    st.floats(0.0, 0.99),
    st.floats(-1.0, 1.0),
    st.lists(st.integers(0, 30), min_size=1, max_size=10, unique=True),
)
def test_dc_gram_is_psd(delta, lam, rho, times):
    spec = TemporalKernelSpec("dc", {"delta": delta, "lam": lam, "rho": rho})
    K = eval_temporal_gram(spec, np.array(times, dtype=float))
    assert np.linalg.eigvalsh(K).min() >= -1e-8 * max(np.trace(K), 1e-300)


@given(st.integers(1, 8), st.floats(0.05, 10.0), st.integers(0, 2**31 - 1))
def test_spatial_gram_symmetric_psd(M, alpha, seed):
    P = np.random.default_rng(seed).normal(size=(M, 3))
    K = eval_spatial_gram(SpatialKernelSpec(alpha), P)
    np.testing.assert_array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-10 * np.abs(K).max() * M
