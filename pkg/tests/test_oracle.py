import math

import numpy as np
import pytest

from stgp.errors import InputError
from stgp.oracle import (
    DenseProblem,
    TOLERANCES,
    compare_instance,
    dense_delta_S,
    dense_mlm,
    dense_posterior,
    equivalence_suite,
    random_instance,
)


def scalar(sigma2=1.0):
    Kt = np.array([[1.0, 0.5], [0.5, 1.0]])
    return DenseProblem.from_panel(Kt, np.eye(1), sigma2, [[1.0]])


def test_scalar_values():
    logdet, quad, cost = dense_mlm(scalar())
    assert logdet == pytest.approx(math.log(2), abs=1e-15)
    assert quad == pytest.approx(0.5, abs=1e-15)
    assert cost == pytest.approx(0.5 * (math.log(2 * math.pi) + math.log(2) + 0.5))
    delta, S, Yhat = dense_delta_S(scalar())
    assert delta == pytest.approx(0.5) and S == pytest.approx(0.25) and Yhat[0] == pytest.approx(0.5)
    mean, var = dense_posterior(scalar(), 1)
    assert mean[0, 1] == pytest.approx(0.25)
    assert var[0, 0] == pytest.approx(0.5)


def test_zero_noise_and_zero_data():
    p = DenseProblem.from_panel(np.eye(3) + 0.5, np.eye(2), 0.0, np.zeros((2, 3)))
    assert dense_mlm(p)[1] == 0.0
    delta, _, _ = dense_delta_S(p)
    assert delta == pytest.approx(6.0)
    mean, _ = dense_posterior(p)
    assert np.all(mean == 0)


def test_kronecker_ordering_is_time_major(rng):
    Kt = np.array([[2.0, 1.0], [1.0, 2.0]])
    Ks = np.array([[1.0, 0.3], [0.3, 1.0]])
    p = DenseProblem.from_panel(Kt, Ks, 0.1, rng.normal(size=(2, 2)))
    S = p.prior()
    for j in range(2):
        for jj in range(2):
            np.testing.assert_array_equal(S[2 * j : 2 * j + 2, 2 * jj : 2 * jj + 2], Kt[j, jj] * Ks)


def test_delta_is_log_determinant_derivative(rng):
    Kt = np.exp(-np.abs(np.subtract.outer(np.arange(4), np.arange(4))) / 2.0)
    Ks = np.array([[1.0, 0.4], [0.4, 1.0]])
    Y = rng.normal(size=(2, 4))
    g, h = 0.3, 3e-6
    d = dense_delta_S(DenseProblem.from_panel(Kt, Ks, g, Y))[0]
    lp = dense_mlm(DenseProblem.from_panel(Kt, Ks, g + h, Y))[0]
    lm = dense_mlm(DenseProblem.from_panel(Kt, Ks, g - h, Y))[0]
    assert d == pytest.approx(8 - g * (lp - lm) / (2 * h), rel=1e-5)


def test_size_guard():
    with pytest.raises(InputError):
        DenseProblem.from_panel(np.eye(1001), np.eye(2), 1.0, np.zeros((2, 1001)))
    DenseProblem.from_panel(np.eye(3), np.eye(2), 1.0, np.zeros((2, 3)), allow_large=True)


@pytest.mark.parametrize("family", ["exp", "matern32", "te2exp", "te2exp+matern", "pd", "dc-input"])
def test_structured_matches_dense_per_family(family):
    rng = np.random.default_rng(hash(family) % 2**32)
    for _ in range(4):
        errs = compare_instance(random_instance(rng, family))
        for name, err in errs.items():
            assert err <= TOLERANCES[name], (name, err)


def test_suite_reports_all_quantities():
    worst = equivalence_suite(6, seed=3)
    assert set(worst) == set(TOLERANCES)
