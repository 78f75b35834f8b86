import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stgp.errors import InputError
from stgp.kernels import SpatialKernelSpec, TemporalKernelSpec, eval_spatial_gram, eval_temporal_gram
from stgp.realize import realize, realize_exponential
from stgp.stmodel import (
    build_transformed_model,
    decompose_spatial,
    transform_outputs,
    untransform_field,
    untransform_variance,
)


def test_identity_spatial_gram():
    Lam, d = decompose_spatial(np.eye(3))
    np.testing.assert_array_equal(Lam, np.eye(3))
    np.testing.assert_array_equal(d, np.ones(3))


def test_single_block_scale():
    real = realize_exponential(1.0, 0.5)
    m = build_transformed_model(real, [[4.0]], 0.1)
    np.testing.assert_allclose(m.block_H[0], 2.0 * real.H)


def test_transform_round_trip_and_unit_vectors(rng):
    A = rng.normal(size=(5, 5))
    Ks = A @ A.T
    m = build_transformed_model(realize_exponential(1.0, 0.5), Ks, 0.1)
    Y = rng.normal(size=(5, 7))
    L = transform_outputs(m, Y)
    np.testing.assert_allclose(m.Lambda @ L, Y, atol=1e-10)
    e = transform_outputs(m, m.Lambda[:, :1])
    np.testing.assert_allclose(e[:, 0], np.eye(5)[0], atol=1e-12)


def test_rejects_bad_inputs():
    with pytest.raises(InputError):
        decompose_spatial([[1.0, 0.5], [0.4, 1.0]])
    with pytest.raises(InputError):
        decompose_spatial([[1.0, 2.0], [2.0, 1.0]])
    m = build_transformed_model(realize_exponential(1.0, 0.5), np.eye(2), 0.1)
    with pytest.raises(InputError):
        transform_outputs(m, [[1.0, np.nan], [0.0, 1.0]])


def test_singular_gram_keeps_zero_blocks():
    Lam, d = decompose_spatial(np.ones((3, 3)))
    assert d[0] == pytest.approx(3.0) and np.all(d[1:] == 0)


def test_untransform_zero_states_and_single_block():
    real = realize_exponential(1.0, 0.5)
    m = build_transformed_model(real, np.eye(3), 0.1)
    np.testing.assert_array_equal(untransform_field(m, np.zeros((4, 3, 1))), np.zeros((3, 4)))
    m1 = build_transformed_model(real, [[1.0]], 0.1)
    x = np.array([[[0.7]]])
    np.testing.assert_allclose(untransform_field(m1, x), [[0.7 * real.H[0]]])
    P = np.full((1, 1, 1, 1), 2.0)
    np.testing.assert_allclose(untransform_variance(m1, P), [[2.0 * real.H[0] ** 2]])


def test_lifted_prior_covariance_is_kronecker(rng):
    # propagate the block prior covariances and map back: Cov(chi_j, chi_j') = k_t(j-j') K_s
    spec = TemporalKernelSpec("te2exp", {"delta": 1.3, "c": 0.4}, {"sigma": 20.0})
    real = realize(spec)
    Ks = eval_spatial_gram(SpatialKernelSpec(1.0), rng.normal(size=(4, 2)))
    m = build_transformed_model(real, Ks, 0.1)
    N = 6
    Kt = eval_temporal_gram(spec, np.arange(1, N + 1.0))
    B = m.block_H  # (M, r)
    S0 = real.init_cov
    for j in range(N):
        for jj in range(j, N):
            Fp = np.linalg.matrix_power(real.F, jj - j)
            # block covariance is diagonal across blocks after the transform
            blocks = np.einsum("ir,rs,ts,it->i", B, Fp, S0, B)
            cov = m.Lambda @ np.diag(blocks) @ m.Lambda.T
            np.testing.assert_allclose(cov, Kt[j, jj] * Ks, atol=1e-8 * np.abs(Ks).max())


@given(st.integers(1, 10), st.integers(0, 2**31 - 1), st.floats(0.1, 10))
def test_eigenvectors_orthonormal_and_reconstruct(M, seed, alpha):
    P = np.random.default_rng(seed).normal(size=(M, 2))
    Ks = eval_spatial_gram(SpatialKernelSpec(alpha), P)
    Lam, d = decompose_spatial(Ks)
    assert np.max(np.abs(Lam @ Lam.T - np.eye(M))) <= 1e-10
    assert np.linalg.norm(Lam @ np.diag(d) @ Lam.T - Ks) <= 1e-8 * np.linalg.norm(Ks)
    assert np.all(d >= 0) and np.all(np.diff(d) <= 0)
    for k in range(M):
        col = Lam[:, k]
        assert col[np.flatnonzero(np.abs(col) > 1e-12)[0]] > 0
