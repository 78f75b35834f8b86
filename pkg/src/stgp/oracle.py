"""Dense reference implementation on ``Sigma = K_t (x) K_s + sigma^2 I``.

Cost is cubic in N*M; only meant for checking the structured path on small
problems. Data are stacked time-major: ``Y[(j-1)*M + i] = y_{i,j}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import InputError, NumericalError

MAX_DENSE = 2000


@dataclass(frozen=True, eq=False)
class DenseProblem:
    Kt: np.ndarray  # (N, N) over the training times, or (N+N_T) when predicting
    Ks: np.ndarray  # (M, M)
    sigma2: float
    Y: np.ndarray  # (N*M,)

    @classmethod
    def from_panel(cls, Kt, Ks, sigma2, Y_panel, allow_large=False):
        """Build from an M x N panel; ``Kt`` may cover extra prediction times."""
        Y_panel = np.atleast_2d(np.asarray(Y_panel, dtype=float))
        M, N = Y_panel.shape
        if N * M > MAX_DENSE and not allow_large:
            raise InputError(f"dense oracle limited to N*M <= {MAX_DENSE} (got {N * M})")
        return cls(np.asarray(Kt, float), np.asarray(Ks, float), float(sigma2), Y_panel.T.ravel())

    @property
    def M(self) -> int:
        return self.Ks.shape[0]

    @property
    def N(self) -> int:
        return self.Y.size // self.M

    def prior(self) -> np.ndarray:
        N = self.N
        return np.kron(self.Kt[:N, :N], self.Ks)

    def sigma(self) -> np.ndarray:
        return self.prior() + self.sigma2 * np.eye(self.N * self.M)


def _chol(S):
    try:
        return sla.cho_factor(S, lower=True)
    except np.linalg.LinAlgError:
        raise NumericalError("dense covariance is not positive definite") from None


def dense_mlm(problem: DenseProblem):
    """``(logdet, quad, cost)`` with ``cost = (NM log 2pi + logdet + quad) / 2``."""
    c = _chol(problem.sigma())
    logdet = 2.0 * float(np.sum(np.log(np.diag(c[0]))))
    quad = float(problem.Y @ sla.cho_solve(c, problem.Y))
    n = problem.Y.size
    return logdet, quad, 0.5 * (n * math.log(2 * math.pi) + logdet + quad)


def dense_delta_S(problem: DenseProblem):
    """Degrees of freedom ``trace(K Sigma^-1)``, residual energy and fitted values."""
    K = problem.prior()
    c = _chol(problem.sigma())
    A = sla.cho_solve(c, K.T).T  # K Sigma^-1 (Sigma symmetric)
    Yhat = A @ problem.Y
    return float(np.trace(A)), float(np.sum((Yhat - problem.Y) ** 2)), Yhat


def dense_posterior(problem: DenseProblem, n_predict: int = 0):
    """Posterior mean and marginal variance of the noiseless field.

    Returns ``(mean, var)`` as M x (N + n_predict) arrays. ``problem.Kt`` must
    cover all N + n_predict times.
    """
    N, M = problem.N, problem.M
    T = N + n_predict
    if problem.Kt.shape[0] < T:
        raise InputError("Kt does not cover the prediction times")
    Kt = problem.Kt[:T, :T]
    cross = np.kron(Kt[:, :N], problem.Ks)  # Cov(chi_all, Y)
    c = _chol(problem.sigma())
    mean = cross @ sla.cho_solve(c, problem.Y)
    prior_var = np.kron(np.diag(Kt), np.diag(problem.Ks))
    var = prior_var - np.einsum("ij,ji->i", cross, sla.cho_solve(c, cross.T))
    return mean.reshape(T, M).T, var.reshape(T, M).T


# -- randomized equivalence suite -------------------------------------------

ALL_FAMILIES = ("exp", "matern32", "te2exp", "te2exp+matern", "pd", "dc-input")


@dataclass
class Instance:
    spec: object  # TemporalKernelSpec
    locations: np.ndarray
    alpha_se: float
    sigma2: float
    Y: np.ndarray  # (M, N)
    horizon: int


def random_spec(rng, family: str):
    from .kernels import TemporalKernelSpec

    lu = lambda lo, hi: float(np.exp(rng.uniform(np.log(lo), np.log(hi))))  # noqa: E731
    if family == "exp":
        p, fx = {"c": lu(0.1, 5), "sigma": lu(0.5, 20)}, {}
    elif family == "matern32":
        p, fx = {"h": lu(0.1, 5), "theta": lu(0.5, 20)}, {}
    elif family in ("te2exp", "te2exp+matern"):
        p = {"delta": lu(0.1, 5), "c": float(rng.uniform(0, 0.9))}
        fx = {"f": float(rng.uniform(0.02, 0.3)), "sigma": lu(2, 5000)}
        if family == "te2exp+matern":
            p.update(h=p["delta"] * float(rng.uniform(0.01, 0.1)), theta=lu(0.5, 20))
    elif family == "pd":
        p, fx = {"delta": lu(0.1, 5), "sigma": lu(0.5, 50)}, {"f": float(rng.uniform(0.02, 0.3))}
    elif family == "dc-input":
        p, fx = {"delta": lu(0.1, 5), "lam": float(rng.uniform(0.3, 0.95)), "rho": float(rng.uniform(-0.9, 0.9))}, {}
    else:
        raise InputError(f"unknown family {family!r}")
    return TemporalKernelSpec(family, p, fx)


def random_instance(rng, family: str, max_N: int = 8, max_M: int = 4) -> Instance:
    spec = random_spec(rng, family)
    N = int(rng.integers(1, max_N + 1))
    M = int(rng.integers(1, max_M + 1))
    locs = rng.normal(size=(M, 2))
    sigma2 = float(np.exp(rng.uniform(np.log(0.01), np.log(10))))
    return Instance(spec, locs, float(np.exp(rng.uniform(-1, 1.5))), sigma2, rng.normal(size=(M, N)), 3)


def dense_temporal_gram(spec, n_times: int) -> np.ndarray:
    """Temporal Gram over times 1..n_times straight from the kernel formulas."""
    from .kernels import Family, eval_temporal_gram, input_convolved_gram
    from .realize import damped_sine_input_ss

    if spec.family is Family.DC_INPUT:
        E, F, H = damped_sine_input_ss()
        j = np.arange(n_times + 1)
        u = np.exp(-1e-2 * j) * np.sin(np.pi / 8 * j)
        return input_convolved_gram(spec, u, n_times, n_times)
    return eval_temporal_gram(spec, np.arange(1, n_times + 1, dtype=float))


def _rel(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), 1.0)) if b.size else 0.0


def compare_instance(inst: Instance) -> dict:
    """Relative errors of every structured quantity against the dense oracle."""
    import warnings

    from .hyper import cost_pass, finite_diff_check, gcv_sure_costs
    from .kalman import posterior
    from .kernels import SpatialKernelSpec, eval_spatial_gram
    from .realize import realize
    from .stmodel import build_transformed_model, transform_outputs

    M, N = inst.Y.shape
    Ks = eval_spatial_gram(SpatialKernelSpec(inst.alpha_se), inst.locations)
    model = build_transformed_model(realize(inst.spec), Ks, inst.sigma2)
    L = transform_outputs(model, inst.Y)
    mlm = cost_pass(model, L)
    gcv, sure = gcv_sure_costs(model, L)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        post = posterior(model, L, horizon=inst.horizon)
    Kt = dense_temporal_gram(inst.spec, N + inst.horizon)
    prob = DenseProblem.from_panel(Kt, Ks, inst.sigma2, inst.Y)
    logdet, quad, cost = dense_mlm(prob)
    delta, S, _ = dense_delta_S(prob)
    mean, var = dense_posterior(prob, inst.horizon)
    nm = N * M
    fd = finite_diff_check(model, L)
    return {
        "logdet": _rel(mlm.logdet, logdet),
        "quad": _rel(mlm.quad, quad),
        "mlm": _rel(mlm.value, cost),
        "delta": _rel(gcv.delta, delta),
        "S": _rel(gcv.S, S),
        "gcv": _rel(gcv.value, S / (nm * (1 - delta / nm) ** 2)),
        "sure": _rel(sure.value, S + 2 * inst.sigma2 * delta),
        "smoothed_mean": _rel(post.smoothed, mean[:, :N]),
        "predicted_mean": _rel(post.predicted, mean[:, N:]),
        "variance": _rel(post.field_var, var),
        "fd_delta": fd["rel_err_delta"],
        "fd_S": fd["rel_err_S"],
    }


TOLERANCES = {
    "logdet": 1e-8, "quad": 1e-8, "mlm": 1e-6, "delta": 1e-6, "S": 1e-6, "gcv": 1e-6, "sure": 1e-6,
    "smoothed_mean": 1e-6, "predicted_mean": 1e-6, "variance": 1e-6, "fd_delta": 1e-4, "fd_S": 1e-4,
}


def equivalence_suite(n_instances: int = 24, seed: int = 0) -> dict:
    """Max relative error per quantity over random instances cycling through all families."""
    rng = np.random.default_rng(seed)
    worst = {k: 0.0 for k in TOLERANCES}
    for k in range(n_instances):
        inst = random_instance(rng, ALL_FAMILIES[k % len(ALL_FAMILIES)])
        for name, err in compare_instance(inst).items():
            worst[name] = max(worst[name], err)
    return worst
