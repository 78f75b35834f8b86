"""Timing of the structured cost against a naive filter on the untransformed model."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .hyper import cost_pass
from .kernels import SpatialKernelSpec, eval_spatial_gram
from .realize import Realization, realize_cosine_exponential, realize_exponential, stack
from .stmodel import build_transformed_model, transform_outputs


def bench_realization() -> Realization:
    """Order-3 realization (exponential plus one damped cosine)."""
    return stack([realize_exponential(1.0, 0.05), realize_cosine_exponential(0.5, 2 * math.pi / 12, 0.02)])


def naive_cost(real: Realization, K_s, sigma2: float, Y):
    """``(logdet, quad)`` from a filter on the full Mr-dimensional state.

    The model is ``y_j = K_s^{1/2} (I (x) H) s_j + v_j`` with ``M x M`` innovation
    covariances, costing O(N (Mr)^3).
    """
    Y = np.atleast_2d(Y)
    M, N = Y.shape
    w, V = np.linalg.eigh(K_s)
    root = (V * np.sqrt(np.clip(w, 0, None))) @ V.T
    I = np.eye(M)
    F = np.kron(I, real.F)
    Q = np.kron(I, real.G @ real.G.T)
    Hb = root @ np.kron(I, real.H[None, :])
    x = np.zeros(M * real.r)
    P = np.kron(I, real.init_cov)
    logdet = quad = 0.0
    for n in range(N):
        PH = P @ Hb.T
        E = Hb @ PH + sigma2 * I
        c = np.linalg.cholesky(E)
        e = Y[:, n] - Hb @ x
        z = np.linalg.solve(c, e)
        logdet += 2.0 * float(np.sum(np.log(np.diag(c))))
        quad += float(z @ z)
        K = np.linalg.solve(E, PH.T).T
        x = F @ (x + K @ e)
        P = F @ (P - K @ PH.T) @ F.T + Q
    return logdet, quad


@dataclass
class BenchRow:
    N: int
    M: int
    r: int
    t_decompose: float
    t_filter: float
    t_structured: float
    t_naive: float
    speedup: float


def _best(fn, repeats):
    best = math.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def time_case(N: int, M: int, repeats: int = 3, naive: bool = True, seed: int = 0) -> BenchRow:
    rng = np.random.default_rng(seed)
    real = bench_realization()
    locs = rng.uniform(0, 10, size=(M, 2))
    Y = rng.standard_normal((M, N))
    Ks = eval_spatial_gram(SpatialKernelSpec(4.0), locs)
    sigma2 = 0.1

    t_dec, model = _best(lambda: build_transformed_model(real, Ks, sigma2), repeats)
    L = transform_outputs(model, Y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        t_filt, _ = _best(lambda: cost_pass(model, L), repeats)

        def full():
            m = build_transformed_model(real, Ks, sigma2)
            return cost_pass(m, transform_outputs(m, Y))

        t_struct, _ = _best(full, repeats)
    t_naive = _best(lambda: naive_cost(real, Ks, sigma2, Y), 1)[0] if naive else math.nan
    return BenchRow(N, M, real.r, t_dec, t_filt, t_struct, t_naive, t_naive / t_struct)


def run_bench(sizes, repeats: int = 3, naive_max_state: int = 1024) -> list[dict]:
    rows = []
    for N, M in sizes:
        naive = M * 3 <= naive_max_state
        rows.append(asdict(time_case(N, M, repeats, naive)))
    return rows
