"""Identification of many similar FIR systems placed at pole-defined locations.

Each system is a 30th-order discrete transfer function. All systems share the
zeros, gain and the small poles of one random base system; only its 5
largest-modulus poles are perturbed, and the perturbed poles (real and
imaginary parts) serve as the system's location. The impulse responses are
estimated either jointly with the spatial-temporal model or one system at a
time with a dense kernel-regularized FIR regression.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import signal

from .errors import ConfigError, InputError, NumericalError
from .hyper import HyperParams, Param, optimize
from .kalman import posterior
from .kernels import Family, dc_prior_cov, input_toeplitz
from .pipeline import FieldProblem, fit_score
from .realize import RHO_CLAMP, damped_sine_input_ss

ORDER = 30
N_LARGE = 5
MAX_TRIES = 1000
NORM_HORIZON = 3000


@dataclass
class TestSystemEnsemble:
    zeros: np.ndarray  # shared zeros (29,)
    gain: float
    small_poles: np.ndarray  # shared poles (25,)
    base_large: np.ndarray  # (5,) base poles in canonical order
    large_poles: np.ndarray  # (M, 5) perturbed poles, same order
    radius: float
    seed: int

    __test__ = False  # not a pytest class

    @property
    def M(self) -> int:
        return self.large_poles.shape[0]

    @property
    def locations(self) -> np.ndarray:
        """(M, 10): real and imaginary parts of the perturbed poles."""
        P = self.large_poles
        return np.concatenate([P.real, P.imag], axis=1)

    def poles(self, i: int) -> np.ndarray:
        return np.concatenate([self.large_poles[i], self.small_poles])

    def impulse_response(self, i: int, n: int) -> np.ndarray:
        """Coefficients ``h_1 .. h_n`` (``h_0 = 0`` since the system is strictly proper)."""
        return _impulse(self.zeros, self.poles(i), self.gain, n)

    def describe(self) -> dict:
        def cl(a):
            return [[float(z.real), float(z.imag)] for z in np.ravel(a)]

        return {
            "seed": self.seed,
            "radius": self.radius,
            "gain": self.gain,
            "zeros": cl(self.zeros),
            "small_poles": cl(self.small_poles),
            "base_large_poles": cl(self.base_large),
            "large_poles": [cl(p) for p in self.large_poles],
        }


def _impulse(zeros, poles, gain, n):
    # zpk2sos pads the missing zero at the origin, which advances the response by one sample
    sos = signal.zpk2sos(zeros, poles, gain)
    x = np.zeros(n)
    x[0] = 1.0
    return signal.sosfilt(sos, x)


def _random_poles(rng, n, rmin, rmax, n_real):
    """``n`` conjugate-closed poles, ``n_real`` of them real, moduli uniform in ``[rmin, rmax)``."""
    n_pairs = (n - n_real) // 2
    mod = rng.uniform(rmin, rmax, n_real)
    real = mod * rng.choice([-1.0, 1.0], n_real)
    pm = rng.uniform(rmin, rmax, n_pairs)
    ang = rng.uniform(0.05, math.pi - 0.05, n_pairs)
    upper = pm * np.exp(1j * ang)
    return real.astype(complex), upper


def _canonical(real, upper):
    """Reals then conjugate pairs (upper, lower), each group sorted by modulus."""
    real = real[np.argsort(-np.abs(real), kind="stable")]
    upper = upper[np.argsort(-np.abs(upper), kind="stable")]
    pairs = np.ravel(np.column_stack([upper, upper.conj()])) if upper.size else np.array([], complex)
    return np.concatenate([real, pairs])


def _conj_closed(p, tol=1e-12):
    q = np.sort_complex(p)
    return np.allclose(np.sort_complex(p.conj()), q, atol=tol)


def generate_base(rng):
    for _ in range(MAX_TRIES):
        n_real_large = int(rng.choice([1, 3, 5]))
        lr, lu = _random_poles(rng, N_LARGE, 0.8, 0.9, n_real_large)
        n_small = ORDER - N_LARGE
        n_real_small = int(rng.integers(0, n_small // 2 + 1)) * 2 + 1  # odd, so pairs fill the rest
        sr, su = _random_poles(rng, n_small, 0.0, 0.75, n_real_small)
        large = _canonical(lr, lu)
        small = _canonical(sr, su)
        zr, zu = _random_poles(rng, ORDER - 1, 0.0, 0.95, int(rng.integers(0, 15)) * 2 + 1)
        zeros = _canonical(zr, zu)
        mods = np.sort(np.abs(np.concatenate([large, small])))[::-1]
        ok = (
            np.all((mods[:N_LARGE] >= 0.8) & (mods[:N_LARGE] <= 0.9))
            and mods[N_LARGE] < 0.75
            and _conj_closed(large)
            and _conj_closed(small)
            and _conj_closed(zeros)
        )
        if not ok:
            continue
        h = _impulse(zeros, np.concatenate([large, small]), 1.0, NORM_HORIZON)
        nrm = float(np.linalg.norm(h))
        if not (nrm > 0 and np.isfinite(nrm)):
            continue
        return zeros, 1.0 / nrm, small, large
    raise NumericalError(f"base system generation failed after {MAX_TRIES} tries")


def _perturb(rng, base_large, radius):
    out = base_large.copy()
    k = 0
    while k < out.size:
        p = base_large[k]
        if abs(p.imag) < 1e-14:
            out[k] = p.real + rng.uniform(-radius, radius)
            k += 1
        else:
            rad = radius * math.sqrt(rng.uniform())
            ang = rng.uniform(0, 2 * math.pi)
            q = p + rad * np.exp(1j * ang)
            out[k], out[k + 1] = q, q.conjugate()
            k += 2
    return out


def generate_ensemble(seed: int, M: int, radius: float = 0.05) -> TestSystemEnsemble:
    if M < 1:
        raise ConfigError("need at least one system")
    if not 0 <= radius < 0.1:
        raise ConfigError("perturbation radius must lie in [0, 0.1) to keep poles inside the unit circle")
    rng = np.random.default_rng(seed)
    zeros, gain, small, large = generate_base(rng)
    perturbed = np.array([_perturb(rng, large, radius) for _ in range(M)])
    return TestSystemEnsemble(zeros, gain, small, large, perturbed, radius, seed)


def input_signal(input_ss, n: int) -> np.ndarray:
    """``u(t_0), ..., u(t_{n-1})`` generated by the input state-space model from rest."""
    E, F, H = (np.asarray(a, dtype=float) for a in input_ss)
    u = np.zeros(n)
    z = np.zeros(E.shape[0])
    for j in range(n):
        u[j] = H.ravel() @ z
        z = E @ z + (F.ravel() if j == 0 else 0.0)
    return u


def damped_sine(n: int, alpha: float = 1e-2, omega0: float = math.pi / 8) -> np.ndarray:
    j = np.arange(n)
    return np.exp(-alpha * j) * np.sin(omega0 * j)


@dataclass
class SysidData:
    Y: np.ndarray  # (M, N) noisy outputs at t_1..t_N
    F: np.ndarray  # noise-free outputs
    btrue: np.ndarray  # (M, n_b)
    u: np.ndarray  # u(t_0) .. u(t_N)
    sigma2: float
    locations: np.ndarray
    tail_energy: np.ndarray  # fraction of ||h||^2 beyond n_b, per system


def simulate_data(
    ens: TestSystemEnsemble, N: int = 400, snr: float = 1.0, seed: int = 0, n_b: int = 125, input_ss=None
) -> SysidData:
    input_ss = damped_sine_input_ss() if input_ss is None else input_ss
    u = input_signal(input_ss, N + 1)
    h_long = np.array([ens.impulse_response(i, max(NORM_HORIZON, n_b + 1)) for i in range(ens.M)])
    btrue = h_long[:, :n_b]
    tail = 1.0 - np.sum(btrue**2, axis=1) / np.sum(h_long**2, axis=1)
    Phi = input_toeplitz(u, N, n_b)
    F = btrue @ Phi.T
    if not snr > 0:
        raise ConfigError("snr must be positive")
    sigma2 = 0.0 if math.isinf(snr) else float(np.mean(np.var(F, axis=1))) / snr
    rng = np.random.default_rng(seed)
    Y = F + math.sqrt(sigma2) * rng.standard_normal(F.shape)
    return SysidData(Y, F, btrue, u, sigma2, ens.locations, tail)


@dataclass
class FirEstimate:
    bhat: np.ndarray  # (M, n_b)
    params: list[dict] = field(default_factory=list)
    fits: np.ndarray | None = None
    avg_fit: float = math.nan


def compute_fit_b(bhat, btrue) -> tuple[np.ndarray, float]:
    bhat = np.atleast_2d(bhat)
    btrue = np.atleast_2d(btrue)
    if bhat.shape != btrue.shape:
        raise InputError(f"estimate shape {bhat.shape} does not match truth {btrue.shape}")
    fits = np.array([fit_score(a, b) for a, b in zip(bhat, btrue)])
    if np.isnan(fits).any():
        warnings.warn("constant true FIR; fit undefined for some systems")
    ok = ~np.isnan(fits)
    return fits, float(np.mean(fits[ok])) if ok.any() else math.nan


# -- spatial-temporal estimator ----------------------------------------------


def spatial_temporal_problem(Y, locations, n_b, input_ss=None, box=None) -> FieldProblem:
    input_ss = damped_sine_input_ss() if input_ss is None else input_ss
    u = input_signal(input_ss, np.shape(Y)[1] + 1)
    scale = float(np.mean(u**2)) or 1.0
    return FieldProblem(
        Y, locations, Family.DC_INPUT, method="mlm", input_ss=input_ss, n_b=n_b,
        box=dict(box or {}), input_scale=scale,
    )


def fir_from_states(prob: FieldProblem, theta, n_b: int) -> np.ndarray:
    """Smoothed FIR coefficients ``b_1..b_n_b`` at every location."""
    m = prob.model(theta)
    if prob.Y.shape[1] < n_b:
        raise InputError(f"need at least n_b = {n_b} samples, got {prob.Y.shape[1]}")
    with warnings.catch_warnings():
        # pinned coefficients beyond n_b make the predicted covariance singular
        warnings.simplefilter("ignore", RuntimeWarning)
        post = posterior(m, prob.transformed(m))
    spec, _, _ = prob.unpack(theta)
    rho = float(np.clip(spec["rho"], -RHO_CLAMP, RHO_CLAMP))
    a = post.block_mean[:n_b, :, 0]  # (n_b, M)
    return m.Lambda @ (m.scale[:, None] * math.sqrt(1 - rho * rho) * a.T)


def estimate_spatial_temporal(
    Y, locations, n_b: int = 125, input_ss=None, grid=3, n_starts: int = 3, workers: int = 1, box=None
) -> FirEstimate:
    prob = spatial_temporal_problem(Y, locations, n_b, input_ss, box)
    res = optimize(prob.cost, prob.hyperparams(), grid=grid, n_starts=n_starts, workers=workers)
    return FirEstimate(fir_from_states(prob, res.theta, n_b), [res.params.as_dict()])


# -- per-system dense baseline ------------------------------------------------


class DenseFir:
    """Kernel-regularized FIR regression ``y = Phi b + v`` with a DC prior on ``b``.

    With ``K = C C^T`` the marginal likelihood and posterior mean only need
    the n_b x n_b matrix ``sigma2 I + C^T Phi^T Phi C``.
    """

    names = ("delta", "lam", "rho", "sigma2")

    def __init__(self, y, u, n_b: int):
        self.y = np.asarray(y, dtype=float)
        self.N = self.y.size
        self.n_b = n_b
        self.Phi = input_toeplitz(u, self.N, n_b)
        self.G = self.Phi.T @ self.Phi
        self.Pty = self.Phi.T @ self.y
        self.yy = float(self.y @ self.y)

    def _factor(self, delta, lam, rho):
        rho = float(np.clip(rho, -RHO_CLAMP, RHO_CLAMP))
        k = np.arange(self.n_b)
        R = rho ** np.abs(k[:, None] - k[None, :])
        C = np.sqrt(delta * lam**k)[:, None] * np.linalg.cholesky(R)
        return C

    def _solve(self, theta):
        delta, lam, rho, sigma2 = theta
        C = self._factor(delta, lam, rho)
        A = sigma2 * np.eye(self.n_b) + C.T @ self.G @ C
        try:
            c = sla.cho_factor(A, lower=True)
        except np.linalg.LinAlgError:
            raise NumericalError("FIR regression matrix is not positive definite") from None
        z = C.T @ self.Pty
        return C, c, z

    def cost(self, theta) -> float:
        sigma2 = theta[3]
        C, c, z = self._solve(theta)
        logdet = (self.N - self.n_b) * math.log(sigma2) + 2.0 * float(np.sum(np.log(np.diag(c[0]))))
        quad = (self.yy - float(z @ sla.cho_solve(c, z))) / sigma2
        return 0.5 * (self.N * math.log(2 * math.pi) + logdet + quad)

    def bhat(self, theta) -> np.ndarray:
        C, c, z = self._solve(theta)
        return C @ sla.cho_solve(c, z)

    def gram(self, theta) -> np.ndarray:
        delta, lam, rho, _ = theta
        return self.Phi @ dc_prior_cov(self.n_b, delta, lam, rho) @ self.Phi.T

    def hyperparams(self, u) -> HyperParams:
        v = float(np.var(self.y)) or 1.0
        s = v / (float(np.mean(np.asarray(u[: self.N + 1]) ** 2)) or 1.0)
        return HyperParams(
            [
                Param("delta", 1e-4 * s, 10 * s, True),
                Param("lam", 0.3, 0.99),
                Param("rho", -0.99, 0.99),
                Param("sigma2", 1e-3 * v, 2.0 * v, True),
            ]
        )


def estimate_temporal_baseline(Y, u, n_b: int = 125, grid=3, n_starts: int = 3, workers: int = 1) -> FirEstimate:
    Y = np.atleast_2d(np.asarray(Y, dtype=float))

    def one(y):
        reg = DenseFir(y, u, n_b)
        res = optimize(reg.cost, reg.hyperparams(u), grid=grid, n_starts=n_starts)
        return reg.bhat(res.theta), res.params.as_dict()

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            out = list(ex.map(one, Y))
    else:
        out = [one(y) for y in Y]
    return FirEstimate(np.array([b for b, _ in out]), [p for _, p in out])


def run_experiment(seed: int, M: int = 50, N: int = 400, n_b: int = 125, snr: float = 1.0,
                   grid=3, n_starts: int = 3, workers: int = 1, radius: float = 0.05) -> dict:
    """One ensemble, both estimators, fit^b summary."""
    ens = generate_ensemble(seed, M, radius)
    data = simulate_data(ens, N, snr, seed=seed + 1, n_b=n_b)
    st = estimate_spatial_temporal(data.Y, data.locations, n_b, grid=grid, n_starts=n_starts, workers=workers)
    tb = estimate_temporal_baseline(data.Y, data.u, n_b, grid=grid, n_starts=n_starts, workers=workers)
    st.fits, st.avg_fit = compute_fit_b(st.bhat, data.btrue)
    tb.fits, tb.avg_fit = compute_fit_b(tb.bhat, data.btrue)
    return {"seed": seed, "ensemble": ens, "data": data, "spatial_temporal": st, "temporal": tb}
