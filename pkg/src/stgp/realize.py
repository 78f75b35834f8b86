"""Discrete-time state-space realizations of temporal kernels.

Every stationary family used here has a rational spectrum whose factor can be
written down in closed form, so no numerical spectral factorization or
continuous-time discretization is involved. A realization ``(F, G, H)`` driven
by unit white noise has output covariance ``H F^tau S H^T`` where ``S`` solves
``S = F S F^T + G G^T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import NumericalError
from .kernels import Family, TemporalKernelSpec

RHO_CLAMP = 1.0 - 1e-9


@dataclass(frozen=True, eq=False)
class Realization:
    """State-space triple plus the prior covariance of the first state.

    ``init_cov`` is the covariance of ``x_1``. For stationary kernels this is
    the Lyapunov solution; time-varying realizations give it explicitly.
    ``step``, when set, maps a 1-based time ``j`` to ``(F_j, G_j)`` used for
    the transition ``x_{j+1} = F_j x_j + G_j w_j``.
    """

    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    init_cov: np.ndarray
    step: Callable[[int], tuple[np.ndarray, np.ndarray]] | None = None

    @property
    def r(self) -> int:
        return self.F.shape[0]

    @property
    def stationary(self) -> bool:
        return self.step is None

    def transition(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """``(F_j, G_j G_j^T)`` for the step from time j to j+1."""
        if self.step is None:
            F, G = self.F, self.G
        else:
            F, G = self.step(j)
        return F, G @ G.T

    def lag_covariance(self, n_lags: int) -> np.ndarray:
        """Output autocovariance at lags 0..n_lags-1 (stationary realizations)."""
        out = np.empty(n_lags)
        v = self.init_cov @ self.H
        for tau in range(n_lags):
            out[tau] = self.H @ v
            v = self.F @ v
        return out

    def output_gram(self, n: int) -> np.ndarray:
        """Implied output covariance over times 1..n, valid for time-varying models."""
        P = self.init_cov.copy()
        # cross[j] holds Cov(x_current, x_j) for j <= current
        cross: list[np.ndarray] = []
        K = np.empty((n, n))
        for j in range(n):
            cross.append(P.copy())
            for i in range(j + 1):
                K[j, i] = K[i, j] = self.H @ cross[i] @ self.H
            if j == n - 1:
                break
            F, Q = self.transition(j + 1)
            cross = [F @ C for C in cross]
            P = F @ P @ F.T + Q
        return K


def spectral_radius(F) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(F)))))


def lyapunov_solve(F, G) -> np.ndarray:
    """Solve ``S = F S F^T + G G^T`` for stable ``F``."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    G = np.asarray(G, dtype=float).reshape(F.shape[0], -1)
    rad = spectral_radius(F)
    if rad >= 1.0:
        raise NumericalError(f"Lyapunov equation needs a stable F; spectral radius {rad:.6g}")
    S = sla.solve_discrete_lyapunov(F, G @ G.T)
    return 0.5 * (S + S.T)


def _arma21(d1: float, d2: float, c0: float, c1: float):
    """Minimum-phase numerator ``n1 z + n2`` with ``n1^2 + n2^2 = c0`` and ``n1 n2 = c1``.

    The two roots of ``n^4 - c0 n^2 + c1^2 = 0`` give the pairs ``(n1, n2)`` and
    ``(n2, n1)``. The pair whose zero ``-n2/n1`` lies strictly inside the unit
    circle is kept; ties go to the smaller ``|zero|``.
    """
    disc = c0 * c0 - 4.0 * c1 * c1
    if disc < 0:
        if disc > -1e-14 * c0 * c0:
            disc = 0.0
        else:
            raise NumericalError(f"spectral factor: negative discriminant {disc:.3g}")
    root = math.sqrt(disc)
    candidates = []
    for n1_sq in ((c0 + root) / 2.0, (c0 - root) / 2.0):
        if n1_sq <= 0:
            continue
        n1 = math.sqrt(n1_sq)
        n2 = c1 / n1
        candidates.append((abs(n2 / n1), n1, n2))
    candidates = [c for c in candidates if c[0] < 1.0]
    if not candidates:
        raise NumericalError("spectral factor: no minimum-phase root")
    _, n1, n2 = min(candidates)
    F = np.array([[0.0, 1.0], [d1, d2]])
    if spectral_radius(F) >= 1.0:
        raise NumericalError("spectral factor: unstable denominator")
    return F, n1, n2


def realize_exponential(c: float, beta: float) -> Realization:
    """Realization of ``c * exp(-beta * |tau|)`` at integer lags."""
    if not (c > 0 and beta > 0):
        raise NumericalError(f"exponential realization needs c, beta > 0 (got {c}, {beta})")
    q = math.exp(-beta)
    F = np.array([[q]])
    G = np.array([[1.0]])
    H = np.array([math.sqrt(c * -math.expm1(-2.0 * beta))])
    return Realization(F, G, H, lyapunov_solve(F, G))


def cosine_exponential_factor(varrho: float, beta: float) -> tuple[float, float, float, float]:
    """Closed-form spectral factor of ``cos(varrho tau) exp(-beta |tau|)``.

    Returns ``(d1, d2, A, B)``: denominator ``z^2 - d2 z - d1`` and the
    numerator moments ``A = n1^2 + n2^2``, ``B = n1 n2``.
    """
    q = math.exp(-beta)
    one_m_q2 = -math.expm1(-2.0 * beta)
    A = one_m_q2 * (1.0 + q * q)
    B = -q * math.cos(varrho) * one_m_q2
    return -q * q, 2.0 * q * math.cos(varrho), A, B


def realize_cosine_exponential(amplitude: float, varrho: float, beta: float) -> Realization:
    """Realization of ``amplitude * cos(varrho tau) exp(-beta |tau|)`` in controllable form."""
    if not (amplitude >= 0 and beta > 0):
        raise NumericalError("cosine-exponential realization needs amplitude >= 0, beta > 0")
    d1, d2, A, B = cosine_exponential_factor(varrho, beta)
    F, n1, n2 = _arma21(d1, d2, A, B)
    G = np.array([[0.0], [1.0]])
    H = math.sqrt(amplitude) * np.array([n2, n1])
    return Realization(F, G, H, lyapunov_solve(F, G))


def realize_matern32(h: float, theta: float, Ts: float = 1.0) -> Realization:
    """Realization of the Matern-3/2 kernel sampled every ``Ts``.

    The sampled kernel ``h (1 + b|tau|) q^|tau|`` with ``b = sqrt(3) Ts / theta``
    and ``q = exp(-b)`` has a double pole at ``q`` and a first-order numerator.
    """
    if not (h > 0 and theta > 0 and Ts > 0):
        raise NumericalError("Matern realization needs h, theta, Ts > 0")
    b = math.sqrt(3.0) * Ts / theta
    q = math.exp(-b)
    q2 = q * q
    c0 = 1.0 - q2 * q2 - 4.0 * b * q2
    c1 = q * (b * (1.0 + q2) + q2 - 1.0)
    F, n1, n2 = _arma21(-q2, 2.0 * q, c0, c1)
    G = np.array([[0.0], [1.0]])
    H = math.sqrt(h) * np.array([n2, n1])
    return Realization(F, G, H, lyapunov_solve(F, G))


def stack(parts: list[Realization]) -> Realization:
    """Block-diagonal sum of independent stationary realizations."""
    F = sla.block_diag(*[p.F for p in parts])
    G = sla.block_diag(*[p.G for p in parts])
    H = np.concatenate([p.H for p in parts])
    S = sla.block_diag(*[p.init_cov for p in parts])
    return Realization(F, G, H, S)


def realize_composite(spec: TemporalKernelSpec, Ts: float = 1.0) -> Realization:
    """Realization of any stationary family in :mod:`stgp.kernels`."""
    fam = spec.family
    if fam is Family.EXP:
        return realize_exponential(spec["c"], Ts / spec["sigma"])
    if fam is Family.MATERN32:
        return realize_matern32(spec["h"], spec["theta"], Ts)
    if fam is Family.PD:
        return realize_cosine_exponential(
            spec["delta"], 2 * math.pi * spec["f"] * Ts, Ts / spec["sigma"]
        )
    if fam in (Family.TE2EXP, Family.TE2EXP_MATERN):
        delta, c, f = spec["delta"], spec["c"], spec["f"]
        beta = Ts / spec["sigma"]
        parts = [
            realize_exponential(delta * (1 - c + 0.75 * c * c), beta),
            realize_cosine_exponential(delta * (c - c * c), 2 * math.pi * f * Ts, beta),
            realize_cosine_exponential(delta * c * c / 4, 4 * math.pi * f * Ts, beta),
        ]
        if fam is Family.TE2EXP_MATERN:
            parts.append(realize_matern32(spec["h"], spec["theta"], Ts))
        return stack(parts)
    raise NumericalError(f"{fam.value} has no stationary realization; use realize_dc_input")


def damped_sine_input_ss(alpha: float = 1e-2, omega0: float = math.pi / 8):
    """``(E, F, H)`` generating ``u(t_j) = exp(-alpha j) sin(omega0 j)`` from an impulse.

    With ``z_0 = 0`` and ``z_{j+1} = E z_j + F [j == 0]``, ``u(t_j) = H z_j``.
    """
    E = np.array([[2 * math.exp(-alpha) * math.cos(omega0), -math.exp(-2 * alpha)], [1.0, 0.0]])
    F = np.array([1.0, 0.0])
    H = np.array([math.exp(-alpha) * math.sin(omega0), 0.0])
    return E, F, H


def realize_dc_input(
    delta: float,
    lam: float,
    rho: float,
    input_ss=None,
    n_b: int | None = None,
) -> Realization:
    """Time-varying realization of an FIR model with DC-kernel prior on the coefficients.

    State ``x_j = [a_j, z_j]``: ``a_j`` carries the j-th impulse-response
    coefficient ``b_j = sqrt(1 - rho^2) a_j`` and ``z_j`` convolves it with the
    input, so that ``H x_j = sum_{k<j} b_k u(t_{j-k})``. The coefficients obey
    ``Cov(b_k, b_k') = delta lam^((k+k'-2)/2) rho^|k-k'|``. With ``n_b`` set,
    coefficients beyond ``n_b`` are pinned to zero.
    """
    if input_ss is None:
        input_ss = damped_sine_input_ss()
    E, Fu, Hu = (np.asarray(a, dtype=float) for a in input_ss)
    Fu = Fu.ravel()
    Hu = Hu.ravel()
    nu = E.shape[0]
    if Fu.size != nu or Hu.size != nu:
        raise NumericalError("input state-space dimensions are inconsistent")
    rho = float(np.clip(rho, -RHO_CLAMP, RHO_CLAMP))
    r = 1 + nu
    F = np.zeros((r, r))
    F[0, 0] = math.sqrt(lam) * rho
    F[1:, 0] = math.sqrt(1 - rho * rho) * Fu
    F[1:, 1:] = E
    F_trunc = F.copy()
    F_trunc[0, 0] = 0.0
    H = np.concatenate([[0.0], Hu])
    init = np.zeros((r, r))
    init[0, 0] = delta / (1 - rho * rho)
    sqrt_delta = math.sqrt(delta)

    def step(j: int):
        G = np.zeros((r, 1))
        if n_b is not None and j >= n_b:
            return F_trunc, G
        G[0, 0] = sqrt_delta * lam ** (j / 2)
        return F, G

    return Realization(F, step(1)[1], H, init, step=step)


def realize(spec: TemporalKernelSpec, Ts: float = 1.0, input_ss=None, n_b: int | None = None):
    if spec.family is Family.DC_INPUT:
        return realize_dc_input(spec["delta"], spec["lam"], spec["rho"], input_ss, n_b)
    return realize_composite(spec, Ts)
