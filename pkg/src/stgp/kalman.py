"""Decoupled Kalman filter, RTS smoother and predictor.

All M blocks of a :class:`~stgp.stmodel.TransformedModel` share ``F`` and
``Q`` and have scalar outputs, so each recursion runs on stacked ``(M, r)``
means and ``(M, r, r)`` covariances; the innovation covariance is diagonal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError
from .stmodel import TransformedModel, untransform_field, untransform_variance

PINV_RTOL = 1e-12


@dataclass
class FilterResult:
    """Filter output, arrays indexed by time ``j - 1`` then block."""

    xpred: np.ndarray  # (N, M, r)   x_{j|j-1}
    Ppred: np.ndarray  # (N, M, r, r)
    xfilt: np.ndarray  # (N, M, r)   x_{j|j}
    Pfilt: np.ndarray
    innov: np.ndarray  # (N, M)
    innov_var: np.ndarray  # (N, M)
    mask: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.innov.shape[0]


@dataclass
class PosteriorField:
    """Smoothed (times 1..N) and predicted (N+1..N+N_T) field estimates."""

    fhat: np.ndarray  # (M, N + N_T)
    field_var: np.ndarray  # (M, N + N_T)
    block_mean: np.ndarray  # (N + N_T, M, r)
    block_cov: np.ndarray  # (N + N_T, M, r, r)
    n_train: int

    @property
    def smoothed(self) -> np.ndarray:
        return self.fhat[:, : self.n_train]

    @property
    def predicted(self) -> np.ndarray:
        return self.fhat[:, self.n_train :]


def _sym(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def measurement_update(x, P, l, scale, H, sigma2):
    """One scalar-output update per block; Joseph form for the covariance.

    Returns ``(x_filt, P_filt, e, E, K)``.
    """
    PH = P @ H
    E = scale**2 * (PH @ H) + sigma2
    e = l - scale * (x @ H)
    K = (scale / E)[:, None] * PH
    xf = x + K * e[:, None]
    A = np.eye(H.size) - K[:, :, None] * (scale[:, None] * H[None, :])[:, None, :]
    Pf = A @ P @ np.swapaxes(A, -1, -2) + sigma2 * K[:, :, None] * K[:, None, :]
    return xf, _sym(Pf), e, E, K


def _check_mask(model: TransformedModel, L, mask):
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != L.shape:
        raise InputError(f"mask shape {mask.shape} does not match data {L.shape}")
    if model.M != 1:
        raise InputError(
            "missing-data masks are only supported for single-location models; "
            "fill each location first"
        )
    return mask


def filter_pass(model: TransformedModel, L, mask=None) -> FilterResult:
    """Kalman filter over transformed outputs ``L`` (M x N).

    ``mask[i, j]`` True marks a missing value: the measurement update is
    skipped and the prediction is carried through.
    """
    L = np.asarray(L, dtype=float)
    if L.ndim == 1:
        L = L[None, :]
    M, N = L.shape
    if M != model.M:
        raise InputError(f"data has {M} rows, model has {model.M} blocks")
    mask = _check_mask(model, L, mask)
    real = model.realization
    r = real.r
    H, scale, sigma2 = real.H, model.scale, model.sigma2

    xpred = np.zeros((N, M, r))
    Ppred = np.zeros((N, M, r, r))
    xfilt = np.zeros((N, M, r))
    Pfilt = np.zeros((N, M, r, r))
    innov = np.zeros((N, M))
    innov_var = np.zeros((N, M))

    x = np.zeros((M, r))
    P = np.broadcast_to(real.init_cov, (M, r, r)).copy()
    for n in range(N):
        xpred[n], Ppred[n] = x, P
        l = L[:, n] if mask is None else np.where(mask[:, n], 0.0, L[:, n])
        xf, Pf, e, E, _ = measurement_update(x, P, l, scale, H, sigma2)
        bad = ~(E > 0) | ~np.isfinite(E)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise NumericalError(f"innovation variance {E[i]:.3g} <= 0 at block {i}, step {n + 1}")
        if mask is not None:
            skip = mask[:, n]
            xf = np.where(skip[:, None], x, xf)
            Pf = np.where(skip[:, None, None], P, Pf)
        xfilt[n], Pfilt[n], innov[n], innov_var[n] = xf, Pf, e, E
        F, Q = real.transition(n + 1)
        x = xf @ F.T
        P = _sym(F @ Pf @ F.T + Q)
    return FilterResult(xpred, Ppred, xfilt, Pfilt, innov, innov_var, mask)


def _psd_pinv(P, rtol=PINV_RTOL):
    """Pseudo-inverse of stacked symmetric PSD matrices, cut at ``rtol * trace``.

    Returns ``(Pinv, truncated)`` where ``truncated`` flags blocks that lost rank.
    """
    w, V = np.linalg.eigh(P)
    tr = np.trace(P, axis1=-2, axis2=-1)
    cut = rtol * np.maximum(tr, np.finfo(float).tiny)
    keep = w > cut[..., None]
    winv = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    Pinv = (V * winv[..., None, :]) @ np.swapaxes(V, -1, -2)
    return Pinv, ~keep.all(axis=-1)


def smoother_pass(model: TransformedModel, fr: FilterResult):
    """RTS smoother; returns smoothed block means ``(N, M, r)`` and covariances."""
    N = fr.N
    xs = fr.xfilt.copy()
    Ps = fr.Pfilt.copy()
    n_trunc = 0
    real = model.realization
    for n in range(N - 2, -1, -1):
        F, _ = real.transition(n + 1)
        Pinv, trunc = _psd_pinv(fr.Ppred[n + 1])
        n_trunc += int(trunc.sum())
        J = fr.Pfilt[n] @ F.T @ Pinv
        xs[n] = fr.xfilt[n] + (J @ (xs[n + 1] - fr.xpred[n + 1])[..., None])[..., 0]
        Ps[n] = _sym(fr.Pfilt[n] + J @ (Ps[n + 1] - fr.Ppred[n + 1]) @ np.swapaxes(J, -1, -2))
    if n_trunc:
        warnings.warn(
            f"smoother used a pseudo-inverse for {n_trunc} rank-deficient predicted covariances",
            RuntimeWarning,
            stacklevel=2,
        )
    return xs, Ps


def predictor_pass(model: TransformedModel, x_last, P_last, horizon: int, start: int):
    """Open-loop propagation from the smoothed state at time ``start`` (= N)."""
    real = model.realization
    M, r = x_last.shape
    xp = np.zeros((horizon, M, r))
    Pp = np.zeros((horizon, M, r, r))
    x, P = x_last, P_last
    for k in range(horizon):
        F, Q = real.transition(start + k)
        x = x @ F.T
        P = _sym(F @ P @ F.T + Q)
        xp[k], Pp[k] = x, P
    return xp, Pp


def posterior(model: TransformedModel, L, horizon: int = 0, mask=None) -> PosteriorField:
    """Filter, smooth and predict; assemble the field in location coordinates."""
    fr = filter_pass(model, L, mask)
    xs, Ps = smoother_pass(model, fr)
    if horizon > 0:
        xp, Pp = predictor_pass(model, xs[-1], Ps[-1], horizon, fr.N)
        xs = np.concatenate([xs, xp])
        Ps = np.concatenate([Ps, Pp])
    fhat = untransform_field(model, xs)
    fvar = np.clip(untransform_variance(model, Ps), 0.0, None)
    return PosteriorField(fhat, fvar, xs, Ps, fr.N)
