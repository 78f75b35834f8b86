"""Block-decoupled spatial-temporal state-space model.

With ``K_s = Lambda D Lambda^T`` the lifted model ``y_j = K_s^{1/2}(I (x) H) s_j + v_j``
becomes, after ``x_j = (Lambda^T (x) I) s_j`` and ``l_j = Lambda^T y_j``, M
independent single-output models that share ``F`` and ``G`` and differ only
in the output scale ``sqrt(d_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .realize import Realization

SYM_TOL = 1e-10
CLIP_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class TransformedModel:
    Lambda: np.ndarray
    d: np.ndarray
    realization: Realization
    sigma2: float
    Ts: float = 1.0

    @property
    def M(self) -> int:
        return self.d.size

    @property
    def r(self) -> int:
        return self.realization.r

    @property
    def scale(self) -> np.ndarray:
        """Per-block output scale ``sqrt(d_i)``; block i has ``H_i = scale[i] * H``."""
        return np.sqrt(self.d)

    @property
    def block_H(self) -> np.ndarray:
        return self.scale[:, None] * self.realization.H[None, :]


def decompose_spatial(K_s) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric eigendecomposition ``K_s = Lambda diag(d) Lambda^T``.

    ``d`` is sorted descending with small negative eigenvalues clipped to 0;
    each eigenvector's first nonzero entry is made positive.
    """
    K = np.atleast_2d(np.asarray(K_s, dtype=float))
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InputError(f"spatial Gram must be square, got shape {K.shape}")
    if not np.all(np.isfinite(K)):
        raise InputError("spatial Gram has non-finite entries")
    scale = max(np.max(np.abs(K)), 1.0)
    if np.max(np.abs(K - K.T)) > SYM_TOL * scale:
        raise InputError("spatial Gram is not symmetric")
    d, Lam = np.linalg.eigh(0.5 * (K + K.T))
    order = np.argsort(-d, kind="stable")
    d, Lam = d[order], Lam[:, order]
    tr = max(float(np.trace(K)), np.finfo(float).tiny)
    if d.size and d[-1] < -CLIP_TOL * tr:
        raise InputError(f"spatial Gram is not PSD (min eigenvalue {d[-1]:.3g})")
    d = np.clip(d, 0.0, None)
    for k in range(Lam.shape[1]):
        col = Lam[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            Lam[:, k] = -col
    return Lam, d


def build_transformed_model(
    realization: Realization, K_s, sigma2: float, Ts: float = 1.0
) -> TransformedModel:
    Lam, d = decompose_spatial(K_s)
    if not sigma2 >= 0:
        raise InputError(f"noise variance must be >= 0, got {sigma2}")
    return TransformedModel(Lam, d, realization, float(sigma2), Ts)


def transform_outputs(model: TransformedModel, Y) -> np.ndarray:
    """``L = Lambda^T Y`` for an M x N panel with no missing values."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != model.M:
        raise InputError(f"panel has {Y.shape[0]} locations, model has {model.M}")
    if np.isnan(Y).any():
        raise InputError("panel has missing values; run fill-missing first")
    return model.Lambda.T @ Y


def untransform_field(model: TransformedModel, xhat) -> np.ndarray:
    """Field ``Lambda (sqrt(d_i) H x_i)_i`` from block states.

    ``xhat`` is ``(M, r)`` for a single time or ``(T, M, r)``; the result is
    ``(M,)`` or ``(M, T)`` respectively.
    """
    x = np.asarray(xhat, dtype=float)
    z = model.scale * (x @ model.realization.H)
    return model.Lambda @ (z.T if z.ndim == 2 else z)


def untransform_variance(model: TransformedModel, Pblocks) -> np.ndarray:
    """Marginal field variances from per-block covariances ``(T, M, r, r)`` -> ``(M, T)``.

    Blocks are independent a posteriori, so the variance at location m is
    ``sum_i Lambda[m, i]^2 d_i H P_i H^T``.
    """
    H = model.realization.H
    v = model.d * np.einsum("...ij,i,j->...", np.asarray(Pblocks), H, H)
    return (model.Lambda**2) @ v.T
