"""MLM, GCV and SURE costs from one filter pass, plus multi-start optimization.

GCV and SURE need the residual energy ``S`` and the degrees of freedom
``delta``. Both are derivatives of the MLM quantities with respect to the
noise variance ``g``::

    delta = NM - g * d(logdet)/dg        S = -g^2 * d(quad)/dg

so the filter is run together with the derivatives ``zeta = dx_{j|j-1}/dg``
and ``Pi = dP_{j|j-1}/dg`` (both zero at j = 1).
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigError, InputError, NumericalError
from .kalman import _check_mask
from .stmodel import TransformedModel

FLOOR_REL = 1e-12
FAIL_COST = 1e300


@dataclass
class CostReport:
    method: str
    value: float
    logdet: float = math.nan
    quad: float = math.nan
    S: float = math.nan
    delta: float = math.nan
    n_obs: int = 0
    n_floored: int = 0
    trace: list = field(default_factory=list)


def cost_pass(model: TransformedModel, L, mask=None, sensitivity: bool = False) -> CostReport:
    """Single filter pass accumulating ``logdet``, ``quad`` and optionally ``S``, ``delta``.

    Nothing is stored per step, so memory is O(M r^2).
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
    H, s, g = real.H, model.scale, model.sigma2
    d = s * s
    floor = g * FLOOR_REL

    x = np.zeros((M, r))
    P = np.broadcast_to(real.init_cov, (M, r, r)).copy()
    if sensitivity:
        zeta = np.zeros((M, r))
        Pi = np.zeros((M, r, r))
    logdet = quad = S_sum = dlog_sum = 0.0
    n_floored = 0
    n_obs = 0
    const_F = real.stationary
    if const_F:
        F, Q = real.transition(1)
    for n in range(N):
        PH = P @ H
        E = d * (PH @ H) + g
        if not np.all(np.isfinite(E)) or np.any(E <= 0):
            raise NumericalError(f"innovation variance <= 0 at step {n + 1}")
        low = E < floor
        if low.any():
            n_floored += int(low.sum())
            E = np.maximum(E, floor)
        obs = np.ones(M, dtype=bool) if mask is None else ~mask[:, n]
        e = np.where(obs, L[:, n] - s * (x @ H), 0.0)
        n_obs += int(obs.sum())
        logdet += float(np.sum(np.log(E[obs])))
        quad += float(np.sum(e[obs] ** 2 / E[obs]))
        w = np.where(obs, 1.0 / E, 0.0)  # zero gain on missing entries
        K = (s * w)[:, None] * PH
        KK = K[:, :, None] * K[:, None, :]
        if sensitivity:
            PiH = Pi @ H
            dE = d * (PiH @ H) + 1.0
            hz = s * (zeta @ H)
            S_sum += float(np.sum((e * e * dE * w * w + 2.0 * e * hz * w)[obs]))
            dlog_sum += float(np.sum((dE * w)[obs]))
            dK = (s * w)[:, None] * PiH - (s * w * w * dE)[:, None] * PH
            dx = zeta + dK * e[:, None] - K * hz[:, None]
            dKK = dK[:, :, None] * K[:, None, :]
            dP = Pi - E[:, None, None] * (dKK + np.swapaxes(dKK, -1, -2)) - dE[:, None, None] * KK
        x = x + K * e[:, None]
        P = P - E[:, None, None] * KK
        if not const_F:
            F, Q = real.transition(n + 1)
        x = x @ F.T
        P = F @ P @ F.T + Q
        P = 0.5 * (P + np.swapaxes(P, -1, -2))
        if sensitivity:
            zeta = dx @ F.T
            Pi = F @ dP @ F.T
            Pi = 0.5 * (Pi + np.swapaxes(Pi, -1, -2))
    rep = CostReport(
        "mlm",
        0.5 * (n_obs * math.log(2 * math.pi) + logdet + quad),
        logdet=logdet,
        quad=quad,
        n_obs=n_obs,
        n_floored=n_floored,
    )
    if sensitivity:
        rep.S = g * g * S_sum
        rep.delta = n_obs - g * dlog_sum
    if n_floored:
        warnings.warn(f"{n_floored} innovation variances floored at sigma2*{FLOOR_REL}", RuntimeWarning)
    return rep


def mlm_cost(model: TransformedModel, L, mask=None) -> CostReport:
    return cost_pass(model, L, mask)


def gcv_sure_costs(model: TransformedModel, L, mask=None) -> tuple[CostReport, CostReport]:
    base = cost_pass(model, L, mask, sensitivity=True)
    nm = base.n_obs
    if abs(nm - base.delta) <= 1e-12 * nm:
        raise NumericalError("degenerate fit: delta equals NM, GCV undefined")
    gcv = replace(base, method="gcv", value=base.S / (nm * (1.0 - base.delta / nm) ** 2))
    sure = replace(base, method="sure", value=base.S + 2.0 * model.sigma2 * base.delta)
    return gcv, sure


def finite_diff_check(model: TransformedModel, L, h: float | None = None, mask=None) -> dict:
    """Compare recursive ``(S, delta)`` with central differences in the noise variance.

    Relative errors are measured on the derivatives of ``logdet`` and ``quad``.
    """
    g = model.sigma2
    h = 1e-5 * g if h is None else h
    if g - h <= 0:
        raise ConfigError("finite-difference step must keep the noise variance positive")
    plus = cost_pass(replace(model, sigma2=g + h), L, mask)
    minus = cost_pass(replace(model, sigma2=g - h), L, mask)
    rec = cost_pass(model, L, mask, sensitivity=True)
    dlog = (plus.logdet - minus.logdet) / (2 * h)
    dquad = (plus.quad - minus.quad) / (2 * h)
    # the recursion predicts d(logdet)/dg = (NM - delta)/g and d(quad)/dg = -S/g^2
    dlog_rec = (rec.n_obs - rec.delta) / g
    dquad_rec = -rec.S / (g * g)
    return {
        "delta": rec.delta,
        "delta_fd": rec.n_obs - g * dlog,
        "S": rec.S,
        "S_fd": -g * g * dquad,
        "rel_err_delta": abs(dlog_rec - dlog) / max(abs(dlog), 1e-300),
        "rel_err_S": abs(dquad_rec - dquad) / max(abs(dquad), 1e-300),
    }


# -- box-constrained multi-start search --------------------------------------


@dataclass(frozen=True)
class Param:
    name: str
    lo: float
    hi: float
    log: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise ConfigError(f"{self.name}: box [{self.lo}, {self.hi}] is not a finite interval")
        if self.log and self.lo <= 0:
            raise ConfigError(f"{self.name}: log transform needs a positive box")

    def to_internal(self, v):
        return math.log(v) if self.log else v

    def from_internal(self, z):
        return math.exp(z) if self.log else z

    def grid(self, n: int) -> np.ndarray:
        if n == 1:
            return np.array([math.sqrt(self.lo * self.hi) if self.log else 0.5 * (self.lo + self.hi)])
        if self.log:
            return np.geomspace(self.lo, self.hi, n)
        return np.linspace(self.lo, self.hi, n)


@dataclass
class HyperParams:
    params: list[Param]
    theta: np.ndarray | None = None

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def as_dict(self, theta=None) -> dict:
        theta = self.theta if theta is None else theta
        return dict(zip(self.names, map(float, theta)))

    def to_internal(self, theta) -> np.ndarray:
        return np.array([p.to_internal(v) for p, v in zip(self.params, theta)])

    def from_internal(self, z) -> np.ndarray:
        return np.array([p.from_internal(v) for p, v in zip(self.params, z)])

    def bounds_internal(self):
        return [(p.to_internal(p.lo), p.to_internal(p.hi)) for p in self.params]

    def make_grid(self, spec) -> list[np.ndarray]:
        """Cartesian grid from an int (points per component) or per-name lists."""
        if isinstance(spec, int):
            axes = [p.grid(spec) for p in self.params]
        else:
            axes = []
            for p in self.params:
                v = spec.get(p.name, 5)
                axes.append(p.grid(v) if isinstance(v, int) else np.asarray(v, dtype=float))
        if any(a.size == 0 for a in axes):
            raise ConfigError("empty grid axis")
        return [np.array(c) for c in itertools.product(*axes)]


@dataclass
class OptimResult:
    theta: np.ndarray
    value: float
    params: HyperParams
    trace: list  # (eval index, stage, cost, *theta)
    grid_best: float
    starts: list


def _safe(costfn, theta):
    try:
        v = float(costfn(theta))
    except (NumericalError, ConfigError, np.linalg.LinAlgError, FloatingPointError):
        return math.inf
    return v if math.isfinite(v) else math.inf


def optimize(
    costfn: Callable[[np.ndarray], float],
    hp: HyperParams,
    grid=5,
    n_starts: int = 5,
    workers: int = 1,
    maxiter: int = 200,
) -> OptimResult:
    """Grid scan, then bounded local searches from the ``n_starts`` best grid points.

    Local search is L-BFGS-B with finite-difference gradients in internal
    coordinates (log for positive scale parameters). Ties between grid points
    are broken by grid index, so results are deterministic.
    """
    points = hp.make_grid(grid)
    trace: list = []
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            values = list(ex.map(lambda t: _safe(costfn, t), points))
    else:
        values = [_safe(costfn, t) for t in points]
    for t, v in zip(points, values):
        trace.append((len(trace), "grid", v, *t))
    finite = [(v, i) for i, v in enumerate(values) if math.isfinite(v)]
    if not finite:
        raise NumericalError(f"all {len(points)} grid evaluations failed")
    finite.sort()
    starts = [i for _, i in finite[: max(1, min(n_starts, len(finite)))]]
    bounds = hp.bounds_internal()

    def run(i):
        local = []

        def f(z):
            theta = hp.from_internal(np.clip(z, [b[0] for b in bounds], [b[1] for b in bounds]))
            v = _safe(costfn, theta)
            local.append((f"start{i}", v, *theta))
            return v if math.isfinite(v) else FAIL_COST

        z0 = hp.to_internal(points[i])
        res = minimize(f, z0, method="L-BFGS-B", bounds=bounds, options={"maxiter": maxiter})
        theta = hp.from_internal(np.clip(res.x, [b[0] for b in bounds], [b[1] for b in bounds]))
        return _safe(costfn, theta), theta, local

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            runs = list(ex.map(run, starts))
    else:
        runs = [run(i) for i in starts]
    best_v, best_t = values[starts[0]], points[starts[0]]
    for i, (v, theta, local) in zip(starts, runs):
        for row in local:
            trace.append((len(trace), *row))
        if v < best_v:
            best_v, best_t = v, theta
    out = HyperParams(hp.params, np.asarray(best_t, dtype=float))
    return OptimResult(out.theta, best_v, out, trace, finite[0][0], starts)


def write_trace(path, result: OptimResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "stage", "cost", *result.params.names])
        for row in result.trace:
            w.writerow(row)


def check_box(hp: HyperParams, theta: Sequence[float]) -> None:
    for p, v in zip(hp.params, theta):
        if not p.lo <= v <= p.hi:
            raise ConfigError(f"{p.name}={v} outside [{p.lo}, {p.hi}]")
