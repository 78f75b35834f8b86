"""Spatial and temporal kernel families.

Temporal kernels are written in physical time units; the realization module
converts them to per-sample quantities with the sampling interval ``Ts``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, InputError


class Family(str, enum.Enum):
    EXP = "exp"
    MATERN32 = "matern32"
    TE2EXP = "te2exp"
    TE2EXP_MATERN = "te2exp+matern"
    PD = "pd"
    DC = "dc"
    DC_INPUT = "dc-input"


# free hyper-parameters and fixed constants (with defaults) per family
PARAM_NAMES: dict[Family, tuple[str, ...]] = {
    Family.EXP: ("c", "sigma"),
    Family.MATERN32: ("h", "theta"),
    Family.TE2EXP: ("delta", "c"),
    Family.TE2EXP_MATERN: ("delta", "c", "h", "theta"),
    Family.PD: ("delta", "sigma"),
    Family.DC: ("delta", "lam", "rho"),
    Family.DC_INPUT: ("delta", "lam", "rho"),
}

FIXED_DEFAULTS: dict[Family, dict[str, float]] = {
    Family.TE2EXP: {"f": 1.0 / 12.0, "sigma": 5000.0},
    Family.TE2EXP_MATERN: {"f": 1.0 / 12.0, "sigma": 5000.0},
    Family.PD: {"f": 1.0 / 12.0},
}

STATIONARY = frozenset(
    {Family.EXP, Family.MATERN32, Family.TE2EXP, Family.TE2EXP_MATERN, Family.PD}
)

# h/delta must stay in this band for te2exp+matern
MATERN_RATIO_BOUNDS = (0.01, 0.1)


@dataclass(frozen=True)
class SpatialKernelSpec:
    alpha_se: float
    family: str = "se"

    def __post_init__(self):
        if self.family != "se":
            raise ConfigError(f"unknown spatial kernel family {self.family!r}")
        if not (self.alpha_se > 0 and math.isfinite(self.alpha_se)):
            raise ConfigError(f"alpha_se must be positive and finite, got {self.alpha_se}")


@dataclass(frozen=True)
class TemporalKernelSpec:
    family: Family
    params: Mapping[str, float]
    fixed: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        try:
            fam = Family(self.family)
        except ValueError:
            raise ConfigError(f"unknown temporal kernel family {self.family!r}") from None
        object.__setattr__(self, "family", fam)
        names = PARAM_NAMES[fam]
        params = {k: float(v) for k, v in dict(self.params).items()}
        missing = [n for n in names if n not in params]
        extra = [n for n in params if n not in names]
        if missing or extra:
            raise ConfigError(
                f"{fam.value}: expected params {names}, missing {missing}, unexpected {extra}"
            )
        fixed = dict(FIXED_DEFAULTS.get(fam, {}))
        for k, v in dict(self.fixed).items():
            if k not in fixed:
                raise ConfigError(f"{fam.value}: unknown fixed constant {k!r}")
            fixed[k] = float(v)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "fixed", fixed)
        _validate(fam, params, fixed)

    def __getitem__(self, name: str) -> float:
        if name in self.params:
            return self.params[name]
        return self.fixed[name]

    @property
    def stationary(self) -> bool:
        return self.family in STATIONARY

    def replace(self, **params) -> "TemporalKernelSpec":
        return TemporalKernelSpec(self.family, {**self.params, **params}, self.fixed)

    def to_dict(self) -> dict:
        return {"family": self.family.value, "params": dict(self.params), "fixed": dict(self.fixed)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TemporalKernelSpec":
        unknown = set(d) - {"family", "params", "fixed"}
        if unknown:
            raise ConfigError(f"unknown kernel spec keys {sorted(unknown)}")
        return cls(d["family"], d.get("params", {}), d.get("fixed", {}))


def _validate(fam: Family, p: dict, fixed: dict) -> None:
    def positive(*names):
        for n in names:
            if not p[n] > 0:
                raise ConfigError(f"{fam.value}: {n} must be > 0, got {p[n]}")

    if fam is Family.EXP:
        positive("c", "sigma")
    elif fam is Family.MATERN32:
        positive("h", "theta")
    elif fam in (Family.TE2EXP, Family.TE2EXP_MATERN):
        positive("delta")
        if not 0.0 <= p["c"] < 1.0:
            raise ConfigError(f"{fam.value}: c must lie in [0, 1), got {p['c']}")
        if not fixed["sigma"] > 0:
            raise ConfigError(f"{fam.value}: sigma must be > 0")
        if fam is Family.TE2EXP_MATERN:
            positive("h", "theta")
            lo, hi = MATERN_RATIO_BOUNDS
            ratio = p["h"] / p["delta"]
            if not lo * (1 - 1e-12) <= ratio <= hi * (1 + 1e-12):
                raise ConfigError(f"te2exp+matern: h/delta = {ratio:.4g} outside [{lo}, {hi}]")
    elif fam is Family.PD:
        positive("delta", "sigma")
    elif fam in (Family.DC, Family.DC_INPUT):
        if not p["delta"] >= 0:
            raise ConfigError(f"{fam.value}: delta must be >= 0")
        if not 0.0 <= p["lam"] < 1.0:
            raise ConfigError(f"{fam.value}: lam must lie in [0, 1), got {p['lam']}")
        if not abs(p["rho"]) <= 1.0:
            raise ConfigError(f"{fam.value}: |rho| must be <= 1, got {p['rho']}")


def eval_spatial_gram(spec: SpatialKernelSpec, locations) -> np.ndarray:
    """SE Gram matrix ``exp(-||p_i - p_k||^2 / alpha_se)`` over ``locations`` (M x nu)."""
    P = np.atleast_2d(np.asarray(locations, dtype=float))
    if P.size == 0:
        raise InputError("no locations given")
    if not np.all(np.isfinite(P)):
        raise InputError("location coordinates must be finite")
    K = np.exp(-cdist(P, P, "sqeuclidean") / spec.alpha_se)
    return 0.5 * (K + K.T)


def _te2_exp(delta, c, f, sigma, tau):
    a = np.abs(tau)
    periodic = (
        (1 - c + 0.75 * c**2)
        + (c - c**2) * np.cos(2 * np.pi * f * a)
        + 0.25 * c**2 * np.cos(4 * np.pi * f * a)
    )
    return delta * periodic * np.exp(-a / sigma)


def _matern32(h, theta, tau):
    s = math.sqrt(3.0) * np.abs(tau) / theta
    return h * (1 + s) * np.exp(-s)


def eval_dc(delta, lam, rho, t, t2):
    t = np.asarray(t, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    with np.errstate(divide="ignore"):
        # 0**0 must be 1 so that lam = 0 still gives delta at t = t2 = 0
        return delta * np.power(lam, (t + t2) / 2) * np.power(rho, np.abs(t - t2))


def eval_temporal(spec: TemporalKernelSpec, t, t2=None):
    """Evaluate the temporal kernel.

    Stationary families take a lag (``t``) or a pair of times. The DC families
    need both times. ``dc-input`` has no closed form in terms of two times
    alone; use :func:`input_convolved_gram`.
    """
    fam = spec.family
    if fam in (Family.DC, Family.DC_INPUT):
        if t2 is None:
            raise ConfigError("DC kernel is not stationary; pass both times")
        if fam is Family.DC_INPUT:
            raise ConfigError("dc-input kernel needs the input signal; use input_convolved_gram")
        return eval_dc(spec["delta"], spec["lam"], spec["rho"], t, t2)
    tau = np.asarray(t, dtype=float) if t2 is None else np.asarray(t, float) - np.asarray(t2, float)
    if not np.all(np.isfinite(tau)):
        raise InputError("lag must be finite")
    if fam is Family.EXP:
        return spec["c"] * np.exp(-np.abs(tau) / spec["sigma"])
    if fam is Family.MATERN32:
        return _matern32(spec["h"], spec["theta"], tau)
    if fam is Family.PD:
        a = np.abs(tau)
        return spec["delta"] * np.cos(2 * np.pi * spec["f"] * a) * np.exp(-a / spec["sigma"])
    base = _te2_exp(spec["delta"], spec["c"], spec["f"], spec["sigma"], tau)
    if fam is Family.TE2EXP_MATERN:
        base = base + _matern32(spec["h"], spec["theta"], tau)
    return base


def eval_temporal_gram(spec: TemporalKernelSpec, times) -> np.ndarray:
    t = np.asarray(times, dtype=float).ravel()
    if t.size == 0:
        raise InputError("no time points given")
    if not np.all(np.isfinite(t)):
        raise InputError("time points must be finite")
    K = np.asarray(eval_temporal(spec, t[:, None], t[None, :]), dtype=float)
    return 0.5 * (K + K.T)


def dc_prior_cov(n_b: int, delta: float, lam: float, rho: float) -> np.ndarray:
    """Prior covariance of FIR coefficients ``b_1..b_n_b`` under the DC kernel.

    Coefficient ``b_k`` sits at DC time ``k - 1`` so that ``b_1`` has variance
    ``delta``; this matches the state-space realization in ``realize_dc_input``.
    """
    k = np.arange(n_b, dtype=float)
    return eval_dc(delta, lam, rho, k[:, None], k[None, :])


def input_toeplitz(u, n_rows: int, n_b: int) -> np.ndarray:
    """Regression matrix ``Phi[j-1, k-1] = u(t_{j-k})`` for j = 1..n_rows, k = 1..n_b.

    ``u`` holds ``u(t_0), u(t_1), ...``; negative times contribute zero.
    """
    u = np.asarray(u, dtype=float)
    Phi = np.zeros((n_rows, n_b))
    for k in range(1, n_b + 1):
        idx = np.arange(1, n_rows + 1) - k
        ok = (idx >= 0) & (idx < u.size)
        Phi[ok, k - 1] = u[idx[ok]]
    return Phi


def input_convolved_gram(spec: TemporalKernelSpec, u, n_times: int, n_b: int) -> np.ndarray:
    """Output covariance of an FIR model with a DC prior on its coefficients.

    ``K[j, j'] = sum_{k,k'} kappa(k, k') u(t_{j-k}) u(t_{j'-k'})``, times 1..n_times.
    """
    if spec.family not in (Family.DC, Family.DC_INPUT):
        raise ConfigError("input_convolved_gram needs a DC family spec")
    Phi = input_toeplitz(u, n_times, n_b)
    K = Phi @ dc_prior_cov(n_b, spec["delta"], spec["lam"], spec["rho"]) @ Phi.T
    return 0.5 * (K + K.T)


# -- plain-text config -------------------------------------------------------


def _parse_scalar(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        if "/" in text:
            num, den = text.split("/", 1)
            return float(num) / float(den)
        raise ConfigError(f"not a number: {text!r}") from None


def parse_kernel_config(text: str) -> TemporalKernelSpec:
    """Parse a temporal kernel spec from JSON or ``key=value`` lines.

    ``key=value`` form: ``family=te2exp``, ``delta=1``, ``c=0.3``,
    ``fixed.f=1/12``, ``fixed.sigma=5000``. ``#`` starts a comment.
    """
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            return TemporalKernelSpec.from_dict(json.loads(stripped))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad kernel JSON: {exc}") from None
    family = None
    params, fixed = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "family":
            family = value
        elif key.startswith("fixed."):
            fixed[key[6:]] = _parse_scalar(value)
        else:
            params[key] = _parse_scalar(value)
    if family is None:
        raise ConfigError("kernel config has no family")
    return TemporalKernelSpec(family, params, fixed)


def format_kernel_config(spec: TemporalKernelSpec) -> str:
    lines = [f"family={spec.family.value}"]
    lines += [f"{k}={v!r}" for k, v in spec.params.items()]
    lines += [f"fixed.{k}={v!r}" for k, v in spec.fixed.items()]
    return "\n".join(lines) + "\n"
