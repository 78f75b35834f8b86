"""Panel ingestion, hyper-parameter fitting glue, missing-data filling and fit metrics."""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, NumericalError
from .hyper import CostReport, HyperParams, OptimResult, Param, cost_pass, gcv_sure_costs, optimize
from .kalman import posterior
from .kernels import (
    MATERN_RATIO_BOUNDS,
    PARAM_NAMES,
    Family,
    SpatialKernelSpec,
    TemporalKernelSpec,
    eval_spatial_gram,
)
from .realize import realize
from .stmodel import TransformedModel, build_transformed_model, transform_outputs

METHODS = ("mlm", "gcv", "sure")


@dataclass
class DataPanel:
    """M locations by T = N + N_T sampling times, NaN where missing."""

    values: np.ndarray  # (M, T)
    locations: np.ndarray  # (M, nu)
    ids: list[str]
    times: np.ndarray  # (T,)
    Ts: float = 1.0
    n_train: int | None = None
    missing: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.locations = np.atleast_2d(np.asarray(self.locations, dtype=float))
        self.times = np.asarray(self.times, dtype=float)
        M, T = self.values.shape
        if self.locations.shape[0] != M or len(self.ids) != M:
            raise InputError(f"{M} data columns but {self.locations.shape[0]} locations")
        if self.times.size != T:
            raise InputError("time index length does not match the panel")
        if self.n_train is None:
            self.n_train = T
        if not 1 <= self.n_train <= T:
            raise InputError(f"training length {self.n_train} outside 1..{T}")
        self.missing = np.isnan(self.values)
        empty = np.flatnonzero(self.missing.all(axis=1))
        if empty.size:
            raise InputError(f"location {self.ids[empty[0]]!r} has no observations")

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def n_test(self) -> int:
        return self.values.shape[1] - self.n_train

    @property
    def train(self) -> np.ndarray:
        return self.values[:, : self.n_train]

    @property
    def test(self) -> np.ndarray:
        return self.values[:, self.n_train :]

    def with_values(self, values) -> "DataPanel":
        return DataPanel(values, self.locations, list(self.ids), self.times, self.Ts, self.n_train)


@dataclass(frozen=True)
class PanelConfig:
    coords: str = "raw"  # "raw" (e.g. lon/lat degrees) or "ecef" (metres, divided by unit)
    unit: float = 1e4
    n_train: int | None = None
    n_test: int = 0

    def __post_init__(self):
        if self.coords not in ("raw", "ecef"):
            raise ConfigError(f"unknown coordinate style {self.coords!r}")
        if not self.unit > 0:
            raise ConfigError("coordinate unit must be positive")


def _cell(text: str, path, lineno: int) -> float:
    t = text.strip()
    if t == "" or t.lower() == "nan":
        return math.nan
    try:
        return float(t)
    except ValueError:
        raise InputError(f"{path}:{lineno}: not a number: {text!r}") from None


def _read_rows(path):
    try:
        with open(path, newline="") as fh:
            return [(i, row) for i, row in enumerate(csv.reader(fh), 1) if row and any(c.strip() for c in row)]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None


def load_panel(data_path, locations_path, config: PanelConfig = PanelConfig()) -> DataPanel:
    """Read a data CSV (header of location IDs, first column time) and a locations CSV.

    The locations file has one row per ID followed by the coordinates; a
    leading header row is skipped when its coordinates are not numeric.
    """
    rows = _read_rows(data_path)
    if len(rows) < 2:
        raise InputError(f"{data_path}: need a header and at least one data row")
    _, header = rows[0]
    ids = [h.strip() for h in header[1:]]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise InputError(f"{data_path}:1: duplicate location {dup!r}")
    times, values = [], []
    for lineno, row in rows[1:]:
        if len(row) != len(header):
            raise InputError(f"{data_path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        t = _cell(row[0], data_path, lineno)
        if math.isnan(t):
            raise InputError(f"{data_path}:{lineno}: missing time index")
        if times and t <= times[-1]:
            raise InputError(f"{data_path}:{lineno}: time index not increasing")
        times.append(t)
        values.append([_cell(c, data_path, lineno) for c in row[1:]])
    times_a = np.array(times)
    steps = np.diff(times_a)
    Ts = float(steps[0]) if steps.size else 1.0
    if steps.size and np.max(np.abs(steps - Ts)) > 1e-9 * abs(Ts):
        raise InputError(f"{data_path}: time index is not uniformly sampled")

    coords: dict[str, list[float]] = {}
    nu = None
    for k, (lineno, row) in enumerate(_read_rows(locations_path)):
        key = row[0].strip()
        try:
            vec = [float(c) for c in row[1:]]
        except ValueError:
            if k == 0:
                continue
            raise InputError(f"{locations_path}:{lineno}: non-numeric coordinate") from None
        if not vec:
            raise InputError(f"{locations_path}:{lineno}: no coordinates")
        if nu is None:
            nu = len(vec)
        elif len(vec) != nu:
            raise InputError(f"{locations_path}:{lineno}: expected {nu} coordinates, got {len(vec)}")
        if key in coords:
            raise InputError(f"{locations_path}:{lineno}: duplicate location {key!r}")
        coords[key] = vec
    if len(coords) != len(ids):
        raise InputError(f"{locations_path}: {len(coords)} locations but {len(ids)} data columns")
    absent = [i for i in ids if i not in coords]
    if absent:
        raise InputError(f"{locations_path}: no coordinates for {absent[0]!r}")
    locs = np.array([coords[i] for i in ids])
    if config.coords == "ecef":
        locs = locs / config.unit

    vals = np.array(values).T
    T = vals.shape[1]
    n_train = config.n_train if config.n_train is not None else T - config.n_test
    if n_train + config.n_test > T:
        raise InputError(f"split {n_train}+{config.n_test} exceeds {T} time points")
    vals = vals[:, : n_train + config.n_test]
    return DataPanel(vals, locs, ids, times_a[: vals.shape[1]], Ts, n_train)


def write_panel(path, panel: DataPanel, values=None, times=None) -> None:
    values = panel.values if values is None else values
    times = panel.times if times is None else times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", *panel.ids])
        for j, t in enumerate(times):
            w.writerow([repr(float(t)), *("" if math.isnan(v) else repr(float(v)) for v in values[:, j])])


def write_locations(path, panel: DataPanel) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *(f"x{k + 1}" for k in range(panel.locations.shape[1]))])
        for i, p in zip(panel.ids, panel.locations):
            w.writerow([i, *map(repr, map(float, p))])


# -- hyper-parameter problem ------------------------------------------------


def _median_sqdist(locations) -> float:
    P = np.atleast_2d(locations)
    diff = P[:, None, :] - P[None, :, :]
    d2 = np.sum(diff * diff, axis=-1)[np.triu_indices(P.shape[0], 1)]
    d2 = d2[d2 > 0]
    return float(np.median(d2)) if d2.size else 1.0


@dataclass
class FieldProblem:
    """Maps a hyper-parameter vector to a transformed model and its cost.

    Components are ``alpha_se`` (when M > 1), the free temporal parameters
    (``h_ratio = h / delta`` replaces ``h`` for te2exp+matern) and, unless
    frozen, ``sigma2``.
    """

    Y: np.ndarray  # (M, N) training block
    locations: np.ndarray
    family: Family
    fixed: dict = field(default_factory=dict)
    Ts: float = 1.0
    method: str = "mlm"
    sigma2: float | None = None
    input_ss: tuple | None = None
    n_b: int | None = None
    mask: np.ndarray | None = None
    box: dict = field(default_factory=dict)
    input_scale: float = 1.0  # mean squared input, for the dc-input box

    def __post_init__(self):
        self.family = Family(self.family)
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.family is Family.DC:
            raise ConfigError("plain dc kernel has no realization; use dc-input")
        if self.method != "mlm" and self.sigma2 is None:
            raise ConfigError(f"{self.method} needs a fixed noise variance (--sigma2 or an MLM run)")
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if self.mask is None and np.isnan(self.Y).any():
            raise InputError("training block has missing values; fill them first")
        self._names = self._param_names()
        unknown = set(self.box) - set(self._names)
        if unknown:
            raise ConfigError(f"box given for unknown parameters {sorted(unknown)}")

    @property
    def M(self) -> int:
        return self.Y.shape[0]

    def _param_names(self) -> list[str]:
        names = ["alpha_se"] if self.M > 1 else []
        for n in PARAM_NAMES[self.family]:
            names.append("h_ratio" if (n == "h" and self.family is Family.TE2EXP_MATERN) else n)
        if self.sigma2 is None:
            names.append("sigma2")
        return names

    def default_box(self) -> dict:
        obs = self.Y[~np.isnan(self.Y)]
        v = float(np.var(obs)) if obs.size > 1 else 1.0
        v = v if v > 0 else 1.0
        N = self.Y.shape[1]
        span = max(N, 2) * self.Ts
        fam = self.family
        b = {
            "alpha_se": (1e-2 * _median_sqdist(self.locations), 1e2 * _median_sqdist(self.locations), True),
            "sigma2": (1e-3 * v, 2.0 * v, True),
        }
        if fam is Family.EXP:
            b.update(c=(1e-2 * v, 10 * v, True), sigma=(0.5 * self.Ts, 10 * span, True))
        elif fam is Family.MATERN32:
            b.update(h=(1e-2 * v, 10 * v, True), theta=(0.5 * self.Ts, span, True))
        elif fam in (Family.TE2EXP, Family.TE2EXP_MATERN):
            b.update(delta=(1e-2 * v, 10 * v, True), c=(0.0, 0.95, False))
            if fam is Family.TE2EXP_MATERN:
                b.update(h_ratio=(*MATERN_RATIO_BOUNDS, False), theta=(0.5 * self.Ts, span, True))
        elif fam is Family.PD:
            b.update(delta=(1e-2 * v, 10 * v, True), sigma=(0.5 * self.Ts, 10 * span, True))
        elif fam is Family.DC_INPUT:
            s = v / max(self.input_scale, 1e-300)
            b.update(delta=(1e-4 * s, 10 * s, True), lam=(0.3, 0.99, False), rho=(-0.99, 0.99, False))
        return b

    def hyperparams(self) -> HyperParams:
        default = self.default_box()
        params = []
        for n in self._names:
            lo, hi, log = default[n]
            if n in self.box:
                lo, hi = self.box[n]
                log = log and lo > 0
            params.append(Param(n, float(lo), float(hi), log))
        return HyperParams(params)

    def unpack(self, theta) -> tuple[TemporalKernelSpec, SpatialKernelSpec | None, float]:
        vals = dict(zip(self._names, map(float, theta)))
        sigma2 = vals.pop("sigma2", self.sigma2)
        alpha = vals.pop("alpha_se", None)
        if "h_ratio" in vals:
            vals["h"] = vals.pop("h_ratio") * vals["delta"]
        spec = TemporalKernelSpec(self.family, vals, self.fixed)
        return spec, (SpatialKernelSpec(alpha) if alpha is not None else None), float(sigma2)

    def model(self, theta) -> TransformedModel:
        spec, sspec, sigma2 = self.unpack(theta)
        Ks = np.ones((1, 1)) if sspec is None else eval_spatial_gram(sspec, self.locations)
        real = realize(spec, self.Ts, self.input_ss, self.n_b)
        return build_transformed_model(real, Ks, sigma2, self.Ts)

    def transformed(self, model: TransformedModel) -> np.ndarray:
        if self.mask is not None:
            return np.where(self.mask, 0.0, self.Y)
        return transform_outputs(model, self.Y)

    def report(self, theta, method: str | None = None) -> CostReport:
        method = method or self.method
        m = self.model(theta)
        L = self.transformed(m)
        if method == "mlm":
            return cost_pass(m, L, self.mask)
        gcv, sure = gcv_sure_costs(m, L, self.mask)
        return gcv if method == "gcv" else sure

    def cost(self, theta) -> float:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return self.report(theta).value


def fit_hyper(problem: FieldProblem, grid=5, n_starts: int = 5, workers: int = 1) -> OptimResult:
    return optimize(problem.cost, problem.hyperparams(), grid=grid, n_starts=n_starts, workers=workers)


# -- missing data -----------------------------------------------------------


def _interp_fill(y: np.ndarray) -> np.ndarray:
    obs = ~np.isnan(y)
    idx = np.arange(y.size)
    out = y.copy()
    out[~obs] = np.interp(idx[~obs], idx[obs], y[obs])
    return out


def fill_location(y, family, fixed=None, Ts=1.0, grid=3, n_starts=2) -> tuple[np.ndarray, dict]:
    """Fill NaNs of one series with the smoothed mean of a per-series MLM fit."""
    y = np.asarray(y, dtype=float)
    mask = np.isnan(y)
    diag = {"n_filled": int(mask.sum()), "method": "smoother", "params": None, "error": None}
    if not mask.any():
        return y.copy(), diag
    try:
        prob = FieldProblem(
            y[None, :], np.zeros((1, 1)), family, dict(fixed or {}), Ts, "mlm", mask=mask[None, :]
        )
        res = fit_hyper(prob, grid=grid, n_starts=n_starts)
        m = prob.model(res.theta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            post = posterior(m, prob.transformed(m), mask=mask[None, :])
        fill = post.smoothed[0]
        if not np.all(np.isfinite(fill[mask])):
            raise NumericalError("non-finite smoothed values")
        out = y.copy()
        out[mask] = fill[mask]
        diag["params"] = res.params.as_dict()
        return out, diag
    except (NumericalError, ConfigError, InputError, np.linalg.LinAlgError) as exc:
        diag.update(method="linear", error=str(exc))
        return _interp_fill(y), diag


def fill_missing(
    panel: DataPanel, family, fixed=None, grid=3, n_starts: int = 2, workers: int = 1
) -> tuple[DataPanel, list[dict]]:
    """Fill each location independently; observed cells are left untouched.

    Returns the completed panel and one diagnostics record per location that
    had missing values, in panel order.
    """
    todo = [i for i in range(panel.M) if panel.missing[i].any()]
    if not todo:
        return panel.with_values(panel.values.copy()), []

    def job(i):
        return fill_location(panel.values[i], family, fixed, panel.Ts, grid, n_starts)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(job, todo))
    else:
        results = [job(i) for i in todo]
    values = panel.values.copy()
    diags = []
    for i, (row, d) in zip(todo, results):
        values[i] = row
        if d["method"] != "smoother":
            warnings.warn(f"location {panel.ids[i]}: fell back to linear interpolation ({d['error']})")
        diags.append({"location": panel.ids[i], **d})
    return panel.with_values(values), diags


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


# -- fit metrics ------------------------------------------------------------


@dataclass
class FitReport:
    per_time_fit: np.ndarray
    avg_fit: float
    rmse_per_location: np.ndarray

    def rows(self):
        for j, f in enumerate(self.per_time_fit, 1):
            yield j, f


def fit_score(estimate, truth) -> float:
    """``100 (1 - ||estimate - truth|| / ||truth - mean(truth)||)``; NaN for constant truth."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    den = np.linalg.norm(truth - truth.mean())
    if den == 0:
        return math.nan
    return 100.0 * (1.0 - np.linalg.norm(estimate - truth) / den)


def compute_fit(predictions, test) -> FitReport:
    """Per-time fit across locations for an M x N_T prediction block."""
    P = np.atleast_2d(np.asarray(predictions, dtype=float))
    Yt = np.atleast_2d(np.asarray(test, dtype=float))
    if P.shape != Yt.shape:
        raise InputError(f"prediction shape {P.shape} does not match test block {Yt.shape}")
    fits = np.array([fit_score(P[:, j], Yt[:, j]) for j in range(Yt.shape[1])])
    ok = ~np.isnan(fits)
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} test times have a constant or missing field; fit undefined there")
    avg = float(np.mean(fits[ok])) if ok.any() else math.nan
    rmse = np.sqrt(np.mean((P - Yt) ** 2, axis=1)) if Yt.size else np.zeros(Yt.shape[0])
    return FitReport(fits, avg, rmse)


def write_fit_report(path, report: FitReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["test_step", "fit"])
        for j, f in report.rows():
            w.writerow([j, repr(float(f))])
        w.writerow(["average", repr(float(report.avg_fit))])


def ensure_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {p}: {exc}") from None
    return p


def synthetic_panel(M: int = 4, N: int = 50, n_test: int = 10, seed: int = 0, missing_frac: float = 0.0,
                    c: float = 1.0, sigma: float = 10.0, alpha_se: float = 1.0, noise: float = 0.05) -> DataPanel:
    """Exact draw from an exponential-in-time, SE-in-space GP plus white noise."""
    from .kernels import TemporalKernelSpec, eval_temporal_gram

    rng = np.random.default_rng(seed)
    T = N + n_test
    locs = rng.uniform(0, 3, size=(M, 2))
    Kt = eval_temporal_gram(TemporalKernelSpec("exp", {"c": c, "sigma": sigma}), np.arange(1, T + 1.0))
    Ks = eval_spatial_gram(SpatialKernelSpec(alpha_se), locs)
    K = np.kron(Kt, Ks) + 1e-10 * np.eye(T * M)
    f = np.linalg.cholesky(K) @ rng.standard_normal(T * M)
    Y = f.reshape(T, M).T + math.sqrt(noise) * rng.standard_normal((M, T))
    if missing_frac > 0:
        drop = rng.uniform(size=(M, N)) < missing_frac
        drop[:, 0] = False  # keep every location observed
        Y[:, :N][drop] = np.nan
    return DataPanel(Y, locs, [f"s{i + 1}" for i in range(M)], np.arange(1, T + 1.0), 1.0, N)
