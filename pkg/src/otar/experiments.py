"""Experiment harnesses: simulation grid, rate study, inverse-norm sweep and
the increment-versus-quantile model comparison.

Every replicate draws from its own substream, keyed ``(cell, replicate)`` in
the grid and ``(n_index, replicate)`` in the rate study, so results do not
depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dynamics import (
    ChainConfig,
    MapSeries,
    ModelKind,
    ModelParams,
    SystemKind,
    check_stationarity_condition,
    simulate_chain,
)
from .errors import ConfigError, InputError, OtarError
from .estimation import FitConfig, FitResult, _Prepared, fit, fit_alt
from .ingest import EmpiricalSeries
from .noise import NoiseSpec, substream, zeta
from .transport import (
    DEFAULT_M,
    UnitMap,
    _contract_values,
    _interp_uniform,
    _invert_rows,
    _trapz,
    grid,
    invert,
    lp_distance,
)

BOOTSTRAP_RESAMPLES = 200
_BOOTSTRAP_KEY = 2**31


# ---------------------------------------------------------------------------
# built-in maps S
# ---------------------------------------------------------------------------

def _piecewise(knots_x, knots_y, m: int) -> UnitMap:
    return UnitMap.from_values(np.interp(grid(m), knots_x, knots_y))


def kinked_map(m: int = DEFAULT_M) -> UnitMap:
    """Piecewise linear with one kink at 1/2 (slopes 1/2 then 3/2)."""
    return _piecewise([0.0, 0.5, 1.0], [0.0, 0.25, 1.0], m)


def steps_map(m: int = DEFAULT_M) -> UnitMap:
    """Two near-plateaus joined by one-cell jumps at 0.3 and 0.7.

    Stand-in for a discontinuous map: each jump rises by 0.35 over a single
    grid cell, so its slope grows with ``m``.
    """
    d = 1.0 / m
    return _piecewise([0.0, 0.3, 0.3 + d, 0.7, 0.7 + d, 1.0],
                      [0.0, 0.15, 0.5, 0.55, 0.9, 1.0], m)


def mixed_map(m: int = DEFAULT_M) -> UnitMap:
    """Even mixture of ``zeta_-2`` and ``zeta_3``."""
    x = grid(m)
    return UnitMap.from_values(0.5 * zeta(-2, x) + 0.5 * zeta(3, x))


def builtin_map(name: str, m: int = DEFAULT_M) -> UnitMap:
    """Resolve ``id``, ``zeta:K``, ``kinked``, ``steps`` or ``mixed``."""
    name = name.strip()
    if name == "id":
        return UnitMap.identity(m)
    if name.startswith("zeta:"):
        try:
            k = int(name[5:])
        except ValueError:
            raise ConfigError(f"bad zeta index in {name!r}") from None
        return UnitMap.from_values(zeta(k, grid(m)))
    table: dict[str, Callable[[int], UnitMap]] = {
        "kinked": kinked_map, "steps": steps_map, "mixed": mixed_map}
    if name not in table:
        raise ConfigError(f"unknown map {name!r}; use id, zeta:K, kinked, steps or mixed")
    return table[name](m)


def reference_grid_maps(m: int = DEFAULT_M) -> dict[str, UnitMap]:
    names = ["zeta:-6", "zeta:-4", "zeta:-2", "mixed", "kinked", "steps"]
    return {n: builtin_map(n, m) for n in names}


def _pmap(fn, items, threads: int):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _fit_for(params: ModelParams, series: MapSeries, cfg: FitConfig) -> FitResult:
    if params.system is SystemKind.CONTRACT_ABOUT:
        return fit_alt(series, cfg)
    return fit(series, cfg)


def _json_float(v):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return None
    return float(v)


# ---------------------------------------------------------------------------
# simulation grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GridSpec:
    alphas: tuple[float, ...]
    s_choices: dict[str, UnitMap]
    n_steps: int = 300
    burn_in: int = 100
    replicates: int = 20
    seed: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    system: SystemKind = SystemKind.PERTURB_THEN_MAP
    fit_cfg: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "system", SystemKind(self.system))
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if not self.alphas or not self.s_choices:
            raise ConfigError("the grid needs at least one alpha and one map")
        if not 0 <= self.burn_in < self.n_steps:
            raise ConfigError("burn_in must satisfy 0 <= burn_in < n_steps")

    def cells(self) -> list[tuple[int, float, str]]:
        """``(cell index, alpha, map name)``; the index keys the random substreams."""
        names = list(self.s_choices)
        return [(i * len(names) + j, a, s) for i, a in enumerate(self.alphas)
                for j, s in enumerate(names)]

    def chain_config(self, cell: int, replicate: int) -> ChainConfig:
        return ChainConfig(self.n_steps, self.burn_in, seed=self.seed, stream=(cell, replicate))


@dataclass
class GridReport:
    records: list[dict]
    cells: list[dict]

    def to_dict(self) -> dict:
        return {"cells": self.cells, "records": self.records}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_csv(self, path=None) -> str:
        return _tidy_csv(self.records, path)


def _tidy_csv(rows: Sequence[dict], path=None) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def _quartiles(xs: list[float]) -> tuple[float, float, float]:
    if not xs:
        return math.nan, math.nan, math.nan
    q1, q2, q3 = np.percentile(xs, [25, 50, 75])
    return float(q1), float(q2), float(q3)


def run_simulation_grid(spec: GridSpec, threads: int = 1) -> GridReport:
    """Simulate and fit every (alpha, S, replicate); failures are recorded, not raised."""
    tasks = [(cell, a, name, r) for cell, a, name in spec.cells() for r in range(spec.replicates)]

    def one(task):
        cell, a, name, r = task
        s = spec.s_choices[name]
        rec = {"cell": cell, "alpha_true": a, "s_name": name, "replicate": r,
               "alpha_hat": None, "s_error": None, "objective": None, "flags": "", "error": ""}
        try:
            params = ModelParams(a, s, spec.system)
            series = simulate_chain(params, spec.chain_config(cell, r), spec.noise)
            res = _fit_for(params, series, spec.fit_cfg)
            rec.update(alpha_hat=res.alpha_hat, s_error=lp_distance(res.s_hat, s, 2),
                       objective=res.objective_at_opt, flags=";".join(res.flags))
        except OtarError as exc:
            rec["error"] = f"{type(exc).__name__}: {exc}"
        return rec

    records = _pmap(one, tasks, threads)
    cells = []
    for cell, a, name in spec.cells():
        rows = [r for r in records if r["cell"] == cell]
        ok = [r for r in rows if not r["error"]]
        a_q = _quartiles([r["alpha_hat"] for r in ok])
        e_q = _quartiles([r["s_error"] for r in ok])
        try:
            report = check_stationarity_condition(
                ModelParams(a, spec.s_choices[name], spec.system), spec.noise)
            satisfied, in_region = report.satisfied, report.in_theory_region
        except OtarError:
            satisfied = in_region = False
        cells.append({
            "cell": cell, "alpha_true": a, "s_name": name,
            "alpha_hat_median": _json_float(a_q[1]), "alpha_hat_iqr": _json_float(a_q[2] - a_q[0]),
            "s_error_median": _json_float(e_q[1]), "n_ok": len(ok), "n_failed": len(rows) - len(ok),
            "stationarity_satisfied": satisfied, "in_theory_region": in_region,
        })
    return GridReport(records, cells)


# ---------------------------------------------------------------------------
# rate study
# ---------------------------------------------------------------------------

@dataclass
class RateReport:
    ns: list[int]
    alpha_rmse: list[float]
    s_error_mean: list[float]
    alpha_slope: float | None
    alpha_band: tuple[float, float] | None
    s_slope: float | None
    s_band: tuple[float, float] | None
    flags: list[str]
    records: list[dict]

    def to_dict(self) -> dict:
        return {
            "ns": self.ns, "alpha_rmse": self.alpha_rmse, "s_error_mean": self.s_error_mean,
            "alpha_slope": self.alpha_slope, "alpha_band": self.alpha_band,
            "s_slope": self.s_slope, "s_band": self.s_band, "flags": self.flags,
            "records": self.records,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_csv(self, path=None) -> str:
        return _tidy_csv(self.records, path)


def _loglog_slope(ns, ys) -> float | None:
    ys = np.asarray(ys, dtype=float)
    if np.any(~np.isfinite(ys)) or np.any(ys <= 0):
        return None
    return float(np.polyfit(np.log(ns), np.log(ys), 1)[0])


def run_rate_experiment(ns: Sequence[int], replicates: int, params: ModelParams,
                        spec: NoiseSpec, seed: int = 0, burn_in: int = 100,
                        fit_cfg: FitConfig | None = None, threads: int = 1,
                        n_boot: int = BOOTSTRAP_RESAMPLES) -> RateReport:
    """RMSE of the estimates against the series length, with log-log slopes.

    Each replicate at length ``N`` keeps ``N + 1`` maps after ``burn_in`` (so
    the estimator averages ``N`` transitions). Slope bands are 2.5% and
    97.5% percentiles over bootstrap resamples of the replicates.
    """
    ns = [int(n) for n in ns]
    if len(set(ns)) < 3:
        raise ConfigError("the rate study needs at least 3 distinct N values")
    if replicates < 2:
        raise ConfigError("the rate study needs at least 2 replicates")
    cfg = fit_cfg or FitConfig()
    tasks = [(i, n, r) for i, n in enumerate(ns) for r in range(replicates)]

    def one(task):
        i, n, r = task
        chain = ChainConfig(n + 1 + burn_in, burn_in, seed=seed, stream=(i, r))
        series = simulate_chain(params, chain, spec)
        res = _fit_for(params, series, cfg)
        return {"n": n, "replicate": r, "alpha_hat": res.alpha_hat,
                "alpha_error": res.alpha_hat - params.alpha,
                "s_error": lp_distance(res.s_hat, params.s, 2)}

    records = _pmap(one, tasks, threads)
    a_err = np.array([[rec["alpha_error"] for rec in records if rec["n"] == n] for n in ns])
    s_err = np.array([[rec["s_error"] for rec in records if rec["n"] == n] for n in ns])
    rmse = np.sqrt((a_err ** 2).mean(axis=1))
    s_mean = s_err.mean(axis=1)
    flags = []
    if spec.is_identity:
        flags.append("noiseless: errors vanish, slopes undefined")
    a_slope = None if spec.is_identity else _loglog_slope(ns, rmse)
    s_slope = None if spec.is_identity else _loglog_slope(ns, s_mean)
    a_band = s_band = None
    if a_slope is not None and s_slope is not None and n_boot > 0:
        rng = substream(seed, _BOOTSTRAP_KEY)
        a_boot, s_boot = [], []
        for _ in range(n_boot):
            idx = rng.integers(0, replicates, size=(len(ns), replicates))
            ra = np.sqrt((np.take_along_axis(a_err, idx, axis=1) ** 2).mean(axis=1))
            rs = np.take_along_axis(s_err, idx, axis=1).mean(axis=1)
            sa, ss = _loglog_slope(ns, ra), _loglog_slope(ns, rs)
            if sa is not None:
                a_boot.append(sa)
            if ss is not None:
                s_boot.append(ss)
        if a_boot:
            a_band = tuple(float(v) for v in np.percentile(a_boot, [2.5, 97.5]))
        if s_boot:
            s_band = tuple(float(v) for v in np.percentile(s_boot, [2.5, 97.5]))
    elif not spec.is_identity:
        flags.append("slope undefined: zero error at some N")
    return RateReport(ns, rmse.tolist(), s_mean.tolist(), a_slope, a_band, s_slope, s_band,
                      flags, records)


# ---------------------------------------------------------------------------
# inverse-norm sweep
# ---------------------------------------------------------------------------

def random_band_map(rng: np.random.Generator, band: tuple[float, float],
                    m: int = DEFAULT_M, max_tries: int = 1000) -> UnitMap:
    """Random smooth map whose grid slopes all lie strictly inside ``band``."""
    lo, hi = band
    x = (np.arange(m) + 0.5) / m
    for _ in range(max_tries):
        freqs = np.arange(1, 5)
        amp = rng.normal(size=(2, 4)) / freqs
        g = amp[0] @ np.sin(np.pi * np.outer(freqs, x)) + amp[1] @ np.cos(np.pi * np.outer(freqs, x))
        span = g.max() - g.min()
        if span > 0:
            g *= rng.uniform(0.1, 0.95) * math.log(hi / lo) / span
        slopes = np.exp(g)
        slopes /= slopes.mean()
        if slopes.min() > lo and slopes.max() < hi:
            values = np.concatenate([[0.0], np.cumsum(slopes) / m])
            values[-1] = 1.0
            return UnitMap.from_values(values)
    raise ConfigError(f"could not draw a map with slopes in {band}")


def random_free_map(rng: np.random.Generator, m: int = DEFAULT_M, sigma: float = 2.0) -> UnitMap:
    """Random map with log-normal cell slopes (no slope band)."""
    slopes = np.exp(sigma * rng.normal(size=m))
    values = np.concatenate([[0.0], np.cumsum(slopes)])
    return UnitMap.from_values(values / values[-1])


@dataclass
class SweepReport:
    n_pairs: int
    band: tuple[float, float]
    m: int
    max_ratio: float
    all_satisfied: bool
    n_violations: int
    sqrt_constant: float
    rows: list[dict]

    def to_dict(self) -> dict:
        return {"n_pairs": self.n_pairs, "band": list(self.band), "m": self.m,
                "max_ratio": self.max_ratio, "all_satisfied": self.all_satisfied,
                "n_violations": self.n_violations, "sqrt_constant": self.sqrt_constant,
                "rows": self.rows}


def run_inverse_inequality_sweep(n_pairs: int, slope_band: tuple[float, float], seed: int = 0,
                                 m: int = DEFAULT_M) -> SweepReport:
    """Check ``||T^-1 - S^-1||_2 <= (L_u / L_l) ||T - S||_2 + 4/M`` on random pairs.

    Also draws as many unconstrained pairs and reports the smallest ``C``
    with ``||T^-1 - S^-1||_2 <= C sqrt(||T - S||_2)`` over them.
    """
    lo, hi = slope_band
    if not 0 < lo < hi < math.inf:
        raise ConfigError("slope band needs 0 < L_l < L_u < inf")
    if not lo < 1 < hi:
        raise ConfigError("a slope band for maps of [0, 1] onto itself must contain 1")
    rng = substream(seed, 0)
    factor = hi / lo
    rows = []
    for k in range(n_pairs):
        t, s = random_band_map(rng, slope_band, m), random_band_map(rng, slope_band, m)
        d = lp_distance(t, s, 2)
        d_inv = lp_distance(invert(t), invert(s), 2)
        rows.append({"pair": k, "d": d, "d_inv": d_inv,
                     "ratio": d_inv / d if d > 0 else 0.0,
                     "satisfied": bool(d_inv <= factor * d + 4.0 / m)})
    free = substream(seed, 1)
    c = 0.0
    for _ in range(n_pairs):
        t, s = random_free_map(free, m), random_free_map(free, m)
        d = lp_distance(t, s, 2)
        if d > 0:
            c = max(c, lp_distance(invert(t), invert(s), 2) / math.sqrt(d))
    bad = sum(not r["satisfied"] for r in rows)
    return SweepReport(n_pairs, (lo, hi), m, max((r["ratio"] for r in rows), default=0.0),
                       bad == 0, bad, c, rows)


# ---------------------------------------------------------------------------
# increment vs quantile model comparison
# ---------------------------------------------------------------------------

NEAR = 0.05


@dataclass
class ComparisonReport:
    alpha_increment: float
    alpha_quantile: float
    objective_increment: float
    objective_quantile: float
    bridge_increment_at_0: float
    bridge_quantile_at_1: float
    bridge_rel_gap: float
    bridge_weighted_at_0: float
    bridge_weighted_rel_gap: float
    prediction_error_increment: float
    prediction_error_quantile: float
    verdict: str
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _rel_gap(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def bridge_values(series: EmpiricalSeries) -> tuple[float, float, float]:
    """``(M_I(0), M_UQ(1), weighted M_I(0))`` for one curve series.

    ``M_I(0)`` is the increment objective at alpha = 0 and ``M_UQ(1)`` the
    quantile objective at alpha = 1. The weighted value keeps the increment
    maps but measures each residual after composing with the previous
    quantile curve and averages over the same transitions as ``M_UQ(1)``.
    """
    q = np.stack([c.unit.values for c in series.curves])
    inc = series.maps(ModelKind.increment())
    quant = series.maps(ModelKind.uniform_quantile())
    m_inc = _Prepared(inc).objective(0.0)
    m_quant = _Prepared(quant).objective(1.0)
    g = inc.values.mean(axis=0)
    resid = np.stack([_interp_uniform(g - t, qp) for t, qp in zip(inc.values, q[:-1])])
    weighted = float(_trapz(resid * resid).mean())
    return m_inc, m_quant, weighted


def _contract_rows(alpha: float, prev: np.ndarray) -> np.ndarray:
    return _contract_values(alpha, prev, _invert_rows(prev) if alpha < 0 else None)


def prediction_errors(series: EmpiricalSeries, r_inc: FitResult,
                      r_quant: FitResult) -> tuple[float, float]:
    """Mean squared one-step prediction error of both fits in quantile space.

    Both are scored on the transitions into ``q_2 .. q_{n-1}``, the ones the
    increment model can predict.
    """
    q = np.stack([c.unit.values for c in series.curves])
    inc = series.maps(ModelKind.increment()).values
    c_inc = _contract_rows(r_inc.alpha_hat, inc[:-1])
    t_hat = np.stack([_interp_uniform(r_inc.s_hat.values, row) for row in c_inc])
    pred_inc = np.stack([_interp_uniform(t, qp) for t, qp in zip(t_hat, q[1:-1])])
    c_q = _contract_rows(r_quant.alpha_hat, q[1:-1])
    pred_q = np.stack([_interp_uniform(r_quant.s_hat.values, row) for row in c_q])
    target = q[2:]
    e_inc = float(_trapz((pred_inc - target) ** 2).mean())
    e_q = float(_trapz((pred_q - target) ** 2).mean())
    return e_inc, e_q


def _verdict(a_inc: float, a_quant: float, e_inc: float, e_quant: float) -> str:
    inc_trivial = abs(a_inc) <= NEAR
    quant_trivial = abs(a_quant - 1.0) <= NEAR
    if inc_trivial and not quant_trivial:
        return "prefer-uniform-quantile"
    if quant_trivial and not inc_trivial:
        return "prefer-increment"
    # neither fit collapses onto the other model: fall back to prediction error
    if e_quant < e_inc:
        return "prefer-uniform-quantile (prediction error)"
    return "prefer-increment (prediction error)"


def compare_models(series: EmpiricalSeries, cfg: FitConfig | None = None) -> ComparisonReport:
    """Fit the increment and quantile readings of one curve series and compare.

    The verdict follows the rule: an increment fit with alpha near 0 says the
    quantile model carries the dependence, and a quantile fit with alpha
    near 1 says the increments do. When neither (or both) holds, the model
    with the smaller one-step prediction error in quantile space wins.
    """
    if len(series) < 3:
        raise InputError("model comparison needs at least 3 periods")
    inc = series.maps(ModelKind.increment())
    quant = series.maps(ModelKind.uniform_quantile())
    if _Prepared(quant).is_constant():
        raise InputError("degenerate series: all curves are identical")
    r_inc, r_quant = fit(inc, cfg), fit(quant, cfg)
    m_inc, m_quant, weighted = bridge_values(series)
    e_inc, e_quant = prediction_errors(series, r_inc, r_quant)
    flags = sorted(set(r_inc.flags) | set(r_quant.flags))
    return ComparisonReport(
        alpha_increment=r_inc.alpha_hat, alpha_quantile=r_quant.alpha_hat,
        objective_increment=r_inc.objective_at_opt, objective_quantile=r_quant.objective_at_opt,
        bridge_increment_at_0=m_inc, bridge_quantile_at_1=m_quant,
        bridge_rel_gap=_rel_gap(m_inc, m_quant), bridge_weighted_at_0=weighted,
        bridge_weighted_rel_gap=_rel_gap(weighted, m_quant),
        prediction_error_increment=e_inc, prediction_error_quantile=e_quant,
        verdict=_verdict(r_inc.alpha_hat, r_quant.alpha_hat, e_inc, e_quant), flags=flags,
    )
