"""Least-squares fitting of ``(alpha, S)`` from an observed map series.

For the perturb-then-map system the map ``S`` is profiled out: for each
candidate ``alpha`` the ergodic average

    S_{N,alpha} = (1/N) sum_j T_j o [alpha T_{j-1}]^{-1}

is plugged into the mean squared residual ``||S o [alpha T_{i-1}] - T_i||_2^2``
and the resulting one-dimensional objective is minimized over ``alpha``.
For the contract-about system ``S`` is estimated by the plain average of the
maps and only ``alpha`` is fitted.

Everything here works on the whole series at once (one row per time step);
a fit at N = 200, M = 1000 evaluates the objective a few hundred times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import MapSeries, SystemKind
from .errors import DomainError, InputError, NotDifferentiableError
from .transport import (
    UnitMap,
    _contract_about_values,
    _contract_values,
    _eval_rows,
    _interp_uniform,
    _invert_rows,
    _slopes,
    _strictify,
    _trapz,
    grid,
)

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
_TIE_TOL = 1e-12
_ILL_CONDITIONED_SLOPE = 1e-6


@dataclass(frozen=True)
class FitConfig:
    alpha_grid_step: float = 0.01
    alpha_bounds: tuple[float, float] = (-0.999, 0.999)
    refine_tol: float = 1e-4
    grid_m: int | None = None
    # also evaluate alpha = -1 and alpha = 1 exactly (perturb-then-map only)
    include_endpoints: bool = True

    def __post_init__(self):
        if not 0 < self.alpha_grid_step < 1:
            raise DomainError("alpha_grid_step must lie in (0, 1)")
        if not self.refine_tol > 0:
            raise DomainError("refine_tol must be positive")
        lo, hi = self.alpha_bounds
        if not -1 <= lo < hi <= 1:
            raise DomainError(f"invalid alpha bounds {self.alpha_bounds}")


@dataclass
class FitResult:
    alpha_hat: float
    s_hat: UnitMap
    objective_profile: list[tuple[float, float]]
    n_used: int
    derivative_at_opt: float | None
    system: SystemKind
    objective_at_opt: float = float("nan")
    flags: list[str] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "alpha_hat": self.alpha_hat,
            "objective_at_opt": self.objective_at_opt,
            "derivative_at_opt": self.derivative_at_opt,
            "n_used": self.n_used,
            "system": self.system.value,
            "flags": list(self.flags),
            "diagnostics": dict(self.diagnostics),
        }


class _Prepared:
    """Series split into predecessor / successor stacks with lazy caches."""

    def __init__(self, series: MapSeries):
        if len(series) < 2:
            raise InputError("need a series of at least 2 maps")
        v = series.values
        self.prev = v[:-1]
        self.nxt = v[1:]
        self.n = self.prev.shape[0]
        self.m = v.shape[1] - 1
        self.x = grid(self.m)
        self._prev_inv = None
        self._cache = {}

    @property
    def prev_inv(self) -> np.ndarray:
        if self._prev_inv is None:
            self._prev_inv = _invert_rows(self.prev)
        return self._prev_inv

    def contracted(self, alpha: float) -> np.ndarray:
        inv = self.prev_inv if alpha < 0 else None
        return _contract_values(alpha, self.prev, inv)

    def ergodic(self, alpha: float):
        """(S_{N,alpha}, contracted maps)."""
        hit = self._cache.get(alpha)
        if hit is not None:
            return hit
        c = self.contracted(alpha)
        # T_j o C_j^{-1} is piecewise linear on the knots of C_j, so one
        # interpolation per row gives it exactly.
        acc = np.zeros(self.m + 1)
        for cj, tj in zip(c, self.nxt):
            acc += np.interp(self.x, cj, tj)
        s = acc / self.n
        self._cache = {alpha: (s, c)}
        return s, c

    def objective(self, alpha: float) -> float:
        s, c = self.ergodic(alpha)
        resid = np.interp(c, self.x, s) - self.nxt
        return float(_trapz(resid * resid).mean())

    def is_constant(self) -> bool:
        v = np.vstack([self.prev[:1], self.nxt])
        return bool(np.all(v == v[0]))


def _check_alpha(alpha: float) -> None:
    if not -1 <= alpha <= 1:
        raise DomainError(f"alpha must lie in [-1, 1], got {alpha}")


def ergodic_s(series: MapSeries, alpha: float) -> UnitMap:
    """The plug-in estimate ``S_{N,alpha}`` (mean of ``T_j o [alpha T_{j-1}]^{-1}``)."""
    _check_alpha(alpha)
    s, _ = _Prepared(series).ergodic(alpha)
    return UnitMap(_strictify(s))


def objective(series: MapSeries, alpha: float) -> float:
    """Profile objective ``M_N(alpha)``: mean squared L2 residual with ``S_{N,alpha}``."""
    _check_alpha(alpha)
    return _Prepared(series).objective(alpha)


def _derivative(prep: _Prepared, alpha: float) -> float:
    if alpha == 0:
        raise NotDifferentiableError("the objective switches branch at alpha = 0")
    if not -1 < alpha < 1:
        raise DomainError(f"derivative needs alpha in (-1, 0) or (0, 1), got {alpha}")
    s, c = prep.ergodic(alpha)
    z = _invert_rows(c)
    x = prep.x
    nxt_slope_at_z = _eval_rows(_slopes(prep.nxt), z)
    if alpha > 0:
        base = prep.prev
        d_contract = 1.0 + alpha * (_eval_rows(_slopes(base), z) - 1.0)
        shift = z - _eval_rows(base, z)
        outer = base - x
    else:
        base = prep.prev_inv
        d_contract = 1.0 + alpha * (1.0 - _eval_rows(_slopes(base), z))
        shift = _eval_rows(base, z) - z
        outer = x - base
    ratio = nxt_slope_at_z / d_contract
    # dS/dalpha and dS/dy on the y-grid
    ds_dalpha = (ratio * shift).mean(axis=0)
    ds_dy = ratio.mean(axis=0)
    d_fit = _interp_uniform(ds_dalpha, c) + _interp_uniform(ds_dy, c) * outer
    resid = np.interp(c, x, s) - prep.nxt
    return float(_trapz(2.0 * resid * d_fit).mean())


def objective_derivative(series: MapSeries, alpha: float) -> float:
    """Closed-form ``M_N'(alpha)`` for ``alpha`` in (-1, 0) or (0, 1).

    Differentiates ``S_{N,alpha} o [alpha T_{j-1}]`` through both the
    ergodic average and the contraction; map slopes are grid central
    differences.
    """
    return _derivative(_Prepared(series), alpha)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def _scan_grid(cfg: FitConfig) -> np.ndarray:
    lo, hi = cfg.alpha_bounds
    step = cfg.alpha_grid_step
    k_lo = math.ceil(lo / step - 1e-9)
    k_hi = math.floor(hi / step + 1e-9)
    inner = np.round(np.arange(k_lo, k_hi + 1) * step, 12)
    pts = np.unique(np.concatenate([[lo], inner, [hi]]))
    return pts[(pts >= lo) & (pts <= hi)]


def _golden(f, a: float, b: float, tol: float, evals: dict) -> None:
    """Golden-section search on [a, b]; every evaluation is recorded in ``evals``."""
    def fe(t):
        if t not in evals:
            evals[t] = f(t)
        return evals[t]

    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fe(c), fe(d)
    while abs(b - a) > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fe(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fe(d)


def _argmin(evals: dict) -> float:
    """Smallest value; near-ties (relative 1e-12) go to the smaller |alpha|."""
    best = min(evals.values())
    ties = [a for a, v in evals.items() if v - best <= _TIE_TOL * abs(best)]
    return min(ties, key=lambda a: (abs(a), a))


def _minimize(f, cfg: FitConfig, endpoints: bool) -> dict:
    evals: dict[float, float] = {}
    scan = _scan_grid(cfg)
    for a in scan:
        evals[float(a)] = f(float(a))
    if endpoints:
        for a in (-1.0, 1.0):
            evals[a] = f(a)
    a0 = _argmin(evals)
    if a0 in (-1.0, 1.0) and not (cfg.alpha_bounds[0] <= a0 <= cfg.alpha_bounds[1]):
        return evals
    k = int(np.searchsorted(scan, a0))
    lo = float(scan[max(k - 1, 0)])
    hi = float(scan[min(k + 1, scan.size - 1)])
    if hi > lo:
        _golden(f, lo, hi, cfg.refine_tol, evals)
    return evals


def _profile(evals: dict) -> list[tuple[float, float]]:
    return sorted((float(a), float(v)) for a, v in evals.items())


def _is_flat(evals: dict) -> bool:
    vals = np.fromiter(evals.values(), dtype=float)
    return bool(vals.max() - vals.min() <= 1e-14 * max(1.0, abs(vals.max())))


def fit(series: MapSeries, cfg: FitConfig | None = None) -> FitResult:
    """Fit the perturb-then-map system: scan + golden refinement of ``M_N``."""
    cfg = cfg or FitConfig()
    prep = _Prepared(series)
    flags = []
    if prep.is_constant():
        evals = {0.0: prep.objective(0.0)}
        flags.append("flat-objective")
        alpha_hat = 0.0
    else:
        evals = _minimize(prep.objective, cfg, endpoints=cfg.include_endpoints)
        if _is_flat(evals):
            flags.append("flat-objective")
            alpha_hat = 0.0
            evals.setdefault(0.0, prep.objective(0.0))
        else:
            alpha_hat = _argmin(evals)
    s, c = prep.ergodic(alpha_hat)
    min_slope = float((np.diff(c, axis=1).min()) * prep.m)
    if min_slope < _ILL_CONDITIONED_SLOPE:
        flags.append("ill-conditioned-inversion")
    deriv = None
    if -1 < alpha_hat < 1 and alpha_hat != 0:
        deriv = _derivative(prep, alpha_hat)
    return FitResult(
        alpha_hat=float(alpha_hat),
        s_hat=UnitMap(_strictify(s)),
        objective_profile=_profile(evals),
        n_used=prep.n,
        derivative_at_opt=deriv,
        system=SystemKind.PERTURB_THEN_MAP,
        objective_at_opt=float(evals[alpha_hat]),
        flags=flags,
        diagnostics={"min_contracted_slope": min_slope, "n_evaluations": len(evals)},
    )


# ---------------------------------------------------------------------------
# contract-about system
# ---------------------------------------------------------------------------

class _PreparedAlt(_Prepared):
    def __init__(self, series: MapSeries):
        super().__init__(series)
        self.s_mean = self.nxt.mean(axis=0)

    def objective(self, alpha: float) -> float:
        inv = self.prev_inv if alpha < 0 else None
        c = _contract_about_values(alpha, self.prev, self.s_mean, inv)
        resid = c - self.nxt
        return float(_trapz(resid * resid).mean())

    def derivative(self, alpha: float) -> float:
        # the contraction is affine in alpha on each side of 0
        if alpha > 0:
            direction = self.prev - self.s_mean
        else:
            direction = self.s_mean - self.prev_inv
        inv = self.prev_inv if alpha < 0 else None
        resid = _contract_about_values(alpha, self.prev, self.s_mean, inv) - self.nxt
        return float(_trapz(2.0 * resid * direction).mean())


def objective_alt(series: MapSeries, alpha: float) -> float:
    """Contract-about objective ``mean_i ||alpha[T_{i-1}, S_N] - T_i||_2^2``."""
    if not -1 < alpha < 1:
        raise DomainError(f"alpha must lie in (-1, 1), got {alpha}")
    return _PreparedAlt(series).objective(alpha)


def fit_alt(series: MapSeries, cfg: FitConfig | None = None) -> FitResult:
    """Fit the contract-about system; ``S`` is the mean of ``T_1..T_N``."""
    cfg = cfg or FitConfig()
    lo, hi = cfg.alpha_bounds
    if lo <= -1 or hi >= 1:
        cfg = FitConfig(cfg.alpha_grid_step, (max(lo, -0.999), min(hi, 0.999)), cfg.refine_tol,
                        cfg.grid_m, False)
    prep = _PreparedAlt(series)
    flags = []
    if prep.is_constant():
        evals = {0.0: prep.objective(0.0)}
        flags.append("flat-objective")
        alpha_hat = 0.0
    else:
        evals = _minimize(prep.objective, cfg, endpoints=False)
        alpha_hat = _argmin(evals)
        if _is_flat(evals):
            flags.append("flat-objective")
            alpha_hat = 0.0
            evals.setdefault(0.0, prep.objective(0.0))
    s_hat = UnitMap(_strictify(prep.s_mean))
    deriv = prep.derivative(alpha_hat) if alpha_hat != 0 else None
    return FitResult(
        alpha_hat=float(alpha_hat),
        s_hat=s_hat,
        objective_profile=_profile(evals),
        n_used=prep.n,
        derivative_at_opt=deriv,
        system=SystemKind.CONTRACT_ABOUT,
        objective_at_opt=float(evals[alpha_hat]),
        flags=flags,
        diagnostics={"n_evaluations": len(evals)},
    )
