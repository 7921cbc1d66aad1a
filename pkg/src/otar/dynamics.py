"""Iterated random systems of transport maps and their distributional readings.

Two systems are supported:

* perturb-then-map: ``T_i = T_eps_i o S o [alpha T_{i-1}]``
* contract-about:   ``T_i = T_eps_i o alpha[T_{i-1}, S]``

A map chain can be read as a series of distributions in three ways: as
increments between consecutive quantile functions, as the (normalized)
quantile functions themselves, or as quantiles relative to a reference
measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DomainError, InputError
from .noise import NoiseSpec, _ZetaTable, _draw_ks, lipschitz_bound, substream
from .transport import (
    Interval,
    QuantileCurve,
    UnitMap,
    _contract_about_values,
    _contract_values,
    _interp_uniform,
    _invert_values,
    _strictify,
    compose,
    grid,
    invert,
)


class SystemKind(str, Enum):
    PERTURB_THEN_MAP = "perturb-then-map"
    CONTRACT_ABOUT = "contract-about"


class Interpretation(str, Enum):
    INCREMENT = "increment"
    UNIFORM_QUANTILE = "uniform-quantile"
    GENERALIZED_QUANTILE = "generalized-quantile"


@dataclass(frozen=True, eq=False)
class ModelKind:
    tag: Interpretation
    reference: QuantileCurve | None = None

    def __post_init__(self):
        object.__setattr__(self, "tag", Interpretation(self.tag))
        needs_ref = self.tag is Interpretation.GENERALIZED_QUANTILE
        if needs_ref and self.reference is None:
            raise ConfigError("the generalized-quantile model needs a reference measure")
        if not needs_ref and self.reference is not None:
            raise ConfigError(f"model {self.tag.value} takes no reference measure")

    @classmethod
    def increment(cls) -> "ModelKind":
        return cls(Interpretation.INCREMENT)

    @classmethod
    def uniform_quantile(cls) -> "ModelKind":
        return cls(Interpretation.UNIFORM_QUANTILE)

    @classmethod
    def generalized_quantile(cls, reference: QuantileCurve) -> "ModelKind":
        return cls(Interpretation.GENERALIZED_QUANTILE, reference)


@dataclass(frozen=True, eq=False)
class ModelParams:
    alpha: float
    s: UnitMap
    system: SystemKind = SystemKind.PERTURB_THEN_MAP

    def __post_init__(self):
        object.__setattr__(self, "system", SystemKind(self.system))
        object.__setattr__(self, "alpha", float(self.alpha))
        if self.system is SystemKind.PERTURB_THEN_MAP and not -1 <= self.alpha <= 1:
            raise DomainError(f"alpha must lie in [-1, 1], got {self.alpha}")
        if self.system is SystemKind.CONTRACT_ABOUT and not -1 < self.alpha < 1:
            raise DomainError(f"alpha must lie in (-1, 1) for contract-about, got {self.alpha}")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "system": self.system.value, "m": self.s.m,
                "s": self.s.values.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        return cls(float(data["alpha"]), UnitMap(data["s"]), SystemKind(data["system"]))


@dataclass(frozen=True, eq=False)
class ChainConfig:
    n_steps: int = 300
    burn_in: int = 100
    init: UnitMap | None = None
    seed: int = 0
    stream: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError("n_steps must be positive")
        if not 0 <= self.burn_in < self.n_steps:
            raise ConfigError("burn_in must satisfy 0 <= burn_in < n_steps")
        object.__setattr__(self, "stream", tuple(int(k) for k in self.stream))


class MapSeries:
    """Ordered, immutable sequence of maps sharing one grid.

    Stored as an ``(n, M + 1)`` array; ``series[i]`` returns a :class:`UnitMap`.
    """

    def __init__(self, values, burn_in: int = 0, seed: int | None = None,
                 params: dict | None = None):
        v = np.array(values, dtype=float)
        if v.ndim != 2 or v.shape[1] < 2:
            raise InputError("a map series needs a 2-D array (time x grid)")
        for row in v:
            UnitMap(row)  # validates invariants
        v.setflags(write=False)
        self._values = v
        self.burn_in = int(burn_in)
        self.seed = seed
        self.params = params

    @classmethod
    def from_maps(cls, maps: Iterable[UnitMap], **meta) -> "MapSeries":
        maps = list(maps)
        if not maps:
            raise InputError("empty map series")
        if len({mp.m for mp in maps}) != 1:
            raise InputError("all maps in a series must share the grid size")
        return cls(np.stack([mp.values for mp in maps]), **meta)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def m(self) -> int:
        return self._values.shape[1] - 1

    @property
    def maps(self) -> list[UnitMap]:
        return [UnitMap(row) for row in self._values]

    def __len__(self) -> int:
        return self._values.shape[0]

    def __getitem__(self, i) -> UnitMap:
        return UnitMap(self._values[i])

    def __eq__(self, other) -> bool:
        if not isinstance(other, MapSeries):
            return NotImplemented
        return np.array_equal(self._values, other._values)

    def __repr__(self) -> str:
        return f"MapSeries(n={len(self)}, m={self.m})"


# ---------------------------------------------------------------------------
# one step of the iteration
# ---------------------------------------------------------------------------

def _contract_at(alpha: float, t: np.ndarray, t_inv: np.ndarray | None, y: np.ndarray) -> np.ndarray:
    if alpha == 0:
        return y
    if alpha == 1:
        return _interp_uniform(t, y)
    if alpha > 0:
        return y + alpha * (_interp_uniform(t, y) - y)
    if alpha == -1:
        return _interp_uniform(t_inv, y)
    return y + alpha * (y - _interp_uniform(t_inv, y))


def _needs_inverse(params: ModelParams) -> bool:
    return params.alpha < 0


def _step_values(params: ModelParams, t: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Grid samples of the next map, before the strictness check."""
    t_inv = _invert_values(t) if _needs_inverse(params) else None
    if params.system is SystemKind.PERTURB_THEN_MAP:
        c = _contract_values(params.alpha, t, t_inv)
        return _interp_uniform(eps, _interp_uniform(params.s.values, c))
    c = _contract_about_values(params.alpha, t, params.s.values, t_inv)
    return _interp_uniform(eps, c)


def _step_at(params: ModelParams, t: np.ndarray, eps: np.ndarray, y: np.ndarray) -> np.ndarray:
    """The next map evaluated directly at arbitrary points ``y``.

    Used to push quantile curves along a chain without resampling the
    intermediate map on the grid first.
    """
    t_inv = _invert_values(t) if _needs_inverse(params) else None
    s = params.s.values
    if params.system is SystemKind.PERTURB_THEN_MAP:
        c = _contract_at(params.alpha, t, t_inv, y)
        return _interp_uniform(eps, _interp_uniform(s, c))
    a = params.alpha
    s_y = _interp_uniform(s, y)
    if a == 0:
        c = s_y
    elif a > 0:
        c = s_y + a * (_interp_uniform(t, y) - s_y)
    else:
        c = s_y + a * (s_y - _interp_uniform(t_inv, y))
    return _interp_uniform(eps, c)


def step(params: ModelParams, t_prev: UnitMap, eps: UnitMap) -> UnitMap:
    """One iteration of the system selected by ``params.system``."""
    if not (t_prev.m == eps.m == params.s.m):
        raise DomainError("t_prev, eps and s must share the grid size")
    return UnitMap(_strictify(_step_values(params, t_prev.values, eps.values)))


class _NoiseStream:
    """Draws noise maps one step at a time from a seeded generator."""

    def __init__(self, spec: NoiseSpec, rng: np.random.Generator, m: int):
        self.spec = spec
        self.rng = rng
        self.table = _ZetaTable(spec.k_max, m)
        self.w = np.asarray(spec.weights)

    def next(self) -> np.ndarray:
        ks = _draw_ks(self.spec, self.rng, 1)[0]
        rows = self.table.lookup(ks)
        out = self.w @ rows
        out[0], out[-1] = 0.0, 1.0
        return out


def simulate_chain(params: ModelParams, cfg: ChainConfig, spec: NoiseSpec) -> MapSeries:
    """Run the chain from ``cfg.init`` and keep the maps after burn-in."""
    maps, _ = _simulate(params, cfg, spec, None, None)
    return maps


def simulate_distributions(params: ModelParams, cfg: ChainConfig, spec: NoiseSpec,
                           kind: ModelKind, init_q: QuantileCurve):
    """Simulate a chain and the distribution series it induces under ``kind``.

    Curves are produced by evaluating each new map directly at the previous
    curve's samples (increment model) or at the reference quantiles
    (generalized model), which avoids an extra interpolation of the grid
    map. Returns ``(MapSeries, list[QuantileCurve])`` restricted to the
    post-burn-in steps.
    """
    return _simulate(params, cfg, spec, kind, init_q)


def _simulate(params, cfg, spec, kind, init_q):
    m = params.s.m
    init = cfg.init if cfg.init is not None else UnitMap.identity(m)
    if init.m != m:
        raise DomainError("init map and s must share the grid size")
    if init_q is not None and init_q.unit.m != m:
        raise DomainError("init_q and s must share the grid size")
    noise = _NoiseStream(spec, substream(cfg.seed, *cfg.stream), m)
    n_keep = cfg.n_steps - cfg.burn_in
    maps = np.empty((n_keep, m + 1))
    tag = kind.tag if kind is not None else None
    curves = np.empty((n_keep, m + 1)) if kind is not None else None
    q = init_q.unit.values if tag is Interpretation.INCREMENT else None
    ref = kind.reference.unit.values if tag is Interpretation.GENERALIZED_QUANTILE else None
    t = init.values
    for i in range(cfg.n_steps):
        eps = noise.next()
        if tag is Interpretation.INCREMENT:
            q = _strictify(_step_at(params, t, eps, q))
        t_next = _strictify(_step_values(params, t, eps))
        k = i - cfg.burn_in
        if k >= 0:
            maps[k] = t_next
            if tag is Interpretation.INCREMENT:
                curves[k] = q
            elif tag is Interpretation.UNIFORM_QUANTILE:
                curves[k] = t_next
            elif tag is Interpretation.GENERALIZED_QUANTILE:
                curves[k] = _strictify(_step_at(params, t, eps, ref))
        t = t_next
    series = MapSeries(maps, burn_in=cfg.burn_in, seed=cfg.seed, params=params.to_dict())
    if kind is None:
        return series, None
    domain = kind.reference.domain if ref is not None else init_q.domain
    return series, [QuantileCurve(domain, UnitMap(row)) for row in curves]


# ---------------------------------------------------------------------------
# maps <-> distributions
# ---------------------------------------------------------------------------

def series_to_distributions(series: MapSeries, kind: ModelKind,
                            init_q: QuantileCurve | None = None) -> list[QuantileCurve]:
    """Distribution series induced by a map series, one curve per map.

    Increment model: ``q_i = T_i o q_{i-1}`` starting from ``init_q`` (which
    is not included in the output). Uniform-quantile model: ``q_i = T_i`` on
    ``init_q``'s domain (the unit interval when omitted). Generalized model:
    ``q_i = T_i o q_ref``.
    """
    tag = kind.tag
    if tag is Interpretation.GENERALIZED_QUANTILE:
        ref = kind.reference
        if ref.unit.m != series.m:
            raise DomainError("reference and series must share the grid size")
        return [QuantileCurve(ref.domain, compose(t, ref.unit)) for t in series.maps]
    if tag is Interpretation.UNIFORM_QUANTILE:
        domain = init_q.domain if init_q is not None else Interval.unit()
        return [QuantileCurve(domain, t) for t in series.maps]
    if init_q is None:
        raise ConfigError("the increment model needs an initial quantile curve")
    if init_q.unit.m != series.m:
        raise DomainError("init_q and series must share the grid size")
    out = []
    q = init_q.unit
    for t in series.maps:
        q = compose(t, q)
        out.append(QuantileCurve(init_q.domain, q))
    return out


def maps_from_distributions(curves: Sequence[QuantileCurve], kind: ModelKind) -> MapSeries:
    """Recover the map series from a distribution series (inverse of the above).

    The increment model yields ``len(curves) - 1`` maps
    ``T_i = q_i o q_{i-1}^{-1}``; the quantile readings yield one map per curve.
    """
    curves = list(curves)
    if not curves:
        raise InputError("empty curve series")
    domain = curves[0].domain
    if any(c.domain != domain for c in curves):
        raise InputError("all curves must share one domain")
    tag = kind.tag
    if tag is Interpretation.INCREMENT:
        if len(curves) < 2:
            raise InputError("the increment model needs at least two curves")
        maps = [compose(b.unit, invert(a.unit)) for a, b in zip(curves[:-1], curves[1:])]
    elif tag is Interpretation.UNIFORM_QUANTILE:
        maps = [c.unit for c in curves]
    else:
        ref = kind.reference
        if ref.domain != domain:
            raise InputError("curves and reference measure must share one domain")
        ref_inv = invert(ref.unit)
        maps = [compose(c.unit, ref_inv) for c in curves]
    return MapSeries.from_maps(maps)


# ---------------------------------------------------------------------------
# stationarity
# ---------------------------------------------------------------------------

@dataclass
class StationarityReport:
    l_s: float
    l_eps: float
    product: float
    r: float
    satisfied: bool
    caveats: list[str] = field(default_factory=list)

    @property
    def in_theory_region(self) -> bool:
        return self.satisfied and not self.caveats

    def to_dict(self) -> dict:
        return {"l_s": self.l_s, "l_eps": self.l_eps, "product": self.product, "r": self.r,
                "satisfied": self.satisfied, "caveats": list(self.caveats),
                "in_theory_region": self.in_theory_region}


def check_stationarity_condition(params: ModelParams, spec: NoiseSpec) -> StationarityReport:
    """Sufficient condition ``|alpha| L_S L_eps < 1`` for a unique stationary solution.

    ``L_S`` is the largest grid slope of ``s``. A negative alpha additionally
    requires every map of the chain to have slopes in a fixed positive band,
    which cannot be checked a priori; it is reported as a caveat.
    """
    l_s = params.s.max_slope()
    l_eps = lipschitz_bound(spec)
    product = abs(params.alpha) * l_s * l_eps
    caveats = []
    if params.alpha < 0:
        caveats.append("negative alpha: requires all chain maps to have slopes in a fixed band")
    if params.system is not SystemKind.PERTURB_THEN_MAP:
        caveats.append("condition derived for the perturb-then-map system only")
    return StationarityReport(l_s=l_s, l_eps=l_eps, product=product, r=float(np.sqrt(product)),
                              satisfied=bool(product < 1), caveats=caveats)
