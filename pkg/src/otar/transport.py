"""Monotone maps of the unit interval and the 1-D Wasserstein metric.

Maps are stored as samples on the uniform grid ``k / M`` (``k = 0..M``) and
extended by piecewise-linear interpolation. Composition, inversion and the
alpha-contractions all act on these samples; integrals are trapezoid sums.

The module-level helpers prefixed with an underscore work on raw numpy arrays
(one map per row for the ``*_rows`` variants) and are shared with the
estimation code, which cannot afford to build a :class:`UnitMap` per term.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DegenerateMapError, DomainError

DEFAULT_M = 1000
EPS_RAMP = 1e-9
# negative increments smaller than this are treated as rounding noise
_ROUNDING_TOL = 1e-12


@lru_cache(maxsize=32)
def _grid_cached(m: int) -> np.ndarray:
    g = np.arange(m + 1, dtype=float) / m
    g.setflags(write=False)
    return g


def grid(m: int) -> np.ndarray:
    """Uniform grid ``k / m`` for ``k = 0..m`` (read-only)."""
    if m < 1:
        raise DomainError(f"grid size must be >= 1, got {m}")
    return _grid_cached(int(m))


# ---------------------------------------------------------------------------
# array kernels
# ---------------------------------------------------------------------------

def _interp_uniform(values: np.ndarray, x) -> np.ndarray:
    """Evaluate the interpolant of ``values`` (uniform knots on [0, 1]) at ``x``.

    Written as ``(1 - f) * v[i] + f * v[i + 1]`` so that both endpoints of a
    cell are reproduced exactly; in particular 0 -> values[0], 1 -> values[-1].
    """
    m = values.shape[-1] - 1
    t = np.asarray(x, dtype=float) * m
    i = np.clip(np.floor(t).astype(np.intp), 0, m - 1)
    f = t - i
    return (1.0 - f) * values[i] + f * values[i + 1]


def _eval_rows(values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Row-wise :func:`_interp_uniform`: row r of ``values`` at row r of ``x``."""
    n, m1 = values.shape
    m = m1 - 1
    t = x * m
    i = t.astype(np.intp)
    np.clip(i, 0, m - 1, out=i)
    f = t - i
    i += (np.arange(n, dtype=np.intp) * m1)[:, None]
    flat = values.ravel()
    return (1.0 - f) * flat[i] + f * flat[i + 1]


def _invert_values(values: np.ndarray) -> np.ndarray:
    """Inverse of the interpolant, resampled on the uniform grid."""
    g = grid(values.shape[-1] - 1)
    return np.interp(g, values, g)


def _invert_rows(values: np.ndarray) -> np.ndarray:
    g = grid(values.shape[-1] - 1)
    out = np.empty_like(values)
    for r in range(values.shape[0]):
        out[r] = np.interp(g, values[r], g)
    return out


def _slopes(values: np.ndarray) -> np.ndarray:
    """Grid derivative: central differences inside, one-sided at the ends."""
    m = values.shape[-1] - 1
    return np.gradient(values, 1.0 / m, axis=-1, edge_order=1)


def _contract_values(alpha: float, t: np.ndarray, t_inv: np.ndarray | None = None) -> np.ndarray:
    """``[alpha T]`` on the grid; works on one map or a stack of rows."""
    x = grid(t.shape[-1] - 1)
    if alpha == 0:
        return np.broadcast_to(x, t.shape).copy()
    if alpha == 1:
        return t.copy()
    if alpha > 0:
        return x + alpha * (t - x)
    if t_inv is None:
        t_inv = _invert_values(t) if t.ndim == 1 else _invert_rows(t)
    if alpha == -1:
        return t_inv.copy()
    return x + alpha * (x - t_inv)


def _contract_about_values(alpha: float, t: np.ndarray, s: np.ndarray,
                           t_inv: np.ndarray | None = None) -> np.ndarray:
    if alpha == 0:
        return np.broadcast_to(s, t.shape).copy()
    if alpha > 0:
        return s + alpha * (t - s)
    if t_inv is None:
        t_inv = _invert_values(t) if t.ndim == 1 else _invert_rows(t)
    return s + alpha * (s - t_inv)


def _trapz(y: np.ndarray) -> np.ndarray:
    """Composite trapezoid rule over [0, 1] along the last axis."""
    m = y.shape[-1] - 1
    return (y.sum(axis=-1) - 0.5 * (y[..., 0] + y[..., -1])) / m


def _strictify(values: np.ndarray) -> np.ndarray:
    """Pin endpoints and separate ties with an epsilon ramp.

    Raises :class:`DegenerateMapError` for genuine decreases.
    """
    v = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    v[0], v[-1] = 0.0, 1.0
    d = np.diff(v)
    if np.all(d > 0):
        return v
    if d.min() < -_ROUNDING_TOL:
        k = int(np.argmin(d))
        raise DegenerateMapError(
            f"map decreases between grid points {k} and {k + 1} (by {-d[k]:.3g})")
    v = np.maximum.accumulate(v)
    v = v + EPS_RAMP * grid(v.size - 1)
    v = (v - v[0]) / (v[-1] - v[0])
    v[0], v[-1] = 0.0, 1.0
    if not np.all(np.diff(v) > 0):
        raise DegenerateMapError("map has a flat run that the epsilon ramp cannot separate")
    return v


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

class UnitMap:
    """Strictly increasing map of [0, 1] onto itself, sampled on ``k / M``.

    Construction validates the invariants (pinned endpoints, strict increase,
    values in [0, 1]) and stores a read-only copy. Use :meth:`from_values` for
    data that may contain ties.
    """

    __slots__ = ("_values",)

    def __init__(self, values):
        v = np.array(values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise DomainError("a UnitMap needs a 1-D array of at least 2 samples")
        if not np.all(np.isfinite(v)):
            raise DegenerateMapError("map values must be finite")
        if v[0] != 0.0 or v[-1] != 1.0:
            raise DegenerateMapError(
                f"endpoints must be pinned to 0 and 1, got {v[0]!r} and {v[-1]!r}")
        d = np.diff(v)
        if not np.all(d > 0):
            k = int(np.argmin(d))
            raise DegenerateMapError(f"map is not strictly increasing at grid point {k}")
        v.setflags(write=False)
        self._values = v

    @classmethod
    def from_values(cls, values) -> "UnitMap":
        """Build from raw samples, pinning endpoints and repairing ties."""
        return cls(_strictify(values))

    @classmethod
    def identity(cls, m: int = DEFAULT_M) -> "UnitMap":
        return cls(grid(m))

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], m: int = DEFAULT_M) -> "UnitMap":
        return cls.from_values(fn(grid(m)))

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def m(self) -> int:
        return self._values.size - 1

    @property
    def grid(self) -> np.ndarray:
        return grid(self.m)

    def __call__(self, x):
        return evaluate(self, x)

    def __len__(self) -> int:
        return self._values.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, UnitMap):
            return NotImplemented
        return np.array_equal(self._values, other._values)

    def __hash__(self):
        return hash(self._values.tobytes())

    def __repr__(self) -> str:
        return f"UnitMap(m={self.m})"

    def min_slope(self) -> float:
        return float(np.diff(self._values).min() * self.m)

    def max_slope(self) -> float:
        return float(np.diff(self._values).max() * self.m)

    # -- serialization ---------------------------------------------------
    def to_json_dict(self) -> dict:
        return {"m": self.m, "values": self._values.tolist()}

    @classmethod
    def from_json_dict(cls, data: dict) -> "UnitMap":
        values = data["values"]
        if len(values) != int(data["m"]) + 1:
            raise DomainError(f"expected {int(data['m']) + 1} values, got {len(values)}")
        return cls(values)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    @classmethod
    def from_json(cls, path) -> "UnitMap":
        return cls.from_json_dict(json.loads(Path(path).read_text()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "value"])
            for x, v in zip(self.grid, self._values):
                w.writerow([repr(float(x)), repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "UnitMap":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["x", "value"]:
            raise DomainError(f"{path}: expected header 'x,value'")
        return cls([float(r[1]) for r in rows[1:] if r])


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or not self.hi > self.lo:
            raise DomainError(f"invalid interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @classmethod
    def unit(cls) -> "Interval":
        return cls(0.0, 1.0)


@dataclass(frozen=True, eq=False)
class QuantileCurve:
    """Quantile function on ``domain``, stored as a normalized :class:`UnitMap`."""

    domain: Interval
    unit: UnitMap

    @classmethod
    def from_quantiles(cls, quantiles, domain: Interval) -> "QuantileCurve":
        q = (np.asarray(quantiles, dtype=float) - domain.lo) / domain.width
        return cls(domain, UnitMap.from_values(q))

    @property
    def values(self) -> np.ndarray:
        """De-normalized quantiles on the grid."""
        return self.domain.lo + self.domain.width * self.unit.values

    def __call__(self, p):
        return self.domain.lo + self.domain.width * evaluate(self.unit, p)

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantileCurve):
            return NotImplemented
        return self.domain == other.domain and self.unit == other.unit


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def evaluate(m: UnitMap, x):
    """Piecewise-linear evaluation of ``m`` at ``x`` (scalar or array) in [0, 1]."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(xa > 1) or np.any(np.isnan(xa)):
        raise DomainError("evaluation point outside [0, 1]")
    out = _interp_uniform(m.values, xa)
    return float(out) if out.ndim == 0 else out


def _check_same_grid(f: UnitMap, g: UnitMap) -> None:
    if f.m != g.m:
        raise DomainError(f"grid mismatch: M={f.m} vs M={g.m}")


def compose(f: UnitMap, g: UnitMap) -> UnitMap:
    """``f o g`` sampled on the grid."""
    _check_same_grid(f, g)
    return UnitMap.from_values(_interp_uniform(f.values, g.values))


def invert(m: UnitMap) -> UnitMap:
    """Exact inverse of the interpolant of ``m``, resampled on the grid."""
    if not np.all(np.diff(m.values) > 0):
        raise DegenerateMapError("cannot invert a map with a flat segment")
    return UnitMap(_invert_values(m.values))


def contract(alpha: float, t: UnitMap) -> UnitMap:
    """The alpha-contraction ``[alpha T]`` toward the identity.

    For ``alpha > 0`` this is ``x + alpha (T(x) - x)``; for ``alpha < 0`` the
    inverse map is used instead, ``x + alpha (x - T^{-1}(x))``.
    """
    if not -1 <= alpha <= 1:
        raise DomainError(f"alpha must lie in [-1, 1], got {alpha}")
    if alpha == 0:
        return UnitMap.identity(t.m)
    if alpha == 1:
        return t
    if alpha == -1:
        return invert(t)
    return UnitMap.from_values(_contract_values(alpha, t.values))


def contract_about(alpha: float, t: UnitMap, s: UnitMap) -> UnitMap:
    """Contraction of ``t`` toward an arbitrary map ``s`` instead of the identity."""
    if not -1 < alpha < 1:
        raise DomainError(f"alpha must lie in (-1, 1), got {alpha}")
    _check_same_grid(t, s)
    if alpha == 0:
        return s
    return UnitMap.from_values(_contract_about_values(alpha, t.values, s.values))


def lp_distance(f: UnitMap, g: UnitMap, p: float = 2.0) -> float:
    """``(int_0^1 |f - g|^p dx)^(1/p)`` by the trapezoid rule on the grid."""
    if not p >= 1:
        raise DomainError(f"p must be >= 1, got {p}")
    _check_same_grid(f, g)
    diff = np.abs(f.values - g.values)
    return float(_trapz(diff ** p) ** (1.0 / p))


def wasserstein(q1: QuantileCurve, q2: QuantileCurve) -> float:
    """2-Wasserstein distance, in the units of the shared domain."""
    if q1.domain != q2.domain:
        raise DomainError(f"domain mismatch: {q1.domain} vs {q2.domain}")
    return q1.domain.width * lp_distance(q1.unit, q2.unit, 2.0)
