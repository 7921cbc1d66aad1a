"""From raw per-period samples to a series of quantile curves.

Typical input is a station file with one daily reading per row; each period
(a year, say) becomes one empirical distribution. All curves share a common
domain so that consecutive periods can be compared through transport maps.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dynamics import MapSeries, ModelKind, maps_from_distributions
from .errors import InputError
from .transport import DEFAULT_M, Interval, QuantileCurve, UnitMap, _strictify

DOMAIN_PAD = 0.01
_MISSING = {"", "na", "nan", "null", "none", "missing"}


@dataclass(frozen=True)
class SampleTable:
    """Finite sample values grouped by period, periods in ascending order."""

    periods: tuple
    groups: tuple[np.ndarray, ...]
    n_dropped: int = 0

    def __post_init__(self):
        if len(self.periods) != len(self.groups):
            raise InputError("one group of values per period is required")
        if list(self.periods) != sorted(self.periods) or len(set(self.periods)) != len(self.periods):
            raise InputError("periods must be unique and strictly increasing")
        for key, g in zip(self.periods, self.groups):
            if g.ndim != 1 or g.size < 2:
                raise InputError(f"period {key!r} has fewer than 2 values")
            if not np.all(np.isfinite(g)):
                raise InputError(f"period {key!r} contains non-finite values")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple], n_dropped: int = 0) -> "SampleTable":
        """Group ``(period, value)`` pairs; order within a period is irrelevant."""
        buckets: dict = {}
        for key, value in pairs:
            buckets.setdefault(key, []).append(float(value))
        if not buckets:
            raise InputError("no samples")
        try:
            keys = sorted(buckets)
        except TypeError as exc:
            raise InputError("period keys must be mutually comparable") from exc
        return cls(tuple(keys), tuple(np.asarray(buckets[k]) for k in keys), n_dropped)

    def __len__(self) -> int:
        return len(self.periods)

    def counts(self) -> dict:
        return {k: int(g.size) for k, g in zip(self.periods, self.groups)}


def _parse_value(raw: str | None):
    """Float, or None for a missing entry."""
    if raw is None or raw.strip().lower() in _MISSING:
        return None
    try:
        v = float(raw)
    except ValueError:
        raise InputError(f"cannot parse value {raw!r}") from None
    return v if math.isfinite(v) else None


def _period_key(raw: str):
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        return raw


def load_samples(path, value_col: str, period_col: str | None = None, date_col: str | None = None,
                 months: Sequence[int] | None = None, years: tuple[int, int] | None = None,
                 delimiter: str = ",") -> SampleTable:
    """Read a delimited file into a :class:`SampleTable`.

    Periods come from ``period_col`` or, when ``date_col`` is given instead,
    from the calendar year of an ISO date (``YYYY-MM-DD``). ``months`` keeps
    only the listed calendar months and ``years`` an inclusive year range;
    both need ``date_col``. Rows with a missing or non-finite value are
    dropped and counted in ``n_dropped``.
    """
    if (period_col is None) == (date_col is None):
        raise InputError("give exactly one of period_col and date_col")
    if (months or years) and date_col is None:
        raise InputError("month and year filters need a date column")
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    month_set = set(months) if months else None
    pairs = []
    dropped = 0
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        for col in (value_col, period_col or date_col):
            if col not in header:
                raise InputError(f"column {col!r} not found in {path.name}")
        try:
            for row in reader:
                if date_col is not None:
                    try:
                        day = date.fromisoformat(row[date_col].strip()[:10])
                    except (ValueError, AttributeError):
                        raise InputError(f"bad date {row[date_col]!r}") from None
                    if month_set and day.month not in month_set:
                        continue
                    if years and not years[0] <= day.year <= years[1]:
                        continue
                    key = day.year
                else:
                    key = _period_key(row[period_col] or "")
                value = _parse_value(row[value_col])
                if value is None:
                    dropped += 1
                    continue
                pairs.append((key, value))
        except csv.Error as exc:
            raise InputError(f"unparseable file {path.name}: {exc}") from exc
    if not pairs:
        raise InputError(f"no usable rows in {path.name}")
    return SampleTable.from_pairs(pairs, n_dropped=dropped)


@dataclass(frozen=True, eq=False)
class EmpiricalSeries:
    """One quantile curve per period on a shared domain."""

    periods: tuple
    curves: tuple[QuantileCurve, ...]
    domain: Interval
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.periods) != len(self.curves):
            raise InputError("one curve per period is required")
        if any(c.domain != self.domain for c in self.curves):
            raise InputError("all curves must share the series domain")

    def __len__(self) -> int:
        return len(self.curves)

    @property
    def m(self) -> int:
        return self.curves[0].unit.m

    def maps(self, kind: ModelKind) -> MapSeries:
        return maps_from_distributions(self.curves, kind)


def _padded_domain(groups: Sequence[np.ndarray]) -> Interval:
    lo = min(float(g.min()) for g in groups)
    hi = max(float(g.max()) for g in groups)
    width = hi - lo
    if width <= 0:
        raise InputError("all samples are identical; no domain can be inferred")
    return Interval(lo - DOMAIN_PAD * width, hi + DOMAIN_PAD * width)


def empirical_quantiles(table: SampleTable, m: int = DEFAULT_M,
                        domain: Interval | None = None) -> EmpiricalSeries:
    """Quantile curve of every period at ``p = k/m``.

    Quantiles interpolate linearly between order statistics (position
    ``p (n - 1)``). Curves are normalized to the domain, their end values
    are pinned to its bounds, and ties are separated by the epsilon ramp.
    Periods whose samples are all equal get a ``degenerate`` flag, periods
    that needed tie repair a ``ties-repaired`` flag.
    """
    if m < 2:
        raise InputError("m must be at least 2")
    dom = domain if domain is not None else _padded_domain(table.groups)
    p = np.arange(m + 1) / m
    curves = []
    flags: dict = {}
    for key, g in zip(table.periods, table.groups):
        if g.min() < dom.lo or g.max() > dom.hi:
            raise InputError(f"period {key!r} has samples outside {dom}")
        q = np.quantile(g, p, method="linear")
        unit = (q - dom.lo) / dom.width
        unit[0], unit[-1] = 0.0, 1.0
        unit = np.clip(unit, 0.0, 1.0)
        marks = []
        if g.min() == g.max():
            marks.append("degenerate")
        if np.any(np.diff(unit) <= 0):
            marks.append("ties-repaired")
        if marks:
            flags[key] = marks
        curves.append(QuantileCurve(dom, UnitMap(_strictify(unit))))
    return EmpiricalSeries(tuple(table.periods), tuple(curves), dom, flags)
