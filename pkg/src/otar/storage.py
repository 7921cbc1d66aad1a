"""File containers: a JSON header next to a CSV matrix.

A series lives in two files, ``<stem>.json`` and ``<stem>.csv``. The CSV has
one header row with the grid abscissae and one row per time step; numbers
are written with 17 significant digits, so reading back is bit-exact.

Header fields:

* map series: ``format="map-series"``, ``m``, ``n``, ``burn_in``, ``seed``,
  ``params`` (or null) and ``matrix`` (CSV file name, relative to the header)
* curve series: ``format="curve-series"``, ``m``, ``n``, ``domain``,
  ``periods``, ``flags`` and ``matrix``; rows hold normalized quantiles
* fit result: ``format="fit-result"`` plus the scalar fields, with ``s_hat``
  (an ``x,value`` map CSV) and ``objective_profile`` (``alpha,objective``)
  as file references
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .dynamics import MapSeries, SystemKind
from .errors import InputError
from .estimation import FitResult
from .ingest import EmpiricalSeries
from .transport import Interval, QuantileCurve, UnitMap, grid

MAP_SERIES = "map-series"
CURVE_SERIES = "curve-series"
FIT_RESULT = "fit-result"


def _stem(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".json", ".csv") else p


def _write_matrix(path: Path, values: np.ndarray) -> None:
    m = values.shape[1] - 1
    with path.open("w", newline="") as fh:
        fh.write(",".join(f"{x:.17g}" for x in grid(m)) + "\n")
        np.savetxt(fh, values, fmt="%.17g", delimiter=",")


def _read_matrix(path: Path, m: int, n: int) -> np.ndarray:
    if not path.is_file():
        raise InputError(f"missing matrix file {path}")
    try:
        values = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise InputError(f"unparseable matrix {path.name}: {exc}") from exc
    if values.shape != (n, m + 1):
        raise InputError(f"{path.name}: expected shape {(n, m + 1)}, got {values.shape}")
    return values


def _write_header(stem: Path, header: dict) -> Path:
    out = stem.with_suffix(".json")
    out.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return out


def read_header(path) -> dict:
    p = _stem(path).with_suffix(".json")
    if not p.is_file():
        raise InputError(f"no such file: {p}")
    try:
        header = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{p.name} is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or "format" not in header:
        raise InputError(f"{p.name} is not a container header")
    return header


def write_map_series(series: MapSeries, path) -> Path:
    """Write ``series``; returns the header path."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    matrix = stem.with_suffix(".csv")
    _write_matrix(matrix, series.values)
    return _write_header(stem, {
        "format": MAP_SERIES, "m": series.m, "n": len(series), "burn_in": series.burn_in,
        "seed": series.seed, "params": series.params, "matrix": matrix.name,
    })


def read_map_series(path) -> MapSeries:
    header = read_header(path)
    if header["format"] != MAP_SERIES:
        raise InputError(f"expected a {MAP_SERIES} container, got {header['format']!r}")
    base = _stem(path).parent
    values = _read_matrix(base / header["matrix"], int(header["m"]), int(header["n"]))
    return MapSeries(values, burn_in=int(header.get("burn_in", 0)), seed=header.get("seed"),
                     params=header.get("params"))


def write_curve_series(series: EmpiricalSeries, path) -> Path:
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    matrix = stem.with_suffix(".csv")
    _write_matrix(matrix, np.stack([c.unit.values for c in series.curves]))
    return _write_header(stem, {
        "format": CURVE_SERIES, "m": series.m, "n": len(series),
        "domain": [series.domain.lo, series.domain.hi], "periods": list(series.periods),
        "flags": {str(k): v for k, v in series.flags.items()}, "matrix": matrix.name,
    })


def read_curve_series(path) -> EmpiricalSeries:
    header = read_header(path)
    if header["format"] != CURVE_SERIES:
        raise InputError(f"expected a {CURVE_SERIES} container, got {header['format']!r}")
    base = _stem(path).parent
    values = _read_matrix(base / header["matrix"], int(header["m"]), int(header["n"]))
    dom = Interval(*header["domain"])
    curves = tuple(QuantileCurve(dom, UnitMap(row)) for row in values)
    periods = tuple(header["periods"])
    lookup = {str(p): p for p in periods}
    flags = {lookup.get(k, k): v for k, v in header.get("flags", {}).items()}
    return EmpiricalSeries(periods, curves, dom, flags)


def curves_to_series(curves, periods=None) -> EmpiricalSeries:
    """Wrap a plain list of curves (e.g. simulated) as an :class:`EmpiricalSeries`."""
    curves = tuple(curves)
    if not curves:
        raise InputError("empty curve list")
    periods = tuple(periods) if periods is not None else tuple(range(len(curves)))
    return EmpiricalSeries(periods, curves, curves[0].domain)


def write_fit(result: FitResult, path) -> Path:
    """Write the fit header plus ``<stem>_s_hat.csv`` and ``<stem>_profile.csv``."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    s_path = stem.parent / f"{stem.name}_s_hat.csv"
    prof_path = stem.parent / f"{stem.name}_profile.csv"
    result.s_hat.to_csv(s_path)
    with prof_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "objective"])
        for a, v in result.objective_profile:
            w.writerow([repr(a), repr(v)])
    header = {"format": FIT_RESULT, **result.to_dict(),
              "s_hat": s_path.name, "objective_profile": prof_path.name}
    return _write_header(stem, header)


def read_fit(path) -> FitResult:
    header = read_header(path)
    if header["format"] != FIT_RESULT:
        raise InputError(f"expected a {FIT_RESULT} container, got {header['format']!r}")
    base = _stem(path).parent
    s_hat = UnitMap.from_csv(base / header["s_hat"])
    with (base / header["objective_profile"]).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["alpha", "objective"]:
        raise InputError("profile file needs the header 'alpha,objective'")
    profile = [(float(a), float(v)) for a, v in rows[1:]]
    return FitResult(
        alpha_hat=float(header["alpha_hat"]), s_hat=s_hat, objective_profile=profile,
        n_used=int(header["n_used"]), derivative_at_opt=header["derivative_at_opt"],
        system=SystemKind(header["system"]), objective_at_opt=float(header["objective_at_opt"]),
        flags=list(header["flags"]), diagnostics=dict(header["diagnostics"]),
    )
