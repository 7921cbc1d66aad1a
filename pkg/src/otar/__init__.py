"""Autoregressive models for time series of distributions on an interval,
built from one-dimensional optimal transport maps."""

from .dynamics import (
    ChainConfig,
    Interpretation,
    MapSeries,
    ModelKind,
    ModelParams,
    StationarityReport,
    SystemKind,
    check_stationarity_condition,
    maps_from_distributions,
    series_to_distributions,
    simulate_chain,
    simulate_distributions,
    step,
)
from .errors import (
    ConfigError,
    DegenerateMapError,
    DomainError,
    InputError,
    NotDifferentiableError,
    OtarError,
)
from .estimation import (
    FitConfig,
    FitResult,
    ergodic_s,
    fit,
    fit_alt,
    objective,
    objective_alt,
    objective_derivative,
)
from .ingest import EmpiricalSeries, SampleTable, empirical_quantiles, load_samples
from .noise import NoiseSpec, exact_mean, lipschitz_bound, sample_noise_map, substream, zeta, zeta_map
from .transport import (
    DEFAULT_M,
    Interval,
    QuantileCurve,
    UnitMap,
    compose,
    contract,
    contract_about,
    evaluate,
    invert,
    lp_distance,
    wasserstein,
)

__version__ = "0.1.0"
