import numpy as np
import pytest

from otar.dynamics import (
    ChainConfig,
    MapSeries,
    ModelKind,
    ModelParams,
    SystemKind,
    check_stationarity_condition,
    maps_from_distributions,
    series_to_distributions,
    simulate_chain,
    simulate_distributions,
    step,
)
from otar.errors import ConfigError, DomainError, InputError
from otar.noise import NoiseSpec, zeta_map
from otar.transport import (
    Interval,
    QuantileCurve,
    UnitMap,
    compose,
    contract,
    contract_about,
    grid,
    lp_distance,
)

from conftest import random_map

M = 200
ID = UnitMap.identity(M)
PTM = SystemKind.PERTURB_THEN_MAP
CA = SystemKind.CONTRACT_ABOUT


def test_params_validation():
    with pytest.raises(DomainError):
        ModelParams(1.2, ID)
    ModelParams(1.0, ID)
    with pytest.raises(DomainError):
        ModelParams(1.0, ID, CA)
    p = ModelParams(0.4, zeta_map(-2, M), CA)
    assert ModelParams.from_dict(p.to_dict()).s == p.s


def test_model_kind_reference_rule():
    q = QuantileCurve(Interval.unit(), ID)
    with pytest.raises(ConfigError):
        ModelKind("generalized-quantile")
    with pytest.raises(ConfigError):
        ModelKind("increment", q)
    assert ModelKind.generalized_quantile(q).reference is q


def test_chain_config_validation():
    with pytest.raises(ConfigError):
        ChainConfig(n_steps=10, burn_in=10)
    with pytest.raises(ConfigError):
        ChainConfig(n_steps=0, burn_in=0)


def test_step_trivial_cases(rng):
    t = random_map(rng, M)
    s = random_map(rng, M)
    assert np.allclose(step(ModelParams(0, ID), t, ID).values, grid(M), atol=1e-15)
    assert np.allclose(step(ModelParams(0, s), t, ID).values, s.values, atol=1e-15)
    assert np.allclose(step(ModelParams(1, s), t, ID).values, compose(s, t).values, atol=1e-15)


def test_step_matches_operator_composition(rng):
    t, s, eps = random_map(rng, M), random_map(rng, M), random_map(rng, M)
    for a in (-0.6, 0.3, 0.8):
        got = step(ModelParams(a, s), t, eps).values
        want = compose(eps, compose(s, contract(a, t))).values
        assert np.max(np.abs(got - want)) < 1e-9
        got = step(ModelParams(a, s, CA), t, eps).values
        want = compose(eps, contract_about(a, t, s)).values
        assert np.max(np.abs(got - want)) < 1e-9


def test_simulate_noiseless_alpha_zero_is_constant():
    s = zeta_map(-4, M)
    series = simulate_chain(ModelParams(0.0, s), ChainConfig(20, 0), NoiseSpec.none())
    assert len(series) == 20
    assert all(np.allclose(row, s.values, atol=1e-15) for row in series.values)


def test_simulate_noiseless_geometric_decay():
    t0 = zeta_map(-3, M)
    a = 0.6
    series = simulate_chain(ModelParams(a, ID), ChainConfig(8, 0, init=t0), NoiseSpec.none())
    d = [lp_distance(t0, ID, 1)] + [lp_distance(t, ID, 1) for t in series.maps]
    ratios = np.array(d[1:]) / np.array(d[:-1])
    assert np.allclose(ratios, a, rtol=1e-9)


def test_simulate_protocol_length_and_meta():
    p = ModelParams(0.5, zeta_map(-2, M))
    series = simulate_chain(p, ChainConfig(300, 100, seed=7), NoiseSpec())
    assert len(series) == 200 and series.m == M
    assert series.burn_in == 100 and series.seed == 7
    assert series.params["alpha"] == 0.5


def test_simulate_deterministic_and_prefix_stable():
    p = ModelParams(0.5, zeta_map(-2, M))
    a = simulate_chain(p, ChainConfig(50, 0, seed=3), NoiseSpec())
    b = simulate_chain(p, ChainConfig(50, 0, seed=3), NoiseSpec())
    c = simulate_chain(p, ChainConfig(30, 0, seed=3), NoiseSpec())
    d = simulate_chain(p, ChainConfig(50, 0, seed=4), NoiseSpec())
    assert a == b
    assert np.array_equal(a.values[:30], c.values)
    assert not np.array_equal(a.values, d.values)


def test_simulated_chain_matches_manual_iteration():
    from otar.dynamics import _NoiseStream
    from otar.noise import substream
    p = ModelParams(-0.4, zeta_map(-2, M))
    series = simulate_chain(p, ChainConfig(10, 0, seed=2), NoiseSpec())
    noise = _NoiseStream(NoiseSpec(), substream(2, 0), M)
    t = ID
    for row in series.values:
        t = step(p, t, UnitMap(noise.next()))
        assert np.max(np.abs(t.values - row)) < 1e-12


def test_map_series_validation():
    with pytest.raises(InputError):
        MapSeries(np.zeros(5))
    with pytest.raises(InputError):
        MapSeries.from_maps([ID, UnitMap.identity(M + 1)])


# -- distributional readings --------------------------------------------------

def test_readings_with_identity_maps():
    series = MapSeries.from_maps([ID] * 4)
    dom = Interval(-3.0, 7.0)
    q0 = QuantileCurve(dom, zeta_map(-2, M))
    uq = series_to_distributions(series, ModelKind.uniform_quantile())
    assert all(np.allclose(c.values, grid(M)) for c in uq)
    inc = series_to_distributions(series, ModelKind.increment(), q0)
    assert all(np.allclose(c.values, q0.values, atol=1e-12) for c in inc)
    gq = series_to_distributions(series, ModelKind.generalized_quantile(q0))
    assert all(np.allclose(c.values, q0.values, atol=1e-12) for c in gq)
    with pytest.raises(ConfigError):
        series_to_distributions(series, ModelKind.increment())


@pytest.mark.parametrize("tag", ["increment", "uniform-quantile", "generalized-quantile"])
def test_round_trip_maps_distributions(tag, rng):
    maps = [random_map(rng, M, 0.3) for _ in range(6)]
    series = MapSeries.from_maps(maps)
    q0 = QuantileCurve(Interval(0.0, 2.0), random_map(rng, M, 0.3))
    kind = ModelKind.generalized_quantile(q0) if tag == "generalized-quantile" else ModelKind(tag)
    curves = series_to_distributions(series, kind, q0)
    if tag == "increment":
        curves = [q0] + curves
    back = maps_from_distributions(curves, kind)
    assert len(back) == len(series)
    assert np.max(np.abs(back.values - series.values)) <= 3.0 / M


def test_constant_curves_give_identity_increments(rng):
    q = QuantileCurve(Interval.unit(), random_map(rng, M))
    back = maps_from_distributions([q] * 5, ModelKind.increment())
    assert np.max(np.abs(back.values - grid(M))) <= 2.0 / M


def test_simulate_distributions_matches_series_to_distributions():
    p = ModelParams(0.3, zeta_map(-2, M))
    q0 = QuantileCurve(Interval(5.0, 9.0), zeta_map(3, M))
    series, curves = simulate_distributions(p, ChainConfig(40, 10, seed=1), NoiseSpec(),
                                            ModelKind.generalized_quantile(q0), q0)
    direct = series_to_distributions(series, ModelKind.generalized_quantile(q0))
    for a, b in zip(curves, direct):
        assert np.max(np.abs(a.unit.values - b.unit.values)) <= 3.0 / M


def test_increment_alpha0_equals_quantile_alpha1():
    s = zeta_map(-2, M)
    cfg = ChainConfig(60, 0, seed=11)
    q0 = QuantileCurve(Interval.unit(), ID)
    _, inc = simulate_distributions(ModelParams(0.0, s), cfg, NoiseSpec(), ModelKind.increment(), q0)
    _, uq = simulate_distributions(ModelParams(1.0, s), cfg, NoiseSpec(),
                                   ModelKind.uniform_quantile(), q0)
    assert all(np.array_equal(a.unit.values, b.unit.values) for a, b in zip(inc, uq))


def test_contract_about_mean_is_s():
    s = zeta_map(-2, M)
    series = simulate_chain(ModelParams(0.3, s, CA), ChainConfig(3000, 100, seed=5), NoiseSpec())
    v = series.values
    mean = v.mean(axis=0)
    # batch means: 20 batches absorb the serial correlation
    se = v.reshape(20, -1, M + 1).mean(axis=1).std(axis=0, ddof=1) / np.sqrt(20)
    inner = slice(1, -1)
    assert np.all(np.abs(mean - s.values)[inner] <= 5 * se[inner] + 1e-12)


# -- stationarity -------------------------------------------------------------

def test_stationarity_examples():
    spec = NoiseSpec()
    r = check_stationarity_condition(ModelParams(0.0, zeta_map(-4, M)), spec)
    assert r.satisfied and r.r == 0.0
    assert check_stationarity_condition(ModelParams(0.49, ID), spec).satisfied
    assert not check_stationarity_condition(ModelParams(0.51, ID), spec).satisfied
    r = check_stationarity_condition(ModelParams(0.9, zeta_map(-4, M)), spec)
    assert not r.satisfied and r.product > 1
    r = check_stationarity_condition(ModelParams(-0.3, ID), spec)
    assert r.satisfied and not r.in_theory_region and r.caveats
    r = check_stationarity_condition(ModelParams(0.3, ID, CA), spec)
    assert not r.in_theory_region
    r = check_stationarity_condition(ModelParams(0.4, ID), spec)
    assert r.in_theory_region and r.r == pytest.approx(np.sqrt(0.8))
