import numpy as np
import pytest

from otar.dynamics import ChainConfig, MapSeries, ModelParams, SystemKind, simulate_chain
from otar.errors import DomainError, InputError, NotDifferentiableError
from otar.estimation import (
    FitConfig,
    ergodic_s,
    fit,
    fit_alt,
    objective,
    objective_alt,
    objective_derivative,
)
from otar.noise import NoiseSpec, zeta_map
from otar.transport import UnitMap, compose, contract, grid, invert, lp_distance

from conftest import random_map

M = 200


@pytest.fixture(scope="module")
def noisy():
    p = ModelParams(0.3, zeta_map(-2, M))
    return simulate_chain(p, ChainConfig(101, 0, seed=21), NoiseSpec())


@pytest.fixture(scope="module")
def noiseless():
    # identification comes from the transient out of the identity map
    p = ModelParams(0.5, zeta_map(-2, 1000))
    return simulate_chain(p, ChainConfig(201, 0), NoiseSpec.none())


@pytest.fixture(scope="module")
def noisy_fine():
    p = ModelParams(0.3, zeta_map(-2, 1000))
    return simulate_chain(p, ChainConfig(101, 0, seed=21), NoiseSpec())


def _reference_objective(series, alpha):
    """Direct transcription with the public map operations."""
    maps = series.maps
    parts = [compose(t, invert(contract(alpha, tp))) for tp, t in zip(maps[:-1], maps[1:])]
    s = UnitMap.from_values(np.mean([p.values for p in parts], axis=0))
    res = [lp_distance(compose(s, contract(alpha, tp)), t, 2) ** 2
           for tp, t in zip(maps[:-1], maps[1:])]
    return s, float(np.mean(res))


def test_config_validation():
    with pytest.raises(DomainError):
        FitConfig(alpha_grid_step=0)
    with pytest.raises(DomainError):
        FitConfig(refine_tol=0)
    with pytest.raises(DomainError):
        FitConfig(alpha_bounds=(0.5, -0.5))


def test_ergodic_s_single_pair(rng):
    t0, t1 = random_map(rng, M), random_map(rng, M)
    series = MapSeries.from_maps([t0, t1])
    want = compose(t1, invert(contract(0.4, t0))).values
    assert np.max(np.abs(ergodic_s(series, 0.4).values - want)) <= 2.0 / M


def test_ergodic_s_identity_series():
    series = MapSeries.from_maps([UnitMap.identity(M)] * 5)
    for a in (-0.5, 0.0, 0.7):
        assert np.allclose(ergodic_s(series, a).values, grid(M), atol=1e-12)


def test_short_series_rejected():
    with pytest.raises(InputError):
        ergodic_s(MapSeries.from_maps([UnitMap.identity(M)]), 0.3)


def test_objective_matches_reference(noisy):
    short = MapSeries(noisy.values[:15])
    for a in (-0.7, -0.2, 0.0, 0.35, 0.9):
        s_ref, m_ref = _reference_objective(short, a)
        assert objective(short, a) == pytest.approx(m_ref, rel=2e-2, abs=1e-6)
        assert np.max(np.abs(ergodic_s(short, a).values - s_ref.values)) <= 3.0 / M


def test_noiseless_recovery(noiseless):
    s_true = zeta_map(-2, 1000)
    assert np.max(np.abs(ergodic_s(noiseless, 0.5).values - s_true.values)) <= 3.0 / 1000
    assert objective(noiseless, 0.5) <= 1e-6


def test_constant_series_objective_zero(rng):
    c = random_map(rng, M)
    assert objective(MapSeries.from_maps([c] * 6), 0.0) <= 1e-30


def test_objective_continuous_at_zero(noisy):
    gaps = [abs(objective(noisy, e) - objective(noisy, -e)) for e in (1e-2, 1e-4, 1e-6)]
    assert gaps[2] < gaps[1] < gaps[0]
    assert gaps[2] < 1e-6


def test_derivative_matches_finite_differences(noisy_fine):
    h = 1e-4
    rng = np.random.default_rng(8)
    alphas = rng.uniform(0.05, 0.9, 10) * rng.choice([-1, 1], 10)
    for a in alphas:
        fd = (objective(noisy_fine, a + h) - objective(noisy_fine, a - h)) / (2 * h)
        an = objective_derivative(noisy_fine, a)
        assert an == pytest.approx(fd, rel=1e-3)


def test_derivative_at_zero_raises(noisy):
    with pytest.raises(NotDifferentiableError):
        objective_derivative(noisy, 0.0)


def test_noiseless_derivative_and_sign(noiseless):
    assert abs(objective_derivative(noiseless, 0.5)) <= 1e-4
    assert objective_derivative(noiseless, 0.45) < 0
    assert objective_derivative(noiseless, 0.55) > 0


def test_fit_noiseless(noiseless):
    res = fit(noiseless)
    assert abs(res.alpha_hat - 0.5) <= 1e-3
    assert lp_distance(res.s_hat, zeta_map(-2, 1000), 2) <= 5.0 / 1000
    assert res.system is SystemKind.PERTURB_THEN_MAP
    assert res.n_used == len(noiseless) - 1
    values = [v for _, v in res.objective_profile]
    assert res.objective_at_opt <= min(values)
    alphas = [a for a, _ in res.objective_profile]
    assert -1.0 in alphas and 1.0 in alphas


def test_noiseless_profile_single_local_minimum(noiseless):
    res = fit(noiseless)
    scan = [(a, v) for a, v in res.objective_profile if abs(round(a * 100) - a * 100) < 1e-9
            and -0.999 < a < 0.999]
    v = np.array([x for _, x in scan])
    interior = (v[1:-1] < v[:-2]) & (v[1:-1] < v[2:])
    assert interior.sum() == 1


def test_fit_is_deterministic(noisy):
    a, b = fit(noisy), fit(noisy)
    assert a.alpha_hat == b.alpha_hat and a.s_hat == b.s_hat


def test_fit_constant_series_flat(rng):
    c = random_map(rng, M)
    res = fit(MapSeries.from_maps([c] * 5))
    assert res.alpha_hat == 0.0 and "flat-objective" in res.flags
    assert np.allclose(res.s_hat.values, c.values, atol=1e-8)


def test_fit_independent_noise_near_zero():
    p = ModelParams(0.0, zeta_map(-4, M))
    hats = [fit(simulate_chain(p, ChainConfig(201, 0, seed=100, stream=(r,)), NoiseSpec()),
                FitConfig(alpha_grid_step=0.02)).alpha_hat for r in range(8)]
    assert np.median(np.abs(hats)) <= 0.1


def test_fit_respects_bounds(noisy):
    res = fit(noisy, FitConfig(alpha_bounds=(0.5, 0.9), include_endpoints=False))
    assert 0.5 <= res.alpha_hat <= 0.9


# -- contract-about -------------------------------------------------------------

def test_fit_alt_noiseless():
    s = zeta_map(-2, M)
    series = simulate_chain(ModelParams(0.4, s, SystemKind.CONTRACT_ABOUT),
                            ChainConfig(1000, 0), NoiseSpec.none())
    res = fit_alt(series)
    assert abs(res.alpha_hat - 0.4) <= 1e-3
    assert lp_distance(res.s_hat, s, 2) <= 5.0 / M
    assert res.system is SystemKind.CONTRACT_ABOUT
    assert all(-0.999 <= a <= 0.999 for a, _ in res.objective_profile)


def test_fit_alt_constant_series(rng):
    s = random_map(rng, M)
    res = fit_alt(MapSeries.from_maps([s] * 4))
    assert np.allclose(res.s_hat.values, s.values, rtol=0, atol=1e-15)
    assert res.alpha_hat == 0.0 and "flat-objective" in res.flags


def test_objective_alt_domain():
    series = MapSeries.from_maps([UnitMap.identity(M)] * 3)
    with pytest.raises(DomainError):
        objective_alt(series, 1.0)


def test_fit_alt_s_converges():
    s = zeta_map(-2, M)
    errs = []
    for n in (250, 4000):
        series = simulate_chain(ModelParams(0.3, s, SystemKind.CONTRACT_ABOUT),
                                ChainConfig(n + 100, 100, seed=3), NoiseSpec())
        errs.append(lp_distance(fit_alt(series, FitConfig(alpha_grid_step=0.05)).s_hat, s, 2))
    assert errs[1] < errs[0] / 2
