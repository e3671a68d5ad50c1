import math

import numpy as np
import pytest

from errors import (
    HVanishesOffZeros,
    KappaNotTwo,
    OverlappingNeighborhoods,
    SpecInvalid,
    StateSpaceTooLarge,
)
from markov_chain import generator_matrix, stationary_measure
from meta_analysis import inter_well_rates
from particle_models import (
    BirthDeathSpec,
    ZeroRangeSpec,
    bd_build,
    bd_grid,
    bd_limit_rates,
    bd_limits,
    build_model,
    compositions,
    default_beta,
    double_well_spec,
    jump_rate,
    two_site_lambda,
    well_radius,
    zeta_series,
    zr_build,
    zr_limits,
    zr_measure,
    zr_theta,
    zr_two_site_map,
)
from potential import bd_capacity_closed_form, capacity

ZETA_2 = math.pi ** 2 / 6


def test_small_zero_range_measure():
    nu, Z = zr_measure(2, 2, 2.0)
    assert nu.space.labels == ((2, 0), (1, 1), (0, 2))
    np.testing.assert_allclose(nu.weights, [1 / 6, 2 / 3, 1 / 6], rtol=1e-12)
    assert Z == pytest.approx(6.0)


def test_jump_rates_telescope():
    assert math.prod(jump_rate(n, 3.0) for n in range(1, 6)) == pytest.approx(125.0)
    assert jump_rate(1, 2.5) == 1.0


def test_compositions_are_lexicographic():
    states = list(compositions(4, 3))
    assert len(states) == 15
    assert states[0] == (4, 0, 0)
    assert states[-1] == (0, 0, 4)
    assert states == sorted(states, reverse=True)


def test_radius_helpers():
    assert well_radius(32, 0.2) == 2
    assert well_radius(1024, 0.2) == 4
    assert default_beta(3.0, 2) == pytest.approx(0.2)
    assert ZeroRangeSpec(2, 2.0, 10, ell=3).radius == 3


def test_spec_validation():
    with pytest.raises(SpecInvalid):
        ZeroRangeSpec(1, 2.0, 10)
    with pytest.raises(SpecInvalid):
        ZeroRangeSpec(2, 1.0, 10)
    with pytest.raises(SpecInvalid):
        zr_build(ZeroRangeSpec(2, 2.0, 2, ell=1))
    with pytest.raises(StateSpaceTooLarge):
        zr_build(ZeroRangeSpec(3, 2.0, 40, ell=2), max_states=100)


def test_three_site_generator():
    model = zr_build(ZeroRangeSpec(3, 2.0, 4, ell=1))
    assert model.chain.n == 15
    np.testing.assert_allclose(generator_matrix(model.chain).sum(axis=1), 0.0, atol=1e-12)


def test_zero_range_measure_is_stationary():
    model = zr_build(ZeroRangeSpec(3, 2.5, 8, ell=1))
    direct = stationary_measure(model.chain)
    np.testing.assert_allclose(direct.weights, model.nu.weights, rtol=1e-10)


def test_zero_range_wells():
    model = zr_build(ZeroRangeSpec(3, 2.0, 9, ell=2))
    partition, nu = model.partition, model.nu
    masses = [nu.mass(partition.wells[x]) for x in partition.labels]
    assert sum(masses) + nu.mass(partition.delta) == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(masses, masses[0], rtol=1e-12)
    assert model.geometry.anchors[2] == (0, 9, 0)
    assert model.geometry.gates[2] == (3, 6, 0)
    assert all(s[0] >= 7 for s in partition.wells[1])


@pytest.mark.parametrize("alpha", [2.0, 3.0])
@pytest.mark.parametrize("kappa,N", [(2, 20), (2, 40), (2, 80), (3, 15), (3, 30)])
def test_theta_gives_uniform_limit_rates(kappa, N, alpha):
    model = build_model(ZeroRangeSpec(kappa, alpha, N))
    assert model.theta.spread <= 1e-10
    rates = inter_well_rates(*model.triple(), trace=model.trace)
    off = ~np.eye(kappa, dtype=bool)
    np.testing.assert_allclose(rates.matrix[off], kappa / (kappa - 1), rtol=1e-8)
    np.testing.assert_allclose(rates.matrix.sum(axis=1), kappa, rtol=1e-8)


def test_full_normalization_rescales_by_well_mass():
    spec = ZeroRangeSpec(2, 2.0, 10, ell=1)
    trace = zr_theta(zr_build(spec), "trace")
    full = zr_theta(zr_build(spec), "full")
    wells = trace.nu.mass(trace.partition.union())
    assert full.theta.theta == pytest.approx(trace.theta.theta / wells, rel=1e-12)
    assert full.theta.theta_full == pytest.approx(trace.theta.theta_full, rel=1e-12)
    with pytest.raises(SpecInvalid):
        zr_theta(zr_build(spec), "other")


def test_theta_and_Z_windows():
    ratios, Zs = [], []
    for N in (20, 40, 80):
        spec = ZeroRangeSpec(2, 2.5, N)
        model = build_model(spec)
        ratios.append(model.extras["theta_over_scale"])
        Zs.append(model.Z / zr_limits(spec).Z_limit)
    assert max(ratios) / min(ratios) <= 10.0
    assert all(0.5 < z < 2.0 for z in Zs)


def test_zeta_series():
    assert zeta_series(2.0) == pytest.approx(ZETA_2, rel=1e-10)
    assert zeta_series(3.0) == pytest.approx(1.2020569031595942, rel=1e-10)


def test_zero_range_limits():
    limits = zr_limits(ZeroRangeSpec(2, 2.0, 10))
    assert limits.well_mass == 0.5
    assert limits.Z_limit == pytest.approx(2 * (1 + ZETA_2), rel=1e-10)


def test_double_well_grid():
    np.testing.assert_allclose(bd_grid(double_well_spec(2.0, 10)), np.linspace(0.0, 1.0, 11),
                               atol=1e-12)


def test_grid_with_interior_zero():
    spec = BirthDeathSpec(N=4, zeros=(0.0, 1.0), exponents=(2.0, 2.0), interval=(0.0, 1.5),
                          H=lambda u: u ** 2 * (1 - u) ** 2)
    np.testing.assert_allclose(bd_grid(spec), np.arange(0, 7) / 4, atol=1e-12)


def test_birth_death_spec_validation():
    with pytest.raises(SpecInvalid):
        BirthDeathSpec(N=10, zeros=(0.0, 1.0), exponents=(2.0, 3.0), H=lambda u: 1.0)
    with pytest.raises(SpecInvalid):
        BirthDeathSpec(N=10, zeros=(1.0, 0.0), exponents=(2.0, 2.0), H=lambda u: 1.0)
    with pytest.raises(OverlappingNeighborhoods):
        BirthDeathSpec(N=10, zeros=(0.0, 1.0), exponents=(2.0, 2.0),
                       H_outside=lambda u: 1.0, neighborhood=0.6)


def test_potential_must_not_vanish_off_zeros():
    spec = BirthDeathSpec(N=10, zeros=(0.0, 1.0), exponents=(2.0, 2.0),
                          H=lambda u: u ** 2 * (1 - u) ** 2 * (u - 0.5) ** 2)
    with pytest.raises(HVanishesOffZeros):
        bd_build(spec)


def test_local_potential_builds():
    spec = BirthDeathSpec(N=20, zeros=(0.0, 1.0), exponents=(2.0, 2.0),
                          H_outside=lambda u: 0.01, neighborhood=0.2, ell=2)
    assert spec.potential(0.1) == pytest.approx(0.01)
    assert spec.potential(0.5) == 0.01
    model = bd_build(spec)
    assert model.partition.kappa == 2
    assert 0.0 < model.extras["nu_delta"] < 1.0


def test_birth_death_detailed_balance_and_closed_form():
    model = bd_build(double_well_spec(2.0, 40))
    chain, nu = model.chain, model.nu
    flux = nu.weights[:, None] * chain.rates
    np.testing.assert_allclose(flux, flux.T, rtol=1e-12, atol=0.0)
    x, y = chain.space.label(3), chain.space.label(30)
    assert bd_capacity_closed_form(chain, nu, x, y).value == pytest.approx(
        capacity(chain, nu, [x], [y]).value, rel=1e-10)


def test_double_well_anchor_mass():
    spec = double_well_spec(2.0, 200)
    model = bd_build(spec)
    limits = bd_limits(spec)
    for k in (1, 2):
        assert model.extras[f"nu_b{k}"] * limits.m_total == pytest.approx(1.0, rel=0.05)
    assert model.extras["nu_b1"] == pytest.approx(model.extras["nu_b2"], rel=1e-10)


def test_normalizing_constant_trend():
    spec = double_well_spec(2.0, 25)
    values = [bd_build(double_well_spec(2.0, N)).extras["Z_over_scale"] for N in (25, 50, 100)]
    assert values[0] > values[1] > values[2] > bd_limits(spec).m_total


def test_delta_mass_shrinks_as_wells_grow():
    masses = [bd_build(double_well_spec(2.0, N, ell=ell)).extras["nu_delta"]
              for N, ell in ((25, 2), (50, 4), (100, 8))]
    assert masses[0] > masses[1] > masses[2]


def test_double_well_limit_rates():
    limit = bd_limit_rates(double_well_spec(2.0, 50))
    expected = 30.0 / (1.0 + ZETA_2)
    assert limit.rates[0, 1] == pytest.approx(expected, rel=1e-8)
    assert limit.rates[1, 0] == pytest.approx(expected, rel=1e-8)


def test_interior_well_leaves_more_slowly():
    spec = BirthDeathSpec(N=20, zeros=(0.0, 1.0), exponents=(2.0, 2.0), interval=(0.0, 1.5),
                          H=lambda u: u ** 2 * (1 - u) ** 2)
    limits = bd_limits(spec)
    assert limits.m[2] > limits.m[1]
    rates = bd_limit_rates(spec).rates
    assert rates[1, 0] < rates[0, 1]


def test_finite_rates_approach_the_limit():
    spec = double_well_spec(2.0, 200, ell=20)
    model = bd_build(spec)
    rates = inter_well_rates(*model.triple())
    limit = bd_limit_rates(spec)
    assert rates[(1, 2)] == pytest.approx(limit.rates[0, 1], rel=0.1)
    assert rates[(2, 1)] == pytest.approx(limit.rates[1, 0], rel=0.1)


def test_two_site_map():
    result = zr_two_site_map(ZeroRangeSpec(2, 2.0, 6))
    assert result.max_deviation <= 1e-12
    assert result.r_theta == pytest.approx(2.0, rel=1e-9)
    assert result.r_theta / result.r_scaled == pytest.approx(result.theta_over_scale, rel=1e-9)
    assert result.limit_rate == pytest.approx(30.0 / (1.0 + ZETA_2), rel=1e-8)


def test_two_site_lambda_tends_to_one():
    values = [two_site_lambda(N, 2.0)(0.5) for N in (10, 100, 1000)]
    assert values[0] > values[1] > values[2] > 1.0
    assert two_site_lambda(10, 2.0)(0.1) == 1.0


def test_two_site_map_needs_two_sites():
    with pytest.raises(KappaNotTwo):
        zr_two_site_map(ZeroRangeSpec(3, 2.0, 6))


def test_build_model_dispatch():
    model = build_model(double_well_spec(2.0, 20))
    assert model.name == "bd"
    assert model.theta is None
    with pytest.raises(SpecInvalid):
        build_model(object())


def _double_well_error(N, ell):
    spec = double_well_spec(2.0, N, ell=ell)
    rates = inter_well_rates(*bd_build(spec).triple())
    limit = bd_limit_rates(spec).rates[0, 1]
    return abs(rates[(1, 2)] - limit) / limit


def test_double_well_rates_within_ten_percent_at_large_N():
    grid = (250, 500, 1000, 2000)
    ells = [well_radius(N, 0.2) for N in grid]
    assert ells == [4, 4, 4, 5]
    errors = [_double_well_error(N, ell) for N, ell in zip(grid, ells)]
    assert all(e < 0.1 for e in errors)
    assert errors[-1] == min(errors)


def test_double_well_error_grows_slowly_at_fixed_radius():
    errors = [_double_well_error(N, 4) for N in (250, 500, 1000, 2000)]
    assert errors[0] < errors[1] < errors[2] < errors[3] < 0.1
