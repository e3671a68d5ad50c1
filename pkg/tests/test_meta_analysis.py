import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from errors import GridTooSmall, NegativeRate, PartitionInvalid
from markov_chain import build_chain, stationary_measure, with_speedup
from meta_analysis import (
    InterWellRates,
    analyze,
    build_geometry,
    cauchy_diagnostic,
    check_C1,
    check_C2,
    check_C3,
    check_H2_H3,
    conditional_expectation,
    delta_time_expectation,
    inter_well_rates,
    limit_chain,
    make_partition,
    replacement_bound,
    report_rows,
    sigma,
)

from helpers import path3, random_chain, ring, two_state


def path_with_end_wells(chain=None):
    chain = chain or path3()
    nu = stationary_measure(chain)
    partition = make_partition(chain.space, {"a": [1], "b": [3]})
    return chain, nu, partition, build_geometry(chain, nu, partition)


def line(n, speedup=1.0):
    entries = []
    for i in range(n - 1):
        entries += [(i, i + 1, 1.0), (i + 1, i, 1.0)]
    return build_chain(list(range(n)), entries, speedup=speedup)


def test_partition_basics():
    partition = make_partition(path3().space, {"a": [1], "b": [3]})
    assert partition.kappa == 2
    assert partition.delta == (2,)
    assert partition.psi(3) == "b"
    assert partition.psi(2) is None
    assert partition.complement("a") == [3]
    np.testing.assert_array_equal(partition.label_vector(path3().space), [0, -1, 1])


@pytest.mark.parametrize("wells", [
    {"a": [1]},
    {"a": [1], "b": []},
    {"a": [1, 2], "b": [2, 3]},
    {"a": [1], "b": [7]},
])
def test_partition_errors(wells):
    with pytest.raises(PartitionInvalid):
        make_partition(path3().space, wells)


def test_geometry_on_path():
    _, _, _, geometry = path_with_end_wells()
    assert geometry.anchors == {"a": 1, "b": 3}
    assert geometry.gates == {"a": 2, "b": 2}
    assert geometry.boundary == {"a": (2,), "b": (2,)}
    assert geometry.crossing[("a", "b")] == (1,)
    assert geometry.closure("a") == [1, 2]


def test_geometry_rejects_foreign_anchor():
    chain = path3()
    nu = stationary_measure(chain)
    partition = make_partition(chain.space, {"a": [1], "b": [3]})
    with pytest.raises(PartitionInvalid):
        build_geometry(chain, nu, partition, anchors={"a": 3})


def test_path_rates_by_both_routes():
    chain, nu, partition, _ = path_with_end_wells()
    fast = inter_well_rates(chain, nu, partition)
    slow = inter_well_rates(chain, nu, partition, route="elimination")
    assert fast.route == "1d"
    assert slow.route == "elimination"
    assert fast[("a", "b")] == pytest.approx(0.5)
    np.testing.assert_allclose(fast.matrix, slow.matrix, rtol=1e-12)
    np.testing.assert_allclose(fast.well_mass, [1 / 3, 1 / 3])


def test_rates_carry_speedup():
    chain, nu, partition, _ = path_with_end_wells(with_speedup(path3(), 4.0))
    assert inter_well_rates(chain, nu, partition)[("b", "a")] == pytest.approx(2.0)


def test_one_dimensional_route_needs_a_path():
    chain = ring(4)
    nu = stationary_measure(chain)
    partition = make_partition(chain.space, {0: [0], 1: [2]})
    with pytest.raises(PartitionInvalid):
        inter_well_rates(chain, nu, partition, route="1d")
    assert inter_well_rates(chain, nu, partition).route == "elimination"


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_routes_agree_on_random_paths(seed):
    chain = random_chain(9, seed, path=True)
    nu = stationary_measure(chain)
    partition = make_partition(chain.space, {"L": [0, 1], "M": [4], "R": [7, 8]})
    fast = inter_well_rates(chain, nu, partition, route="1d")
    slow = inter_well_rates(chain, nu, partition, route="elimination")
    np.testing.assert_allclose(fast.matrix, slow.matrix, rtol=1e-9, atol=1e-15)
    assert fast[("L", "R")] == 0.0
    assert slow.balance_deviation <= 1e-8


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_aggregated_balance_on_random_chains(seed):
    chain = random_chain(8, seed)
    nu = stationary_measure(chain)
    partition = make_partition(chain.space, {1: [0, 1], 2: [2, 3], 3: [5]})
    rates = inter_well_rates(chain, nu, partition)
    assert rates.balance_deviation <= 1e-8
    assert np.all(np.diag(rates.matrix) == 0.0)


def test_conditions_on_path():
    chain, nu, partition, geometry = path_with_end_wells()
    assert check_C2(chain, nu, partition, geometry) == {("a", "b"): 0.0, ("b", "a"): 0.0}
    c3 = check_C3(chain, nu, partition, geometry)
    assert c3["a"] == pytest.approx(1.0)
    assert c3["b"] == pytest.approx(1.0)
    assert sigma(chain, nu, partition, geometry) == {"a": 0.0, "b": 0.0}


def test_hypotheses_on_path():
    chain, nu, partition, geometry = path_with_end_wells()
    report = check_H2_H3(chain, nu, partition, geometry)
    assert report.nu_delta == pytest.approx(1 / 3)
    assert report.gate_capacity["a"] == pytest.approx(1 / 3)
    assert report.h2["a"] == pytest.approx(1.0)
    assert report.h3[("a", "b")] == pytest.approx(1 / 9)


def test_h2_uses_the_analysed_chain():
    chain, nu, partition, geometry = path_with_end_wells(with_speedup(path3(), 10.0))
    report = check_H2_H3(chain, nu, partition, geometry)
    assert report.h2["b"] == pytest.approx(0.1)
    assert report.h2_unspeeded["b"] == pytest.approx(1.0)
    assert report.cap_unspeeded["b"] == pytest.approx(1 / 3)


def test_hypotheses_without_delta():
    chain = two_state()
    nu = stationary_measure(chain)
    partition = make_partition(chain.space, {1: [1], 2: [2]})
    geometry = build_geometry(chain, nu, partition)
    report = check_H2_H3(chain, nu, partition, geometry)
    assert report.nu_delta == 0.0
    assert report.h2 == {1: 0.0, 2: 0.0}
    assert geometry.gates == {1: None, 2: None}
    assert delta_time_expectation(chain, partition, 5.0) == 0.0


def test_conditional_expectation_and_replacement():
    chain, nu, partition, geometry = path_with_end_wells()
    np.testing.assert_allclose(conditional_expectation(nu, partition, [1.0, 5.0, 3.0]),
                               [1.0, 0.0, 3.0])
    bound = replacement_bound(chain, nu, partition, geometry, [1.0, 5.0, 3.0])
    assert bound == {"a": 0.0, "b": 0.0}


def test_conditional_expectation_averages_inside_wells():
    chain = line(5)
    nu = stationary_measure(chain)
    partition = make_partition(chain.space, {0: [0, 1], 1: [4]})
    V = conditional_expectation(nu, partition, [2.0, 4.0, 9.0, 9.0, 1.0])
    np.testing.assert_allclose(V, [3.0, 3.0, 0.0, 0.0, 1.0])


def test_delta_time_is_bounded_by_horizon():
    chain, _, partition, _ = path_with_end_wells()
    value = delta_time_expectation(chain, partition, 2.0)
    assert 0.0 < value < 2.0


def test_cauchy_diagnostic():
    labels = ("a", "b")
    seq = [1.0, 1.5, 1.51, 1.511]
    rates = [InterWellRates(labels, np.array([[0.0, v], [v, 0.0]]), np.array([0.5, 0.5]), "1d", 0.0)
             for v in seq]
    report = cauchy_diagnostic([10, 20, 40, 80], rates)
    assert report.plausibly_convergent[("a", "b")]
    assert report.max_change[("a", "b")] == pytest.approx(0.5)
    assert report.last_value[("a", "b")] == 1.511
    with pytest.raises(GridTooSmall):
        cauchy_diagnostic([10, 20], rates[:2])


def test_check_C1_on_lines():
    def build(n):
        chain = line(n, speedup=n - 1)
        return chain, stationary_measure(chain), make_partition(chain.space, {0: [0], 1: [n - 1]})

    report = check_C1(build, [5, 9, 17], max_workers=2)
    np.testing.assert_allclose(report.sequences[(0, 1)], [1.0, 1.0, 1.0], rtol=1e-12)
    assert report.plausibly_convergent[(0, 1)]

    def unscaled(n):
        chain = line(n)
        return chain, stationary_measure(chain), make_partition(chain.space, {0: [0], 1: [n - 1]})

    report = check_C1(unscaled, [5, 9, 17])
    np.testing.assert_allclose(report.sequences[(0, 1)], [1 / 4, 1 / 8, 1 / 16], rtol=1e-12)
    assert not report.plausibly_convergent[(0, 1)]


def test_limit_chain():
    limit = limit_chain([[0.0, 1.0], [2.0, 0.0]])
    assert limit.labels == (1, 2)
    np.testing.assert_allclose(limit.generator().sum(axis=1), 0.0)
    np.testing.assert_allclose(limit.apply([1.0, 0.0]), [-1.0, 2.0])
    assert limit.as_chain().rate(2, 1) == 2.0
    with pytest.raises(NegativeRate):
        limit_chain([[0.0, -1.0], [1.0, 0.0]])


def test_limit_chain_from_rates():
    chain, nu, partition, _ = path_with_end_wells()
    limit = limit_chain(inter_well_rates(chain, nu, partition))
    assert limit.labels == ("a", "b")


def test_analyze_and_rows():
    chain, nu, partition, geometry = path_with_end_wells()
    report = analyze(chain, nu, partition, geometry)
    assert report.reversible
    assert report.h2["a"] == pytest.approx(1.0)
    assert report.c2_bound[("a", "b")] == pytest.approx(3.0)
    rows = report_rows(report, 3)
    assert (3, "a->b", "r", report.rates[("a", "b")]) in rows
    assert {row[2] for row in rows} >= {"r", "C2", "C3", "h2", "h3", "sigma", "nu_delta"}


def test_zero_range_hypotheses_improve_with_N():
    from particle_models import ZeroRangeSpec, build_model

    reports = []
    for N in (20, 40, 80):
        model = build_model(ZeroRangeSpec(2, 3.0, N))
        reports.append(analyze(*model.triple(), model.geometry, trace=model.trace))

    for x in (1, 2):
        h2 = [r.h2[x] for r in reports]
        assert h2[0] > h2[1] > h2[2]
        c3 = [r.c3[x] for r in reports]
        assert c3[0] > c3[1] > c3[2]
    for pair in ((1, 2), (2, 1)):
        h3 = [r.h3[pair] for r in reports]
        assert h3[0] < h3[1] < h3[2]
        c2 = [r.c2[pair] for r in reports]
        assert c2[0] > c2[1] > c2[2]
