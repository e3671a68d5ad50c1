import json
import os

import numpy as np
import pytest

from markov_chain import stationary_measure
from montecarlo import SeedSpec
from verify_suite import (
    SUITES,
    RandomChain,
    make_case,
    model_capacity_check,
    perturbed,
    random_reversible_chain,
    run_case,
    verify_suite,
)

from helpers import complete_chain, path3


def test_random_chains_are_reversible():
    rng = np.random.default_rng(4)
    for path in (False, True):
        chain = random_reversible_chain(10, rng, path=path)
        nu = stationary_measure(chain)
        flux = nu.weights[:, None] * chain.rates
        np.testing.assert_allclose(flux, flux.T, rtol=1e-9, atol=1e-15)
        assert chain.is_path_graph() or not path


def test_every_third_case_is_a_path():
    assert make_case(SeedSpec(0, 2), 6).kind == "path"
    assert make_case(SeedSpec(0, 3), 6).kind == "graph"
    a = make_case(SeedSpec(1, 0), 6).chain.rates
    b = make_case(SeedSpec(1, 0), 6).chain.rates
    np.testing.assert_array_equal(a, b)


def test_suites_pass_on_random_chains():
    summary = verify_suite(0, sizes=(4, 6, 9), chains=6)
    assert summary.passed, [(o.suite, o.detail) for o in summary.failures]
    assert set(summary.by_suite()) == set(SUITES)
    assert len(summary.outcomes) == 6 * len(SUITES)
    assert summary.worst("capacity") <= 1e-9


def test_non_reversible_chain_fails_with_reproducer(tmp_path):
    chain = complete_chain([[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    case = RandomChain(chain, stationary_measure(chain), SeedSpec(0, 5), "graph")
    [outcome] = run_case(case, ["capacity"], out_dir=str(tmp_path))
    assert not outcome.passed
    assert outcome.detail.startswith("NotReversible")
    assert os.path.exists(outcome.reproducer)
    with open(outcome.reproducer) as f:
        record = json.load(f)
    assert record["suite"] == "capacity"
    assert record["replica"] == 5
    assert os.path.exists(os.path.join(str(tmp_path), record["chain_file"]))


def test_perturbed_complete_chain_fails():
    chain = complete_chain(np.ones((3, 3)) - np.eye(3))
    case = RandomChain(chain, stationary_measure(chain), SeedSpec(0, 0), "graph")
    assert all(o.passed for o in run_case(case, ["capacity", "hitting"]))
    broken = perturbed(case)
    assert not run_case(broken, ["capacity"])[0].passed


def test_model_capacity_check():
    chain = path3()
    assert model_capacity_check(chain, stationary_measure(chain), [1], [3]) == pytest.approx(
        0.0, abs=1e-12)
