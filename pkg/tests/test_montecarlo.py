import numpy as np
import pytest

from errors import (
    InsufficientData,
    InvalidHorizon,
    StartOutsideWells,
    StateInTargetSet,
    ValidationError,
)
from markov_chain import build_chain, stationary_measure
from meta_analysis import inter_well_rates, make_partition
from montecarlo import (
    DrawStream,
    SeedSpec,
    coupling_check,
    delta_occupation,
    empirical_rates,
    hitting_samples,
    hitting_time_sample,
    mean_with_ci,
    occupation_frequencies,
    occupation_from_runs,
    project_paths,
    replica_seeds,
    run_replicas,
    sample_states,
    simulate,
    simulate_projected,
)
from particle_models import ZeroRangeSpec, build_model
from potential import mean_hitting_time
from paths import ProjectedPath, Trajectory

from helpers import path3, random_chain, two_state


def test_seed_validation():
    with pytest.raises(ValidationError):
        SeedSpec(-1)
    with pytest.raises(ValidationError):
        SeedSpec(2 ** 64)
    with pytest.raises(ValidationError):
        SeedSpec(0, -1)
    SeedSpec(2 ** 64 - 1)


def test_streams_do_not_depend_on_block_size():
    small = DrawStream(SeedSpec(11, 3), block=8)
    large = DrawStream(SeedSpec(11, 3), block=64)
    a = [small.next_exponential() for _ in range(20)]
    b = [large.next_exponential() for _ in range(20)]
    assert a == b


def test_simulation_is_reproducible():
    chain = random_chain(6, 3)
    a = simulate(chain, 0, SeedSpec(7, 0), horizon=50.0)
    b = simulate(chain, 0, SeedSpec(7, 0), horizon=50.0)
    c = simulate(chain, 0, SeedSpec(7, 1), horizon=50.0)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.states, b.states)
    assert a.n_jumps != c.n_jumps or not np.array_equal(a.times, c.times)


def test_horizon_run_is_a_prefix_of_budget_run():
    chain = random_chain(5, 8)
    by_time = simulate(chain, 2, SeedSpec(1, 0), horizon=20.0)
    by_jumps = simulate(chain, 2, SeedSpec(1, 0), max_jumps=by_time.n_jumps + 50)
    k = by_time.n_jumps
    np.testing.assert_array_equal(by_jumps.times[:k], by_time.times)
    np.testing.assert_array_equal(by_jumps.states[:k], by_time.states)
    assert by_jumps.times[k] >= 20.0


def test_budget_only_run_ends_at_the_next_jump():
    traj = simulate(path3(), 1, SeedSpec(5, 0), max_jumps=10)
    assert traj.n_jumps == 10
    assert traj.horizon > traj.times[-1]


def test_simulation_argument_errors():
    chain = two_state()
    with pytest.raises(InvalidHorizon):
        simulate(chain, 1, SeedSpec(0))
    with pytest.raises(InvalidHorizon):
        simulate(chain, 1, SeedSpec(0), horizon=0.0)
    with pytest.raises(InvalidHorizon):
        simulate(chain, 1, SeedSpec(0), horizon=np.inf)
    with pytest.raises(InvalidHorizon):
        simulate(chain, 1, SeedSpec(0), max_jumps=0)


def test_two_state_occupation_matches_stationary_measure():
    chain = two_state(1.0, 2.0)
    traj = simulate(chain, 1, SeedSpec(2024, 0), horizon=2000.0)
    estimate = occupation_frequencies(traj)
    np.testing.assert_allclose(estimate.fractions, [2 / 3, 1 / 3], atol=0.05)
    assert estimate.fractions.sum() == pytest.approx(1.0)
    assert np.all(estimate.z_scores(stationary_measure(chain)) < 6.0)


def test_occupation_needs_batches():
    traj = simulate(two_state(), 1, SeedSpec(0), horizon=1.0)
    with pytest.raises(ValidationError):
        occupation_frequencies(traj, batches=1)


def path_partition():
    return make_partition(path3().space, {"A": [1], "B": [3]})


def test_projection_by_hand():
    traj = Trajectory.from_events(1, [(1.0, 2), (1.5, 3)], 3.0, space=path3().space)
    paths = project_paths(traj, path_partition())
    X, X_hat = paths["X"], paths["X_hat"]
    assert X.visits() == X_hat.visits() == ["A", "B"]
    np.testing.assert_allclose(X.jump_times, [1.0])
    np.testing.assert_allclose(X_hat.jump_times, [1.5])
    assert X.horizon == pytest.approx(2.5)
    assert delta_occupation(traj, path_partition()) == pytest.approx(0.5 / 3.0)

    report = coupling_check(X, X_hat, 0.5)
    assert report.holds
    assert report.excess == pytest.approx(0.5)


def test_excursion_back_to_the_same_well_is_not_a_jump():
    traj = Trajectory.from_events(1, [(1.0, 2), (1.2, 1)], 2.0, space=path3().space)
    paths = project_paths(traj, path_partition())
    assert paths["X"].n_jumps == 0
    assert paths["X"].horizon == pytest.approx(1.8)


def test_projection_needs_a_start_in_a_well():
    traj = Trajectory.from_events(2, [(1.0, 1)], 2.0, space=path3().space)
    with pytest.raises(StartOutsideWells):
        project_paths(traj, path_partition())
    with pytest.raises(StartOutsideWells):
        simulate_projected(path3(), path_partition(), 2, 5.0, SeedSpec(0))


def test_coupling_detects_different_sequences():
    X = ProjectedPath("X", "A", [1.0], ["B"], 3.0)
    X_hat = ProjectedPath("X_hat", "A", [1.0, 2.0], ["B", "A"], 3.0)
    assert not coupling_check(X, X_hat, 1.0).holds
    late = ProjectedPath("X_hat", "A", [2.5], ["B"], 3.0)
    assert not coupling_check(X, late, 1.0).holds


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_streaming_projection_matches_stored_trajectory(seed):
    chain = random_chain(7, 40 + seed)
    partition = make_partition(chain.space, {0: [0, 1], 1: [4, 5]})
    spec = SeedSpec(99, seed)
    traj = simulate(chain, 0, spec, horizon=200.0)
    run = simulate_projected(chain, partition, 0, 200.0, spec)
    stored = project_paths(traj, partition)

    assert run.jumps == traj.n_jumps
    assert run.X.visits() == stored["X"].visits()
    np.testing.assert_array_equal(run.X_hat.jump_times, stored["X_hat"].jump_times)
    np.testing.assert_allclose(run.X.jump_times, stored["X"].jump_times, rtol=1e-9, atol=1e-9)
    assert run.delta_fraction == pytest.approx(delta_occupation(traj, partition), abs=1e-9)
    np.testing.assert_allclose(run.occupation / run.horizon,
                               occupation_frequencies(traj).fractions, atol=1e-9)
    assert coupling_check(run.X, run.X_hat, run.delta_time).holds


def test_hitting_times_by_simulation():
    estimate = hitting_samples(path3(), 1, [3], replicas=400, base_seed=3, max_workers=4)
    assert estimate.samples == 400
    assert abs(estimate.mean - 3.0) < 5 * estimate.stderr
    with pytest.raises(StateInTargetSet):
        hitting_time_sample(path3(), 3, [3], SeedSpec(0))


def test_empirical_rates_by_hand():
    path = ProjectedPath("X", "a", [1.0, 3.0], ["b", "a"], 4.0)
    rates = empirical_rates([path])
    assert rates.labels == ("a", "b")
    assert rates[("a", "b")] == pytest.approx(0.5)
    assert rates.se("b", "a") == pytest.approx(0.5)
    assert rates.total_jumps == 2
    assert rates.within([[0.0, 0.5], [0.5, 0.0]])

    padded = empirical_rates([path], labels=("a", "b", "c"))
    assert padded.missing == ["c"]
    with pytest.raises(InsufficientData):
        empirical_rates([path], labels=("a", "b", "c"), strict=True)
    with pytest.raises(ValidationError):
        empirical_rates([])


def test_two_state_empirical_rates():
    chain = two_state(1.0, 2.0)
    partition = make_partition(chain.space, {1: [1], 2: [2]})
    run = simulate_projected(chain, partition, 1, 2000.0, SeedSpec(17, 0))
    assert run.delta_time == pytest.approx(0.0, abs=1e-9)
    rates = empirical_rates([run.X], labels=(1, 2))
    assert rates.within([[0.0, 1.0], [2.0, 0.0]], sigmas=5.0)


def test_mean_with_ci():
    estimate = mean_with_ci([1.0, 2.0, 3.0, 4.0])
    assert estimate.mean == 2.5
    assert estimate.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert estimate.covers(2.5)
    assert estimate.high - estimate.mean == pytest.approx(1.959963984540054 * estimate.stderr)
    with pytest.raises(ValidationError):
        mean_with_ci([1.0])


def test_sample_states_follow_the_measure():
    chain = two_state(1.0, 3.0)
    nu = stationary_measure(chain)
    draws = sample_states(nu, 4000, SeedSpec(5))
    assert draws == sample_states(nu, 4000, SeedSpec(5))
    assert draws.count(1) / 4000 == pytest.approx(0.75, abs=0.04)


def test_replicas_come_back_in_order():
    seeds = replica_seeds(9, 12)
    assert run_replicas(lambda s: s.replica, seeds, max_workers=4) == list(range(12))
    assert run_replicas(lambda s: s.replica, seeds, max_workers=1) == list(range(12))


def test_occupation_from_runs():
    chain = two_state()
    partition = make_partition(chain.space, {1: [1], 2: [2]})
    runs = [simulate_projected(chain, partition, 1, 50.0, seed)
            for seed in replica_seeds(4, 5)]
    estimate = occupation_from_runs(chain.space, runs)
    assert estimate.fractions.sum() == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        occupation_from_runs(chain.space, runs[:1])


def _delta_fractions(N, ell, replicas, horizon):
    model = build_model(ZeroRangeSpec(2, 2.0, N, ell=ell))
    anchors = [model.geometry.anchors[x] for x in model.partition.labels]
    fractions = [
        simulate_projected(model.chain, model.partition, anchors[i % 2], horizon,
                           SeedSpec(31, i)).delta_fraction
        for i in range(replicas)
    ]
    return mean_with_ci(fractions)


@pytest.mark.slow
def test_delta_occupation_shrinks_with_N():
    small = _delta_fractions(8, 1, 20, 20.0)
    large = _delta_fractions(24, 4, 20, 20.0)
    assert large.mean <= 0.5 * small.mean
    assert large.high < small.low


def _replica_rate(paths, pair):
    return mean_with_ci([empirical_rates([p], labels=(1, 2))[pair] for p in paths])


@pytest.mark.slow
def test_sped_up_zero_range_rates_by_simulation():
    model = build_model(ZeroRangeSpec(2, 2.0, 16, ell=2))
    exact = inter_well_rates(*model.triple())
    runs = run_replicas(
        lambda seed: simulate_projected(model.chain, model.partition, (16, 0), 200.0, seed),
        replica_seeds(5, 20), max_workers=4)
    for pair in [(1, 2), (2, 1)]:
        on_trace = _replica_rate([run.X for run in runs], pair)
        on_real_clock = _replica_rate([run.X_hat for run in runs], pair)
        assert abs(on_trace.mean - exact[pair]) <= 3 * on_trace.stderr
        assert abs(on_real_clock.mean - on_trace.mean) <= 3 * np.hypot(on_trace.stderr,
                                                                       on_real_clock.stderr)
    pooled = empirical_rates([run.X for run in runs], labels=(1, 2))
    assert pooled.within([[0.0, exact[(1, 2)]], [exact[(2, 1)], 0.0]], sigmas=4.0)
    assert all(coupling_check(run.X, run.X_hat, run.delta_time).holds for run in runs)


def _one_way_cycle(n):
    return build_chain(list(range(n)), [(i, (i + 1) % n, 1.0) for i in range(n)])


@pytest.mark.slow
def test_hitting_time_intervals_cover_the_mean():
    chain = _one_way_cycle(11)
    covered = sum(
        hitting_samples(chain, 0, [10], replicas=200, base_seed=seed, max_workers=4).covers(10.0)
        for seed in range(1000))
    assert covered >= 930


def test_zero_range_hitting_time_by_simulation():
    model = build_model(ZeroRangeSpec(2, 2.0, 10, ell=2))
    anchor = model.geometry.anchors[1]
    target = model.partition.wells[2]
    exact = mean_hitting_time(model.chain, anchor, target, model.nu)
    assert exact.deviation <= 1e-8
    estimate = hitting_samples(model.chain, anchor, target, replicas=400, base_seed=8,
                               max_workers=4)
    assert abs(estimate.mean - exact.value) <= 4 * estimate.stderr


@pytest.mark.slow
def test_zero_range_occupation_matches_the_measure():
    model = build_model(ZeroRangeSpec(2, 2.0, 8, ell=1))
    traj = simulate(model.chain, model.geometry.anchors[1], SeedSpec(21), horizon=400.0)
    estimate = occupation_frequencies(traj, batches=20)
    assert np.nanmax(estimate.z_scores(model.nu)) <= 5.0
    assert 0.5 * np.abs(estimate.fractions - model.nu.weights).sum() <= 0.1
