#!/usr/bin/env python3
"""
Monte Carlo for chains split into wells
Simulation, projected well processes, Delta occupation and empirical rates
"""

import concurrent.futures
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Hashable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from errors import (
    InsufficientData,
    InvalidHorizon,
    StartOutsideWells,
    StateInTargetSet,
    ValidationError,
)
from gillespie_kernels import (
    HIT_TARGET,
    REACHED_HORIZON,
    jump_tables,
    run_events,
    run_projected,
    run_until_hit,
)
from markov_chain import Chain, ProbabilityMeasure, StateSpace
from meta_analysis import WellPartition
from paths import ProjectedPath, Trajectory, membership_mask, occupation_time

logger = logging.getLogger(__name__)

DRAW_BLOCK = 1 << 16
HITTING_BLOCK = 1 << 10
EVENT_BUFFER = 1 << 16
MAX_SEED = 2 ** 64
COUPLING_TOL = 1e-9
CI_LEVEL = 0.95


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeedSpec:
    """
    Substream of replica ``replica`` under ``base_seed``.

    SeedSequence(base_seed, spawn_key=(replica,)) is split into two children
    feeding Philox generators: one for holding-time exponentials, one for
    the uniforms choosing the next state. Distinct replica indices give
    independent streams.
    """

    base_seed: int
    replica: int = 0

    def __post_init__(self):
        if not 0 <= int(self.base_seed) < MAX_SEED:
            raise ValidationError(f"base seed must be a 64-bit unsigned integer, got {self.base_seed}")
        if int(self.replica) < 0:
            raise ValidationError(f"replica index must be nonnegative, got {self.replica}")

    def generators(self) -> Tuple[np.random.Generator, np.random.Generator]:
        root = np.random.SeedSequence(int(self.base_seed), spawn_key=(int(self.replica),))
        exp_seq, uni_seq = root.spawn(2)
        return (np.random.Generator(np.random.Philox(exp_seq)),
                np.random.Generator(np.random.Philox(uni_seq)))


def replica_seeds(base_seed: int, count: int) -> List[SeedSpec]:
    return [SeedSpec(base_seed, i) for i in range(count)]


class DrawStream:
    """Paired blocks of standard exponentials and uniforms consumed in order"""

    def __init__(self, seed: SeedSpec, block: int = DRAW_BLOCK):
        self.exp_rng, self.uni_rng = seed.generators()
        self.block = block
        self.exps = np.empty(0)
        self.unis = np.empty(0)
        self.pos = 0
        self.used = 0

    def window(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.pos >= self.exps.size:
            self.exps = self.exp_rng.standard_exponential(self.block)
            self.unis = self.uni_rng.random(self.block)
            self.pos = 0
        return self.exps[self.pos:], self.unis[self.pos:]

    def advance(self, count: int):
        self.pos += count
        self.used += count

    def next_exponential(self) -> float:
        exps, _ = self.window()
        value = float(exps[0])
        self.advance(1)
        return value


def _tables(chain: Chain, tables=None):
    return tables if tables is not None else jump_tables(chain.rates, chain.speedup)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def simulate(chain: Chain, start, seed: SeedSpec, horizon: Optional[float] = None,
             max_jumps: Optional[int] = None, tables=None) -> Trajectory:
    """
    Jump-chain / holding-time simulation.

    Runs up to ``horizon``, or for ``max_jumps`` jumps, whichever ends first.
    With only a jump budget the trajectory ends at the time of the next,
    unrecorded, jump.

    Args:
        chain: chain to simulate (speedup included)
        start: start state label
        seed: random substream
        horizon: end time
        max_jumps: jump budget
        tables: precomputed jump_tables of the chain

    Returns:
        Trajectory on chain.space
    """
    if horizon is None and max_jumps is None:
        raise InvalidHorizon("give a horizon, a jump budget or both")
    if horizon is not None and not (np.isfinite(horizon) and horizon > 0):
        raise InvalidHorizon(f"horizon must be positive and finite, got {horizon!r}")
    if max_jumps is not None and max_jumps < 1:
        raise InvalidHorizon(f"jump budget must be at least 1, got {max_jumps!r}")

    indptr, indices, cumprob, holding = _tables(chain, tables)
    start_idx = chain.space.index(start)
    limit = float(horizon) if horizon is not None else np.inf
    budget = int(max_jumps) if max_jumps is not None else np.iinfo(np.int64).max

    stream = DrawStream(seed)
    times, states = [], []
    out_t = np.empty(EVENT_BUFFER)
    out_s = np.empty(EVENT_BUFFER, dtype=np.int64)
    state, t, written = start_idx, 0.0, 0
    while True:
        exps, unis = stream.window()
        code, k, state, t, used = run_events(state, t, limit, budget - written,
                                             indptr, indices, cumprob, holding,
                                             exps, unis, out_t, out_s)
        stream.advance(used)
        times.append(out_t[:k].copy())
        states.append(out_s[:k].copy())
        written += k
        if code == REACHED_HORIZON:
            end = limit
            break
        if written >= budget:
            end = min(limit, t + stream.next_exponential() / holding[state])
            break

    logger.debug("simulated %d jumps up to t=%.6g", written, end)
    return Trajectory(chain.space, start_idx, np.concatenate(times),
                      np.concatenate(states), end)


@dataclass
class ProjectedRun:
    """Outcome of a streaming run: projected paths, Delta time, per-state occupation"""

    X: ProjectedPath
    X_hat: ProjectedPath
    delta_time: float
    horizon: float
    jumps: int
    occupation: np.ndarray

    @property
    def delta_fraction(self) -> float:
        return self.delta_time / self.horizon


def _start_well(partition: WellPartition, space: StateSpace, start) -> Tuple[np.ndarray, int]:
    well_of = partition.label_vector(space)
    w = int(well_of[space.index(start)])
    if w < 0:
        raise StartOutsideWells(f"start state {start!r} is not in any well")
    return well_of, w


def simulate_projected(chain: Chain, partition: WellPartition, start, horizon: float,
                       seed: SeedSpec, tables=None) -> ProjectedRun:
    """
    Same random stream as ``simulate`` but only well-label changes are kept,
    so horizons with many millions of jumps fit in memory.
    """
    if not (np.isfinite(horizon) and horizon > 0):
        raise InvalidHorizon(f"horizon must be positive and finite, got {horizon!r}")
    indptr, indices, cumprob, holding = _tables(chain, tables)
    well_of, current = _start_well(partition, chain.space, start)
    start_label = partition.labels[current]

    stream = DrawStream(seed)
    clock = np.zeros(1)
    occupation = np.zeros(chain.n)
    real, watched, labels = [], [], []
    out_real = np.empty(EVENT_BUFFER)
    out_watched = np.empty(EVENT_BUFFER)
    out_labels = np.empty(EVENT_BUFFER, dtype=np.int64)
    state, t, jumps = chain.space.index(start), 0.0, 0
    while True:
        exps, unis = stream.window()
        code, k, state, t, current, used, n = run_projected(
            state, t, float(horizon), current, well_of, indptr, indices, cumprob, holding,
            exps, unis, clock, occupation, out_real, out_watched, out_labels)
        stream.advance(used)
        jumps += n
        real.append(out_real[:k].copy())
        watched.append(out_watched[:k].copy())
        labels.append(out_labels[:k].copy())
        if code == REACHED_HORIZON:
            break

    names = [partition.labels[int(w)] for w in np.concatenate(labels)]
    well_time = float(clock[0])
    X = ProjectedPath("X", start_label, np.concatenate(watched), names, well_time)
    X_hat = ProjectedPath("X_hat", start_label, np.concatenate(real), names, float(horizon))
    logger.debug("projected run: %d jumps, %d well changes, Delta fraction %.3g",
                 jumps, len(names), 1.0 - well_time / horizon)
    return ProjectedRun(X, X_hat, max(0.0, float(horizon) - well_time), float(horizon),
                        jumps, occupation)


# ---------------------------------------------------------------------------
# Projection of stored trajectories
# ---------------------------------------------------------------------------

def project_paths(traj: Trajectory, partition: WellPartition) -> Dict[str, ProjectedPath]:
    """
    X: well label of the trajectory watched on the wells, on the watched clock.
    X_hat: last visited well on the original clock.
    Both share the same sequence of labels.
    """
    well_of, first = _start_well(partition, traj.space, traj.space.label(traj.start))
    left, durations, visited = traj.segments()
    wells = well_of[visited]
    inside = wells >= 0

    clock = np.concatenate(([0.0], np.cumsum(np.where(inside, durations, 0.0))))
    latest = np.maximum.accumulate(np.where(inside, np.arange(wells.size), 0))
    last_well = wells[latest]
    change = np.flatnonzero(last_well[1:] != last_well[:-1]) + 1
    change = change[left[change] < traj.horizon]

    names = [partition.labels[int(last_well[c])] for c in change]
    start_label = partition.labels[first]
    return {
        "X": ProjectedPath("X", start_label, clock[change], names, float(clock[-1])),
        "X_hat": ProjectedPath("X_hat", start_label, left[change], names, traj.horizon),
    }


def delta_occupation(traj: Trajectory, partition: WellPartition) -> float:
    """T^Delta at the horizon divided by the horizon"""
    if not partition.delta:
        return 0.0
    return occupation_time(traj, partition.delta) / traj.horizon


@dataclass
class CouplingReport:
    same_sequence: bool
    ordered: bool
    excess: float
    delta_time: float

    @property
    def holds(self) -> bool:
        return self.same_sequence and self.ordered and self.excess <= self.delta_time + COUPLING_TOL * max(1.0, self.delta_time)


def coupling_check(X: ProjectedPath, X_hat: ProjectedPath, delta_time: float,
                   tol: float = COUPLING_TOL) -> CouplingReport:
    """
    Pathwise comparison of the two projections: same labels, tau_n(X_hat) >=
    tau_n(X), and sum_n (T_n(X_hat) - T_n(X)) <= T^Delta.
    """
    same = X.visits() == X_hat.visits()
    if not same or X.n_jumps == 0:
        return CouplingReport(same, same, 0.0, float(delta_time))
    scale = max(1.0, X_hat.horizon)
    ordered = bool(np.all(X_hat.jump_times >= X.jump_times - tol * scale))
    # The sojourn differences telescope to the gap between the last jump times
    excess = float(X_hat.jump_times[-1] - X.jump_times[-1])
    return CouplingReport(True, ordered, excess, float(delta_time))


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

@dataclass
class EmpiricalRates:
    """Jump counts over time spent, per ordered pair of labels"""

    labels: Tuple[Hashable, ...]
    counts: np.ndarray
    time_in: np.ndarray
    rates: np.ndarray
    stderr: np.ndarray
    missing: List[Hashable] = field(default_factory=list)

    def __getitem__(self, pair) -> float:
        x, y = pair
        return float(self.rates[self.labels.index(x), self.labels.index(y)])

    def se(self, x, y) -> float:
        return float(self.stderr[self.labels.index(x), self.labels.index(y)])

    @property
    def total_jumps(self) -> int:
        return int(self.counts.sum())

    def z_scores(self, reference: np.ndarray) -> np.ndarray:
        """|r_hat - reference| / stderr off the diagonal (nan where undefined)"""
        reference = np.asarray(reference, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.abs(self.rates - reference) / self.stderr
        np.fill_diagonal(z, np.nan)
        return z

    def within(self, reference, sigmas: float = 3.0) -> bool:
        z = self.z_scores(reference)
        off = ~np.eye(len(self.labels), dtype=bool)
        return bool(np.all(z[off] <= sigmas))


def empirical_rates(paths: Sequence[ProjectedPath], labels: Optional[Sequence] = None,
                    strict: bool = False) -> EmpiricalRates:
    """
    r_hat(x, y) = #jumps x->y / time in x with Poisson errors sqrt(#)/time,
    pooled over all paths. Wells never visited are listed in ``missing`` (and
    raise InsufficientData when ``strict``).
    """
    if not paths:
        raise ValidationError("no paths given")
    if labels is None:
        seen = []
        for path in paths:
            for v in path.visits():
                if v not in seen:
                    seen.append(v)
        labels = seen
    labels = tuple(labels)
    position = {x: i for i, x in enumerate(labels)}
    k = len(labels)
    counts = np.zeros((k, k), dtype=np.int64)
    time_in = np.zeros(k)
    for path in paths:
        for x, y, _ in path.transitions():
            counts[position[x], position[y]] += 1
        for x, dt in path.time_in().items():
            time_in[position[x]] += dt

    missing = [labels[i] for i in range(k) if not time_in[i] > 0]
    if missing:
        if strict:
            raise InsufficientData(f"no time spent in wells {missing}", wells=missing)
        logger.warning("wells never visited: %s", missing)
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.where(time_in[:, None] > 0, counts / time_in[:, None], np.nan)
        stderr = np.where(time_in[:, None] > 0, np.sqrt(counts) / time_in[:, None], np.nan)
    np.fill_diagonal(rates, 0.0)
    np.fill_diagonal(stderr, 0.0)
    return EmpiricalRates(labels, counts, time_in, rates, stderr, missing)


@dataclass
class MeanEstimate:
    mean: float
    stderr: float
    low: float
    high: float
    samples: int

    def covers(self, value: float) -> bool:
        return self.low <= value <= self.high


def mean_with_ci(values, level: float = CI_LEVEL) -> MeanEstimate:
    """Sample mean with a normal-approximation confidence interval"""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValidationError("at least two samples are needed for an interval")
    se = float(v.std(ddof=1) / np.sqrt(v.size))
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    m = float(v.mean())
    return MeanEstimate(m, se, m - z * se, m + z * se, int(v.size))


def hitting_time_sample(chain: Chain, start, target: Iterable, seed: SeedSpec,
                        tables=None) -> float:
    """One draw of H_target started from ``start``"""
    indptr, indices, cumprob, holding = _tables(chain, tables)
    mask = membership_mask(chain.space, target)
    state = chain.space.index(start)
    if mask[state]:
        raise StateInTargetSet(f"{start!r} already lies in the target set")
    stream = DrawStream(seed, HITTING_BLOCK)
    t = 0.0
    while True:
        exps, unis = stream.window()
        code, state, t, used = run_until_hit(state, t, mask, indptr, indices, cumprob,
                                             holding, exps, unis)
        stream.advance(used)
        if code == HIT_TARGET:
            return float(t)


def hitting_samples(chain: Chain, start, target: Iterable, replicas: int, base_seed: int,
                    max_workers: Optional[int] = None, level: float = CI_LEVEL) -> MeanEstimate:
    """Empirical E_start[H_target] over independent replicas with a CI"""
    target = list(target)
    tables = _tables(chain)
    samples = run_replicas(
        lambda seed: hitting_time_sample(chain, start, target, seed, tables),
        replica_seeds(base_seed, replicas), max_workers)
    return mean_with_ci(samples, level)


@dataclass
class OccupationEstimate:
    space: StateSpace
    fractions: np.ndarray
    stderr: np.ndarray

    def z_scores(self, nu: ProbabilityMeasure) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(self.fractions - nu.weights) / self.stderr


def occupation_frequencies(traj: Trajectory, batches: int = 20) -> OccupationEstimate:
    """Per-state occupation fractions with batch-means standard errors"""
    if batches < 2:
        raise ValidationError("batch means need at least two batches")
    n = len(traj.space)
    left, durations, visited = traj.segments()
    right = left + durations
    edges = np.linspace(0.0, traj.horizon, batches + 1)
    per_batch = np.zeros((batches, n))
    for b in range(batches):
        lo, hi = edges[b], edges[b + 1]
        overlap = np.clip(np.minimum(right, hi) - np.maximum(left, lo), 0.0, None)
        per_batch[b] = np.bincount(visited, weights=overlap, minlength=n) / (hi - lo)
    fractions = np.bincount(visited, weights=durations, minlength=n) / traj.horizon
    stderr = per_batch.std(axis=0, ddof=1) / np.sqrt(batches)
    return OccupationEstimate(traj.space, fractions, stderr)


def occupation_from_runs(space: StateSpace, runs: Sequence[ProjectedRun]) -> OccupationEstimate:
    """Replica-averaged occupation fractions; replicas play the role of batches"""
    if len(runs) < 2:
        raise ValidationError("at least two runs are needed")
    per_run = np.array([run.occupation / run.horizon for run in runs])
    return OccupationEstimate(space, per_run.mean(axis=0),
                              per_run.std(axis=0, ddof=1) / np.sqrt(len(runs)))


def sample_states(nu: ProbabilityMeasure, count: int, seed: SeedSpec) -> List[Hashable]:
    """Draw start states from nu"""
    rng, _ = seed.generators()
    idx = rng.choice(len(nu.space), size=count, p=nu.weights)
    return [nu.space.label(int(i)) for i in idx]


# ---------------------------------------------------------------------------
# Replicas
# ---------------------------------------------------------------------------

def run_replicas(fn: Callable[[SeedSpec], object], seeds: Sequence[SeedSpec],
                 max_workers: Optional[int] = None) -> list:
    """
    Call fn(seed) for every seed in a thread pool. The kernels release the
    GIL, so replicas overlap. Results come back in the order of ``seeds``.
    """
    seeds = list(seeds)
    if max_workers == 1 or len(seeds) <= 1:
        return [fn(seed) for seed in seeds]

    results = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as executor:
        future_to_index = {executor.submit(fn, seed): i for i, seed in enumerate(seeds)}
        for future in concurrent.futures.as_completed(future_to_index):
            results[future_to_index[future]] = future.result()
    return [results[i] for i in range(len(seeds))]
