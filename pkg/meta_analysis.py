#!/usr/bin/env python3
"""
Metastability diagnostics for a chain split into wells
Inter-well rates, the finite-N values behind (C1)-(C3), (H2), (H3), and the
limit chain on the well labels
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Hashable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import GridTooSmall, MissingGateState, NegativeRate, PartitionInvalid
from markov_chain import (
    Chain,
    ProbabilityMeasure,
    StateSpace,
    chain_from_matrix,
    require_reversible,
    with_speedup,
)
from potential import (
    capacity,
    hitting_times,
    integrate_forward,
    path_conductance,
)
from watched_chain import TraceResult, trace_chain

logger = logging.getLogger(__name__)

CAUCHY_THRESHOLD = 0.05
BALANCE_TOL = 1e-8


# ---------------------------------------------------------------------------
# Wells
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WellPartition:
    """Wells E^x indexed by labels x in S, plus the remainder Delta"""

    labels: Tuple[Hashable, ...]
    wells: Dict[Hashable, Tuple[Hashable, ...]]
    delta: Tuple[Hashable, ...]

    @property
    def kappa(self) -> int:
        return len(self.labels)

    def union(self) -> List[Hashable]:
        """The set of all well states"""
        return [s for x in self.labels for s in self.wells[x]]

    def complement(self, x) -> List[Hashable]:
        """Union of the wells other than x"""
        return [s for y in self.labels if y != x for s in self.wells[y]]

    def psi(self, state):
        """Well label of a state, None inside Delta"""
        for x in self.labels:
            if state in self._lookup[x]:
                return x
        return None

    @property
    def _lookup(self) -> Dict[Hashable, frozenset]:
        cache = self.__dict__.get("_sets")
        if cache is None:
            cache = {x: frozenset(self.wells[x]) for x in self.labels}
            object.__setattr__(self, "_sets", cache)
        return cache

    def label_vector(self, space: StateSpace) -> np.ndarray:
        """Per-state well position in ``labels`` (-1 on Delta)"""
        out = np.full(len(space), -1, dtype=np.int64)
        for k, x in enumerate(self.labels):
            out[space.indices(self.wells[x])] = k
        return out


def make_partition(space: StateSpace, wells: Dict[Hashable, Iterable]) -> WellPartition:
    """
    Validate disjoint nonempty wells (at least two) inside the state space;
    Delta is whatever is left, in index order.
    """
    if len(wells) < 2:
        raise PartitionInvalid("at least two wells are required")
    seen = {}
    ordered = {}
    for x, states in wells.items():
        states = list(states)
        if not states:
            raise PartitionInvalid(f"well {x!r} is empty")
        for s in states:
            if s not in space:
                raise PartitionInvalid(f"well {x!r} contains unknown state {s!r}")
            if s in seen:
                raise PartitionInvalid(f"state {s!r} lies in wells {seen[s]!r} and {x!r}")
            seen[s] = x
        idx = space.indices(states)
        ordered[x] = tuple(space.label(int(i)) for i in idx)
    delta = tuple(s for s in space.labels if s not in seen)
    return WellPartition(tuple(wells.keys()), ordered, delta)


@dataclass
class WellGeometry:
    """Anchors, gates and the boundary sets around each well"""

    anchors: Dict[Hashable, Hashable]
    gates: Dict[Hashable, Optional[Hashable]]
    boundary: Dict[Hashable, Tuple[Hashable, ...]]
    crossing: Dict[Tuple[Hashable, Hashable], Tuple[Hashable, ...]]
    partition: WellPartition

    def closure(self, x) -> List[Hashable]:
        return list(self.partition.wells[x]) + list(self.boundary[x])

    def complement(self, x) -> List[Hashable]:
        return self.partition.complement(x)


def _trace_on_wells(chain: Chain, nu: ProbabilityMeasure, partition: WellPartition,
                    trace: Optional[TraceResult] = None) -> TraceResult:
    """Trace on the union of wells; a trace of the unspeeded chain is rescaled"""
    if trace is not None:
        if trace.chain.speedup != chain.speedup:
            trace = TraceResult(with_speedup(trace.chain, chain.speedup),
                                trace.elimination_order, trace.conditioned, trace.residual,
                                trace.fill_in, trace.dropped, trace.drop_threshold)
        return trace
    return trace_chain(chain, partition.union(), nu=nu)


def build_geometry(chain: Chain, nu: ProbabilityMeasure, partition: WellPartition,
                   anchors: Optional[Dict] = None, gates: Optional[Dict] = None,
                   trace: Optional[TraceResult] = None) -> WellGeometry:
    """
    Derive the boundary sets of every well.

    Args:
        anchors: xi^x per well; the nu-maximal state of E^x by default
        gates: zeta^x per well; the nu-maximal state of the outer boundary
            by default (None when the boundary is empty)
        trace: trace chain on the union of wells, if already built
    """
    space = chain.space
    anchors = dict(anchors or {})
    gates = dict(gates or {})
    in_delta = np.zeros(chain.n, dtype=bool)
    if partition.delta:
        in_delta[space.indices(partition.delta)] = True

    boundary = {}
    for x in partition.labels:
        idx = space.indices(partition.wells[x])
        reach = (chain.rates[idx] > 0).any(axis=0) & in_delta
        boundary[x] = tuple(space.label(int(i)) for i in np.flatnonzero(reach))

        if x not in anchors:
            anchors[x] = space.label(int(idx[np.argmax(nu.weights[idx])]))
        elif anchors[x] not in set(partition.wells[x]):
            raise PartitionInvalid(f"anchor {anchors[x]!r} is not in well {x!r}")

        if gates.get(x) is None:
            if boundary[x]:
                b_idx = space.indices(boundary[x])
                gates[x] = space.label(int(b_idx[np.argmax(nu.weights[b_idx])]))
            else:
                gates[x] = None
        elif gates[x] not in set(boundary[x]):
            raise PartitionInvalid(f"gate {gates[x]!r} is not on the boundary of well {x!r}")

    trace = _trace_on_wells(chain, nu, partition, trace)
    labels_on_trace = partition.label_vector(trace.space)
    crossing = {}
    for a, x in enumerate(partition.labels):
        rows = np.flatnonzero(labels_on_trace == a)
        for b, y in enumerate(partition.labels):
            if x == y:
                continue
            cols = np.flatnonzero(labels_on_trace == b)
            out = trace.chain.rates[np.ix_(rows, cols)].sum(axis=1) > 0
            crossing[(x, y)] = tuple(trace.space.label(int(i)) for i in rows[out])
    return WellGeometry(anchors, gates, boundary, crossing, partition)


# ---------------------------------------------------------------------------
# Inter-well rates
# ---------------------------------------------------------------------------

@dataclass
class InterWellRates:
    """r(x, y) on S x S (zero diagonal) with the well masses used"""

    labels: Tuple[Hashable, ...]
    matrix: np.ndarray
    well_mass: np.ndarray
    route: str
    balance_deviation: float

    def __getitem__(self, pair) -> float:
        x, y = pair
        return float(self.matrix[self.labels.index(x), self.labels.index(y)])

    def row_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=1)


def _interval_wells(chain: Chain, partition: WellPartition):
    """Wells as (first, last) index ranges sorted along the path, or None"""
    spans = []
    for x in partition.labels:
        idx = chain.space.indices(partition.wells[x])
        if idx[-1] - idx[0] + 1 != idx.size:
            return None
        spans.append((int(idx[0]), int(idx[-1]), x))
    return sorted(spans)


def _aggregated_balance(matrix: np.ndarray, mass: np.ndarray) -> float:
    flux = mass[:, None] * matrix
    scale = max(flux.max(), 1e-300)
    return float(np.abs(flux - flux.T).max() / scale)


def inter_well_rates(chain: Chain, nu: ProbabilityMeasure, partition: WellPartition,
                     route: str = "auto", trace: Optional[TraceResult] = None) -> InterWellRates:
    """
    r(x, y) = nu(E^x)^-1 sum_{a in E^x, b in E^y} nu(a) R^E(a, b), speedup included.

    Routes: "elimination" builds the trace chain on the union of wells;
    "1d" uses series conductances between facing well edges and needs a
    path graph with interval wells; "auto" takes "1d" whenever it applies.
    """
    for x in partition.labels:
        for s in partition.wells[x]:
            if s not in chain.space:
                raise PartitionInvalid(f"well {x!r} contains unknown state {s!r}")
    k = partition.kappa
    mass = np.array([nu.mass(partition.wells[x]) for x in partition.labels])
    matrix = np.zeros((k, k))

    spans = None
    if route in ("auto", "1d"):
        spans = _interval_wells(chain, partition) if chain.is_path_graph() else None
        if spans is None and route == "1d":
            raise PartitionInvalid("the one-dimensional route needs a path graph with interval wells")

    if spans is not None:
        position = {x: partition.labels.index(x) for _, _, x in spans}
        for (_, right, x), (left, _, y) in zip(spans[:-1], spans[1:]):
            flux = path_conductance(chain, nu, right, left)
            matrix[position[x], position[y]] = flux / mass[position[x]]
            matrix[position[y], position[x]] = flux / mass[position[y]]
        used = "1d"
    else:
        trace = _trace_on_wells(chain, nu, partition, trace)
        labels_on_trace = partition.label_vector(trace.space)
        w = trace.conditioned.weights * nu.mass(partition.union())
        R = trace.chain.effective_rates
        for a in range(k):
            rows = labels_on_trace == a
            for b in range(k):
                if a != b:
                    cols = labels_on_trace == b
                    matrix[a, b] = (w[rows, None] * R[np.ix_(rows, cols)]).sum() / mass[a]
        used = "elimination"

    balance = _aggregated_balance(matrix, mass)
    logger.debug("inter-well rates via %s, aggregated balance %.3g", used, balance)
    return InterWellRates(partition.labels, matrix, mass, used, balance)


# ---------------------------------------------------------------------------
# (C1)
# ---------------------------------------------------------------------------

@dataclass
class CauchyReport:
    """r_N over a grid of N with a successive-change diagnostic per pair"""

    n_grid: List[int]
    sequences: Dict[Tuple[Hashable, Hashable], List[float]]
    last_value: Dict[Tuple[Hashable, Hashable], float]
    max_change: Dict[Tuple[Hashable, Hashable], float]
    plausibly_convergent: Dict[Tuple[Hashable, Hashable], bool]
    threshold: float = CAUCHY_THRESHOLD


def _relative_changes(values: Sequence[float]) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    prev = np.where(v[:-1] == 0, 1e-300, np.abs(v[:-1]))
    return np.abs(np.diff(v)) / prev


def cauchy_diagnostic(n_grid: Sequence[int], rates: Sequence[InterWellRates],
                      threshold: float = CAUCHY_THRESHOLD) -> CauchyReport:
    if len(n_grid) < 3:
        raise GridTooSmall("the diagnostic needs at least three grid points")
    labels = rates[0].labels
    sequences, last, worst, verdict = {}, {}, {}, {}
    for x in labels:
        for y in labels:
            if x == y:
                continue
            seq = [r[(x, y)] for r in rates]
            changes = _relative_changes(seq)
            sequences[(x, y)] = seq
            last[(x, y)] = seq[-1]
            worst[(x, y)] = float(changes.max())
            verdict[(x, y)] = bool(np.all(changes[-2:] < threshold) and seq[-1] > 0)
    return CauchyReport(list(n_grid), sequences, last, worst, verdict, threshold)


def check_C1(build: Callable[[int], Tuple[Chain, ProbabilityMeasure, WellPartition]],
             n_grid: Sequence[int], max_workers: int = 4,
             threshold: float = CAUCHY_THRESHOLD) -> CauchyReport:
    """
    Compute r_N on every grid point; ``build(N)`` returns (chain, nu, partition).
    Grid points run in a thread pool and are collected in grid order.
    """
    n_grid = list(n_grid)
    if len(n_grid) < 3:
        raise GridTooSmall("the diagnostic needs at least three grid points")

    def one(N):
        chain, nu, partition = build(N)
        return inter_well_rates(chain, nu, partition)

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        rates = list(executor.map(one, n_grid))
    return cauchy_diagnostic(n_grid, rates, threshold)


# ---------------------------------------------------------------------------
# (C2), (C3), sigma
# ---------------------------------------------------------------------------

def check_C2(chain: Chain, nu: ProbabilityMeasure, partition: WellPartition,
             geometry: WellGeometry, trace: Optional[TraceResult] = None) -> Dict[Tuple, float]:
    """
    max_{a in E^x} R^E(a, E^y) times max_{a in E^x} E_a[H_{xi^x}], the
    hitting time taken on the full chain.
    """
    trace = _trace_on_wells(chain, nu, partition, trace)
    labels_on_trace = partition.label_vector(trace.space)
    R = trace.chain.effective_rates
    out = {}
    for a, x in enumerate(partition.labels):
        rows = labels_on_trace == a
        h = hitting_times(chain, [geometry.anchors[x]])
        worst_time = float(h[chain.space.indices(partition.wells[x])].max())
        for b, y in enumerate(partition.labels):
            if a == b:
                continue
            cols = labels_on_trace == b
            exit_rate = float(R[np.ix_(rows, cols)].sum(axis=1).max())
            out[(x, y)] = exit_rate * worst_time
    return out


def check_C3(chain: Chain, nu: ProbabilityMeasure, partition: WellPartition,
             geometry: WellGeometry) -> Dict[Hashable, float]:
    """max over the outer boundary of E^x of the mean time to reach the other
    wells, for the trace chain on the complement of E^x"""
    out = {}
    for x in partition.labels:
        if not geometry.boundary[x]:
            out[x] = 0.0
            continue
        own = set(partition.wells[x])
        rest = [s for s in chain.space.labels if s not in own]
        trace = trace_chain(chain, rest, nu=nu)
        h = hitting_times(trace.chain, partition.complement(x))
        idx = trace.space.indices(geometry.boundary[x])
        out[x] = float(h[idx].max())
    return out


def sigma(chain: Chain, nu: ProbabilityMeasure, partition: WellPartition,
          geometry: WellGeometry, trace: Optional[TraceResult] = None) -> Dict[Hashable, float]:
    """sigma(x) = max_{a in E^x} E^E_a[H_{xi^x}] on the trace chain over the wells"""
    trace = _trace_on_wells(chain, nu, partition, trace)
    out = {}
    for x in partition.labels:
        h = hitting_times(trace.chain, [geometry.anchors[x]])
        out[x] = float(h[trace.space.indices(partition.wells[x])].max())
    return out


# ---------------------------------------------------------------------------
# (H2), (H3)
# ---------------------------------------------------------------------------

def point_capacity(chain: Chain, nu: ProbabilityMeasure, a, B: Iterable) -> float:
    """
    Cap({a}, B). On a path graph only the nearest state of B on each side
    matters and the closed form is used.
    """
    B = list(B)
    if chain.is_path_graph():
        i = chain.space.index(a)
        b_idx = chain.space.indices(B)
        left, right = b_idx[b_idx < i], b_idx[b_idx > i]
        total = 0.0
        if left.size:
            total += path_conductance(chain, nu, int(left.max()), i)
        if right.size:
            total += path_conductance(chain, nu, i, int(right.min()))
        return total
    return capacity(chain, nu, [a], B, check=False).value


@dataclass
class HypothesisReport:
    """Finite-N values behind the capacity hypotheses"""

    nu_delta: float
    gate_capacity: Dict[Hashable, Optional[float]]
    h2: Dict[Hashable, Optional[float]]
    cap_unspeeded: Dict[Hashable, Optional[float]]
    h2_unspeeded: Dict[Hashable, Optional[float]]
    h2prime: Tuple[float, Optional[float]]
    h3: Dict[Tuple[Hashable, Hashable], float]


def check_H2_H3(chain: Chain, nu: ProbabilityMeasure, partition: WellPartition,
                geometry: WellGeometry, check: bool = True) -> HypothesisReport:
    """
    h2(x) = nu(Delta) / Cap(zeta^x, other wells) for the analysed chain, with
    the unspeeded capacity and ratio alongside;
    h3(x, y) = min_{a in closure of E^x} Cap(a, xi^x) * min_{crossing support} nu,
    the second factor being 1 when the crossing support is empty.
    """
    if check:
        require_reversible(chain, nu)
    nu_delta = nu.mass(partition.delta) if partition.delta else 0.0

    gate_cap, h2, cap_raw, h2_raw = {}, {}, {}, {}
    for x in partition.labels:
        zeta = geometry.gates.get(x)
        if geometry.boundary[x] and zeta is None:
            raise MissingGateState(f"well {x!r} has an outer boundary but no gate state")
        if not partition.delta:
            gate_cap[x] = cap_raw[x] = None
            h2[x] = h2_raw[x] = 0.0
            continue
        if zeta is None:
            gate_cap[x] = cap_raw[x] = h2[x] = h2_raw[x] = None
            continue
        cap = point_capacity(chain, nu, zeta, partition.complement(x))
        gate_cap[x] = cap
        cap_raw[x] = cap / chain.speedup
        h2[x] = nu_delta / cap
        h2_raw[x] = nu_delta / cap_raw[x]
    caps = [c for c in gate_cap.values() if c is not None]
    h2prime = (nu_delta, min(caps) if caps else None)

    h3 = {}
    for x in partition.labels:
        anchor = geometry.anchors[x]
        near = [a for a in geometry.closure(x) if a != anchor]
        first = min(point_capacity(chain, nu, a, [anchor]) for a in near) if near else 0.0
        for y in partition.labels:
            if x == y:
                continue
            support = geometry.crossing[(x, y)]
            second = min(nu[s] for s in support) if support else 1.0
            h3[(x, y)] = first * second
    return HypothesisReport(nu_delta, gate_cap, h2, cap_raw, h2_raw, h2prime, h3)


# ---------------------------------------------------------------------------
# Replacement and time spent in Delta
# ---------------------------------------------------------------------------

def conditional_expectation(nu: ProbabilityMeasure, partition: WellPartition, V) -> np.ndarray:
    """nu-average of V over each well, spread back on the well; zero on Delta"""
    V = np.asarray(V, dtype=float)
    out = np.zeros_like(V)
    for x in partition.labels:
        idx = nu.space.indices(partition.wells[x])
        w = nu.weights[idx]
        out[idx] = np.dot(w, V[idx]) / w.sum()
    return out


def replacement_bound(chain: Chain, nu: ProbabilityMeasure, partition: WellPartition,
                      geometry: WellGeometry, V, sigmas: Optional[Dict] = None) -> Dict[Hashable, float]:
    """2 sigma(x) max_{E^x} |V - V_hat| for each well"""
    V = np.asarray(V, dtype=float)
    if sigmas is None:
        sigmas = sigma(chain, nu, partition, geometry)
    gap = np.abs(V - conditional_expectation(nu, partition, V))
    return {x: 2.0 * sigmas[x] * float(gap[chain.space.indices(partition.wells[x])].max())
            for x in partition.labels}


def delta_time_expectation(chain: Chain, partition: WellPartition, t: float) -> float:
    """max over well states of E[time spent in Delta up to t]"""
    if not partition.delta:
        return 0.0
    indicator = np.zeros(chain.n)
    indicator[chain.space.indices(partition.delta)] = 1.0
    u = integrate_forward(chain, indicator, t)
    return float(u[chain.space.indices(partition.union())].max())


def c2_bound(nu: ProbabilityMeasure, rates: InterWellRates, geometry: WellGeometry,
             hypotheses: HypothesisReport, chain: Chain) -> Dict[Tuple, Optional[float]]:
    """
    Upper bound for the (C2) product from the capacity hypotheses:
    nu(E^x) r(x, y) / min_crossing nu  times  2 / min_closure Cap(a, xi^x).
    """
    partition = geometry.partition
    out = {}
    for x in partition.labels:
        anchor = geometry.anchors[x]
        near = [a for a in geometry.closure(x) if a != anchor]
        if not near:
            out.update({(x, y): 0.0 for y in partition.labels if y != x})
            continue
        min_cap = min(point_capacity(chain, nu, a, [anchor]) for a in near)
        for y in partition.labels:
            if x == y:
                continue
            support = geometry.crossing[(x, y)]
            if not support:
                out[(x, y)] = 0.0
                continue
            flow = rates.well_mass[rates.labels.index(x)] * rates[(x, y)]
            out[(x, y)] = flow / min(nu[s] for s in support) * 2.0 / min_cap
    return out


def c3_bound(hypotheses: HypothesisReport) -> Dict[Hashable, Optional[float]]:
    """The gate term nu(Delta) / Cap(zeta^x, other wells) bounding (C3)"""
    return dict(hypotheses.h2)


# ---------------------------------------------------------------------------
# Limit chain and the full report
# ---------------------------------------------------------------------------

@dataclass
class LimitChain:
    labels: Tuple[Hashable, ...]
    rates: np.ndarray

    def generator(self) -> np.ndarray:
        L = self.rates.copy()
        np.fill_diagonal(L, 0.0)
        L[np.diag_indices_from(L)] = -L.sum(axis=1)
        return L

    def apply(self, F) -> np.ndarray:
        """(LF)(x) = sum_y (F(y) - F(x)) r(x, y)"""
        F = np.asarray(F, dtype=float)
        return (self.rates * (F[None, :] - F[:, None])).sum(axis=1)

    def as_chain(self) -> Chain:
        return chain_from_matrix(StateSpace(self.labels), self.rates)


def limit_chain(r, labels: Optional[Sequence] = None) -> LimitChain:
    """Generator on the well labels from a rate matrix (or InterWellRates)"""
    if isinstance(r, InterWellRates):
        labels, r = r.labels, r.matrix
    r = np.array(r, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise NegativeRate("limit rates must form a square matrix")
    np.fill_diagonal(r, 0.0)
    if not np.all(np.isfinite(r)):
        raise NegativeRate("limit rates must be finite")
    if np.any(r < 0):
        raise NegativeRate(f"negative limit rate {r.min():.3g}")
    if labels is None:
        labels = tuple(range(1, r.shape[0] + 1))
    return LimitChain(tuple(labels), r)


@dataclass
class MetastabilityReport:
    rates: InterWellRates
    c2: Dict[Tuple, float]
    c3: Dict[Hashable, float]
    hypotheses: HypothesisReport
    sigma: Dict[Hashable, float]
    c2_bound: Dict[Tuple, Optional[float]] = field(default_factory=dict)
    c3_bound: Dict[Hashable, Optional[float]] = field(default_factory=dict)
    reversible: bool = True

    @property
    def h2(self):
        return self.hypotheses.h2

    @property
    def h3(self):
        return self.hypotheses.h3


def analyze(chain: Chain, nu: ProbabilityMeasure, partition: WellPartition,
            geometry: WellGeometry, trace: Optional[TraceResult] = None,
            route: str = "auto") -> MetastabilityReport:
    """All finite-N diagnostics for one chain"""
    balance = require_reversible(chain, nu)
    trace = _trace_on_wells(chain, nu, partition, trace)
    rates = inter_well_rates(chain, nu, partition, route=route, trace=trace)
    if rates.balance_deviation > BALANCE_TOL:
        logger.warning("aggregated detailed balance off by %.3g", rates.balance_deviation)
    c2 = check_C2(chain, nu, partition, geometry, trace)
    c3 = check_C3(chain, nu, partition, geometry)
    hyp = check_H2_H3(chain, nu, partition, geometry, check=False)
    sig = sigma(chain, nu, partition, geometry, trace)
    return MetastabilityReport(rates, c2, c3, hyp, sig,
                               c2_bound(nu, rates, geometry, hyp, chain), c3_bound(hyp),
                               bool(balance))


def report_rows(report: MetastabilityReport, N) -> List[Tuple]:
    """(N, pair or well, quantity, value) rows"""
    rows = []

    def pair(p):
        return f"{p[0]}->{p[1]}"

    labels = report.rates.labels
    for x in labels:
        for y in labels:
            if x != y:
                rows.append((N, pair((x, y)), "r", report.rates[(x, y)]))
    for p, v in report.c2.items():
        rows.append((N, pair(p), "C2", v))
    for p, v in report.c2_bound.items():
        if v is not None:
            rows.append((N, pair(p), "C2_bound", v))
    for x, v in report.c3.items():
        rows.append((N, str(x), "C3", v))
    for x, v in report.c3_bound.items():
        if v is not None:
            rows.append((N, str(x), "C3_bound", v))
    hyp = report.hypotheses
    rows.append((N, "all", "nu_delta", hyp.nu_delta))
    for name, values in (("h2", hyp.h2), ("cap_gate", hyp.gate_capacity),
                         ("cap_unspeeded", hyp.cap_unspeeded), ("h2_unspeeded", hyp.h2_unspeeded)):
        for x, v in values.items():
            if v is not None:
                rows.append((N, str(x), name, v))
    for p, v in hyp.h3.items():
        rows.append((N, pair(p), "h3", v))
    for x, v in report.sigma.items():
        rows.append((N, str(x), "sigma", v))
    return rows
