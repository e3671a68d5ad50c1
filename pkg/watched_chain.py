#!/usr/bin/env python3
"""
Trace (watched) chains
Exact elimination of states, the block formula, first-return checks and
the time change of trajectories onto a subset
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Hashable, Iterable, List, Optional, Sequence

import numpy as np

from errors import (
    EmptySubset,
    StartOutsideSubset,
    SubsetTooLarge,
    TooSmall,
    ValidationError,
)
from markov_chain import (
    Chain,
    ProbabilityMeasure,
    StateSpace,
    generator_matrix,
    lu_solve_checked,
    measure_from_weights,
    stationary_measure,
)
from paths import Trajectory, membership_mask

logger = logging.getLogger(__name__)

DROP_TOL = 1e-15               # relative to the largest rate of the input chain
STATIONARY_TOL = 1e-10


@dataclass
class TraceResult:
    """Trace chain on F plus bookkeeping of how it was obtained"""

    chain: Chain
    elimination_order: List[Hashable]
    conditioned: ProbabilityMeasure
    residual: float
    fill_in: List[int] = field(default_factory=list)
    dropped: int = 0
    drop_threshold: float = 0.0

    @property
    def space(self) -> StateSpace:
        return self.chain.space


def _eliminate(R: np.ndarray, k: int) -> int:
    """
    Remove state k from the dense rate array in place.

    Row and column k are zeroed afterwards, so already-removed states never
    contribute. Returns the number of new off-diagonal entries.
    """
    lam = R[k].sum()
    col = R[:, k].copy()
    row = R[k, :].copy()
    col[k] = 0.0
    row[k] = 0.0
    src = np.flatnonzero(col)
    dst = np.flatnonzero(row)
    R[k, :] = 0.0
    R[:, k] = 0.0
    if src.size == 0 or dst.size == 0:
        return 0
    block = R[np.ix_(src, dst)]
    before = np.count_nonzero(block)
    block += np.outer(col[src], row[dst]) / lam
    R[np.ix_(src, dst)] = block
    # Returns to the same state are invisible to the trace
    common = np.intersect1d(src, dst)
    R[common, common] = 0.0
    after = np.count_nonzero(R[np.ix_(src, dst)])
    return int(after - before)


def _resolve_subset(chain: Chain, F: Iterable) -> np.ndarray:
    F = list(F)
    if len(F) == 0:
        raise EmptySubset("the watched set is empty")
    idx = chain.space.indices(F)
    if idx.size < 2:
        raise TooSmall("the watched set needs at least two states")
    return idx


def reduce_one_state(chain: Chain, xi0, drop_tol: float = DROP_TOL) -> Chain:
    """
    Trace of the chain on E minus one state.

    R'(a, b) = R(a, b) + R(a, xi0) R(xi0, b) / lambda(xi0); the speedup is kept.
    """
    k = chain.space.index(xi0)
    if chain.n < 3:
        raise TooSmall("removing a state would leave fewer than two states")
    R = np.array(chain.rates)
    _eliminate(R, k)
    keep = np.delete(np.arange(chain.n), k)
    reduced = R[np.ix_(keep, keep)]
    reduced[reduced < drop_tol * chain.rates.max()] = 0.0
    return Chain(chain.space.subspace(keep), reduced, chain.speedup)


def trace_chain(chain: Chain, F: Iterable, order: Optional[Sequence] = None,
                nu: Optional[ProbabilityMeasure] = None, drop_tol: float = DROP_TOL,
                strict: bool = False) -> TraceResult:
    """
    Trace chain on F by iterated one-state elimination.

    Args:
        chain: irreducible chain
        F: watched states (at least two)
        order: elimination order of the complement; ascending index by default
        nu: stationary measure of ``chain`` if already known
        drop_tol: rates below drop_tol * max rate are set to zero
        strict: raise SubsetTooLarge when F is the whole space

    Returns:
        TraceResult whose conditioned measure is nu(. | F)
    """
    F_idx = _resolve_subset(chain, F)
    if nu is None:
        nu = stationary_measure(chain)

    if F_idx.size == chain.n:
        if strict:
            raise SubsetTooLarge("the watched set is the whole state space")
        return TraceResult(chain, [], nu, nu.residual)

    in_F = np.zeros(chain.n, dtype=bool)
    in_F[F_idx] = True
    if order is None:
        elim = np.flatnonzero(~in_F)
    else:
        elim = np.array([chain.space.index(s) for s in order], dtype=np.int64)
        if sorted(elim.tolist()) != np.flatnonzero(~in_F).tolist():
            raise ValidationError("elimination order must list each state outside F once")

    R = np.array(chain.rates)
    fill_in = []
    for k in elim:
        fill_in.append(_eliminate(R, int(k)))
    logger.debug("trace on %d of %d states: total fill-in %d",
                 F_idx.size, chain.n, sum(fill_in))

    RF = R[np.ix_(F_idx, F_idx)]
    threshold = drop_tol * chain.rates.max()
    tiny = (RF > 0) & (RF < threshold)
    dropped = int(np.count_nonzero(tiny))
    if dropped:
        logger.warning("dropped %d trace rates below %.3g", dropped, threshold)
        RF[tiny] = 0.0

    traced = Chain(chain.space.subspace(F_idx), RF, chain.speedup)
    conditioned = measure_from_weights(traced.space, nu.weights[F_idx])
    residual = float(np.abs(conditioned.weights @ generator_matrix(traced, unspeeded=True)).max()
                     / RF.max())
    if residual > STATIONARY_TOL:
        logger.warning("conditioned measure residual %.3g on the trace chain", residual)
    return TraceResult(traced, [chain.space.label(int(k)) for k in elim],
                       conditioned, residual, fill_in, dropped, threshold)


def trace_rates_schur(chain: Chain, F: Iterable) -> np.ndarray:
    """
    Unspeeded trace rates on F (in index order) through the block formula
    R_FF + R_FD (Lambda_D - R_DD)^-1 R_DF.
    """
    F_idx = _resolve_subset(chain, F)
    D_idx = np.setdiff1d(np.arange(chain.n), F_idx)
    R = chain.rates
    RF = R[np.ix_(F_idx, F_idx)].copy()
    if D_idx.size:
        lam = R.sum(axis=1)
        A = np.diag(lam[D_idx]) - R[np.ix_(D_idx, D_idx)]
        X = lu_solve_checked(A, R[np.ix_(D_idx, F_idx)], "block trace system")
        RF += R[np.ix_(F_idx, D_idx)] @ X
    np.fill_diagonal(RF, 0.0)
    return RF


def r_F(trace: TraceResult, G1: Iterable, G2: Iterable) -> float:
    """Set-to-set rate nu(G1)^-1 sum_{G1 x G2} nu(a) R^F(a, b), speedup included"""
    space = trace.space
    i1, i2 = space.indices(G1), space.indices(G2)
    w = trace.conditioned.weights
    flux = (w[i1, None] * trace.chain.effective_rates[np.ix_(i1, i2)]).sum()
    return float(flux / w[i1].sum())


@dataclass
class FirstReturnReport:
    """Holding rate and jump law of the trace at eta, by two routes"""

    state: Hashable
    holding_rate: float
    jump_probs: Dict[Hashable, float]
    trace_holding_rate: float
    trace_jump_probs: Dict[Hashable, float]
    max_deviation: float


def first_return_check(chain: Chain, F: Iterable, eta, trace: Optional[TraceResult] = None) -> FirstReturnReport:
    """
    lambda^F(eta) = lambda(eta) P_eta[H_{F - eta} < return to eta] and
    p^F(eta, b) = P_eta[first state of F - eta hit is b], from first-step
    systems of the jump chain, compared with the eliminated chain.
    """
    F_idx = _resolve_subset(chain, F)
    e = chain.space.index(eta)
    if e not in set(F_idx.tolist()):
        raise StartOutsideSubset(f"{eta!r} is not in the watched set")
    if trace is None:
        trace = trace_chain(chain, [chain.space.label(int(i)) for i in F_idx])

    lam = chain.holding_rates
    p = chain.rates / chain.rates.sum(axis=1)[:, None]
    D_idx = np.setdiff1d(np.arange(chain.n), F_idx)

    # exit[z, b]: from z outside F, the first state of F reached is b
    if D_idx.size:
        A = np.eye(D_idx.size) - p[np.ix_(D_idx, D_idx)]
        exit_law = lu_solve_checked(A, p[np.ix_(D_idx, F_idx)], "first-step system")
        arrive = p[e, F_idx] + p[e, D_idx] @ exit_law
    else:
        arrive = p[e, F_idx].copy()

    pos = int(np.flatnonzero(F_idx == e)[0])
    escape = np.delete(arrive, pos).sum()
    holding = float(lam[e] * escape)
    others = np.delete(np.arange(F_idx.size), pos)
    probs = {chain.space.label(int(F_idx[j])): float(arrive[j] / escape) for j in others}

    te = trace.space.index(eta)
    row = trace.chain.effective_rates[te]
    t_hold = float(row.sum())
    t_probs = {trace.space.label(j): float(row[j] / t_hold)
               for j in range(trace.chain.n) if j != te}

    dev = abs(holding - t_hold) / max(abs(t_hold), 1e-300)
    for label, q in probs.items():
        dev = max(dev, abs(q - t_probs.get(label, 0.0)))
    return FirstReturnReport(eta, holding, probs, t_hold, t_probs, float(dev))


def trace_trajectory(traj: Trajectory, F: Iterable) -> Trajectory:
    """
    Time change onto F: excursions outside F are cut out and the remaining
    pieces are glued together. The output horizon is T^F at the input horizon.
    """
    mask = membership_mask(traj.space, F)
    if not mask[traj.start]:
        raise StartOutsideSubset(
            f"trajectory starts at {traj.space.label(traj.start)!r}, outside the watched set")
    _, durations, visited = traj.segments()
    kept = mask[visited] & (durations > 0)
    d = durations[kept]
    s = visited[kept]
    clock = np.concatenate(([0.0], np.cumsum(d)))
    change = np.flatnonzero(s[1:] != s[:-1]) + 1
    return Trajectory(traj.space, int(s[0]), clock[change], s[change], float(clock[-1]))
