#!/usr/bin/env python3
"""
Finite continuous-time Markov chains
State spaces, rate matrices, stationary measures, generator and Dirichlet form
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError as PydanticValidationError
from scipy import linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order

from errors import (
    ConfigInvalid,
    DimensionMismatch,
    DirichletMismatch,
    DuplicateLabel,
    NonPositiveRate,
    NotIrreducible,
    NotReversible,
    SolverFailure,
    StateNotFound,
    StateSpaceTooLarge,
    TooSmall,
    ValidationError,
)

logger = logging.getLogger(__name__)

MAX_STATES = 5000              # dense LU limit
REVERSIBILITY_TOL = 1e-9       # relative to the largest flux
STATIONARY_RESIDUAL_TOL = 1e-10
DIRICHLET_TOL = 1e-10          # relative to the form's absolute scale
PIVOT_TOL = 1e-14


def _as_label(value):
    """JSON hands tuples back as lists; labels must stay hashable"""
    if isinstance(value, list):
        return tuple(_as_label(v) for v in value)
    return value


@dataclass(frozen=True)
class StateSpace:
    """Ordered, duplicate-free list of state labels"""

    labels: Tuple[Hashable, ...]
    _index: Dict[Hashable, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        labels = tuple(self.labels)
        index = {}
        for i, label in enumerate(labels):
            if label in index:
                raise DuplicateLabel(f"state label {label!r} appears twice")
            index[label] = i
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label) -> bool:
        return label in self._index

    def __iter__(self):
        return iter(self.labels)

    def index(self, label) -> int:
        try:
            return self._index[label]
        except (KeyError, TypeError):
            raise StateNotFound(f"state {label!r} is not in the state space")

    def label(self, i: int):
        return self.labels[i]

    def indices(self, labels: Iterable) -> np.ndarray:
        """Sorted index array of a collection of labels"""
        idx = sorted({self.index(label) for label in labels})
        return np.asarray(idx, dtype=np.int64)

    def subspace(self, idx: Sequence[int]) -> "StateSpace":
        return StateSpace(tuple(self.labels[i] for i in idx))


@dataclass(frozen=True, eq=False)
class Chain:
    """
    Irreducible finite chain with off-diagonal rates R(i, j) > 0 where present.

    The rate used everywhere is speedup * rates[i, j]. Instances are
    immutable; the rate array is marked read-only.
    """

    space: StateSpace
    rates: np.ndarray
    speedup: float = 1.0

    def __post_init__(self):
        rates = np.array(self.rates, dtype=float)
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "speedup", float(self.speedup))

    @property
    def n(self) -> int:
        return len(self.space)

    @property
    def effective_rates(self) -> np.ndarray:
        return self.speedup * self.rates

    @property
    def holding_rates(self) -> np.ndarray:
        """lambda(i): total effective jump rate out of i"""
        return self.speedup * self.rates.sum(axis=1)

    @property
    def max_rate(self) -> float:
        return float(self.speedup * self.rates.max())

    def rate(self, a, b) -> float:
        return float(self.speedup * self.rates[self.space.index(a), self.space.index(b)])

    def rate_entries(self) -> List[Tuple[Any, Any, float]]:
        """Sparse (from, to, rate) triples of the unspeeded rates"""
        rows, cols = np.nonzero(self.rates)
        return [(self.space.label(i), self.space.label(j), float(self.rates[i, j]))
                for i, j in zip(rows, cols)]

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.rates[i])

    def is_path_graph(self) -> bool:
        """True when the only positive rates join consecutive indices"""
        n = self.n
        off = self.rates.copy()
        idx = np.arange(n - 1)
        off[idx, idx + 1] = 0.0
        off[idx + 1, idx] = 0.0
        return not np.any(off) and bool(np.all(self.rates[idx, idx + 1] > 0)) \
            and bool(np.all(self.rates[idx + 1, idx] > 0))


@dataclass(frozen=True, eq=False)
class ProbabilityMeasure:
    """Probability vector indexed by a state space"""

    space: StateSpace
    weights: np.ndarray
    residual: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != (len(self.space),):
            raise DimensionMismatch(
                f"measure has {w.size} weights for {len(self.space)} states")
        if np.any(w < 0):
            raise ValidationError("probability weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError(f"weights sum to {w.sum()!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __getitem__(self, label) -> float:
        return float(self.weights[self.space.index(label)])

    def mass(self, labels: Iterable) -> float:
        return float(self.weights[self.space.indices(labels)].sum())

    def conditioned(self, labels: Iterable) -> "ProbabilityMeasure":
        """nu(. | F) as a measure on the subspace F (kept in index order)"""
        idx = self.space.indices(labels)
        return measure_from_weights(self.space.subspace(idx), self.weights[idx])


def measure_from_weights(space: StateSpace, weights, residual: float = 0.0) -> ProbabilityMeasure:
    """
    Normalize raw nonnegative weights into a probability measure.

    Weights are divided by their maximum before summation so that very large
    terms such as N^alpha products stay in double range.
    """
    w = np.asarray(weights, dtype=float)
    top = w.max()
    if not np.isfinite(top) or top <= 0:
        raise ValidationError("weights must be finite with a positive entry")
    w = w / top
    w = w / w.sum()
    # Renormalize once more so the sum is 1 to the last ulp
    w = w / np.sum(w)
    return ProbabilityMeasure(space, w, residual)


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def _check_irreducible(space: StateSpace, rates: np.ndarray):
    """Forward and backward BFS from state 0 must both reach everything"""
    graph = csr_matrix(rates > 0)
    forward = breadth_first_order(graph, 0, directed=True, return_predecessors=False)
    backward = breadth_first_order(graph.T.tocsr(), 0, directed=True,
                                   return_predecessors=False)
    n = len(space)
    for name, reached in (("reached from", forward), ("able to reach", backward)):
        if len(reached) < n:
            missing = sorted(set(range(n)) - set(int(i) for i in reached))
            labels = [space.label(i) for i in missing]
            raise NotIrreducible(
                f"{len(missing)} state(s) not {name} {space.label(0)!r}: "
                f"{labels[:10]}{'...' if len(labels) > 10 else ''}",
                unreachable=labels)


def chain_from_matrix(space: StateSpace, rates, speedup: float = 1.0,
                      check: bool = True, max_states: int = MAX_STATES) -> Chain:
    """
    Wrap a dense rate matrix as a Chain.

    Args:
        space: state labels
        rates: n x n array of nonnegative off-diagonal rates (diagonal ignored)
        speedup: positive time multiplier
        check: run the irreducibility BFS
        max_states: dense-solver size limit
    """
    rates = np.array(rates, dtype=float)
    n = len(space)
    if n < 2:
        raise TooSmall("a chain needs at least two states")
    if n > max_states:
        raise StateSpaceTooLarge(
            f"{n} states exceed the dense-solver limit of {max_states}")
    if rates.shape != (n, n):
        raise DimensionMismatch(f"rate matrix shape {rates.shape} for {n} states")
    np.fill_diagonal(rates, 0.0)
    if np.any(rates < 0) or not np.all(np.isfinite(rates)):
        raise NonPositiveRate("rates must be finite and nonnegative")
    if not speedup > 0:
        raise ValidationError(f"speedup must be positive, got {speedup!r}")
    if check:
        _check_irreducible(space, rates)
    return Chain(space, rates, speedup)


def build_chain(labels: Sequence, entries: Iterable[Tuple[Any, Any, float]],
                speedup: float = 1.0, max_states: int = MAX_STATES) -> Chain:
    """
    Build a validated chain from labels and (from, to, rate) triples.

    Repeated (from, to) pairs add up. Raises DuplicateLabel, NonPositiveRate,
    StateNotFound or NotIrreducible.
    """
    space = StateSpace(tuple(labels))
    n = len(space)
    if n > max_states:
        raise StateSpaceTooLarge(
            f"{n} states exceed the dense-solver limit of {max_states}")
    rates = np.zeros((n, n))
    for a, b, r in entries:
        i, j = space.index(a), space.index(b)
        if not (np.isfinite(r) and r > 0):
            raise NonPositiveRate(f"rate {a!r}->{b!r} is {r!r}; rates must be > 0")
        if i == j:
            raise ValidationError(f"self-loop at {a!r} is not allowed")
        rates[i, j] += r
    return chain_from_matrix(space, rates, speedup, max_states=max_states)


def with_speedup(chain: Chain, speedup: float) -> Chain:
    if not speedup > 0:
        raise ValidationError(f"speedup must be positive, got {speedup!r}")
    return Chain(chain.space, chain.rates, speedup)


# ---------------------------------------------------------------------------
# Chain files
# ---------------------------------------------------------------------------

class ChainFile(BaseModel):
    """On-disk chain format: states, [from, to, rate] triples, speedup"""

    states: List[Any]
    rates: List[Tuple[Any, Any, float]]
    speedup: float = Field(default=1.0, gt=0)


def load_chain(filename: str, max_states: int = MAX_STATES) -> Chain:
    with open(filename, 'r') as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigInvalid(f"{filename}: not valid JSON ({e})") from e
    try:
        data = ChainFile.model_validate(raw)
    except PydanticValidationError as e:
        raise ConfigInvalid(f"{filename}: {e}") from e
    labels = [_as_label(s) for s in data.states]
    entries = [(_as_label(a), _as_label(b), r) for a, b, r in data.rates]
    return build_chain(labels, entries, data.speedup, max_states=max_states)


def save_chain(chain: Chain, filename: str):
    def plain(label):
        return list(label) if isinstance(label, tuple) else label

    payload = {
        'states': [plain(s) for s in chain.space.labels],
        'rates': [[plain(a), plain(b), r] for a, b, r in chain.rate_entries()],
        'speedup': chain.speedup,
    }
    with open(filename, 'w') as f:
        json.dump(payload, f, indent=2)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def generator_matrix(chain: Chain, unspeeded: bool = False) -> np.ndarray:
    """Dense generator L with rows summing to zero"""
    R = chain.rates if unspeeded else chain.effective_rates
    L = R.copy()
    L[np.diag_indices_from(L)] = -R.sum(axis=1)
    return L


def lu_solve_checked(A: np.ndarray, b: np.ndarray, what: str = "linear system") -> np.ndarray:
    """Dense LU with partial pivoting; SolverFailure on a numerically singular pivot"""
    if A.shape[0] == 0:
        return np.zeros((0,) + b.shape[1:])
    try:
        lu, piv = linalg.lu_factor(A, check_finite=True)
    except (ValueError, linalg.LinAlgError) as e:
        raise SolverFailure(f"{what}: {e}") from e
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= PIVOT_TOL * max(pivots.max(), 1e-300):
        raise SolverFailure(
            f"{what} is numerically singular (pivot ratio {pivots.min() / pivots.max():.3g})")
    return linalg.lu_solve((lu, piv), b)


def stationary_measure(chain: Chain) -> ProbabilityMeasure:
    """
    Unique invariant probability of an irreducible chain.

    Solves nu^T L = 0 with one equation replaced by sum(nu) = 1. The speedup
    is left out of the solve so the result does not depend on it at all.
    """
    L = generator_matrix(chain, unspeeded=True)
    scale = chain.rates.max()
    A = L.T / scale
    A[-1, :] = 1.0
    b = np.zeros(chain.n)
    b[-1] = 1.0
    nu = lu_solve_checked(A, b, "stationary system")

    # one step of iterative refinement
    resid_vec = A @ nu - b
    nu = nu - lu_solve_checked(A, resid_vec, "stationary refinement")

    if np.any(nu < -1e-12):
        raise SolverFailure(f"stationary solve produced negative mass {nu.min():.3g}")
    nu = np.clip(nu, 0.0, None)
    nu = nu / nu.sum()
    residual = float(np.abs(nu @ L).max() / scale)
    if residual > STATIONARY_RESIDUAL_TOL:
        raise SolverFailure(f"stationary residual {residual:.3g} above tolerance")
    logger.debug("stationary measure: n=%d residual=%.3g", chain.n, residual)
    return ProbabilityMeasure(chain.space, nu, residual)


def _check_dimension(chain: Chain, vec: np.ndarray, what: str):
    if vec.shape != (chain.n,):
        raise DimensionMismatch(f"{what} has shape {vec.shape}, chain has {chain.n} states")


def apply_generator(chain: Chain, f) -> np.ndarray:
    """(Lf)(i) = speedup * sum_j (f(j) - f(i)) R(i, j); exactly zero on constants"""
    f = np.asarray(f, dtype=float)
    _check_dimension(chain, f, "function")
    diffs = f[None, :] - f[:, None]
    return chain.speedup * (chain.rates * diffs).sum(axis=1)


def embedded_jump_chain(chain: Chain) -> Tuple[np.ndarray, np.ndarray]:
    """Holding rates lambda and jump probabilities p of the embedded chain"""
    lam = chain.holding_rates
    p = chain.effective_rates / lam[:, None]
    return lam, p


def expectation(nu: ProbabilityMeasure, f) -> float:
    return float(np.dot(nu.weights, np.asarray(f, dtype=float)))


# ---------------------------------------------------------------------------
# Reversibility and Dirichlet form
# ---------------------------------------------------------------------------

@dataclass
class BalanceReport:
    """Detailed balance verdict with the worst offending pair"""

    balanced: bool
    worst_pair: Optional[Tuple[Any, Any]]
    worst_violation: float
    max_flux: float
    tol: float

    def __bool__(self):
        return self.balanced


def check_detailed_balance(chain: Chain, nu: ProbabilityMeasure,
                           tol: float = REVERSIBILITY_TOL) -> BalanceReport:
    if len(nu.space) != chain.n:
        raise DimensionMismatch(
            f"measure has {len(nu.space)} states, chain has {chain.n}")
    flux = nu.weights[:, None] * chain.effective_rates
    gap = np.abs(flux - flux.T)
    i, j = np.unravel_index(np.argmax(gap), gap.shape)
    worst = float(gap[i, j])
    max_flux = float(flux.max())
    balanced = worst <= tol * max_flux
    pair = (chain.space.label(int(i)), chain.space.label(int(j))) if worst > 0 else None
    return BalanceReport(balanced, pair, worst, max_flux, tol)


def require_reversible(chain: Chain, nu: ProbabilityMeasure, tol: float = REVERSIBILITY_TOL):
    report = check_detailed_balance(chain, nu, tol)
    if not report:
        raise NotReversible(
            f"detailed balance fails at {report.worst_pair}: violation "
            f"{report.worst_violation:.3g} vs max flux {report.max_flux:.3g}",
            worst_pair=report.worst_pair, violation=report.worst_violation)
    return report


def dirichlet_form_both(chain: Chain, nu: ProbabilityMeasure, f) -> Tuple[float, float]:
    """The inner-product form <-Lf, f>_nu and the half sum of squared gradients"""
    f = np.asarray(f, dtype=float)
    _check_dimension(chain, f, "function")
    inner = -float(np.dot(nu.weights * apply_generator(chain, f), f))
    diffs = f[None, :] - f[:, None]
    grad = 0.5 * chain.speedup * float(
        (nu.weights[:, None] * chain.rates * diffs ** 2).sum())
    return inner, grad


def dirichlet_gap(chain: Chain, nu: ProbabilityMeasure, f, inner: float, grad: float) -> float:
    """
    |inner - grad| relative to (1/2) sum nu(i) R(i,j) |f(i)^2 - f(j)^2|,
    the size of the terms the two routes sum over.
    """
    f = np.asarray(f, dtype=float)
    sq = f ** 2
    scale = 0.5 * chain.speedup * float(
        (nu.weights[:, None] * chain.rates * np.abs(sq[None, :] - sq[:, None])).sum())
    scale = max(scale, abs(grad))
    return 0.0 if scale == 0 else abs(inner - grad) / scale


def dirichlet_form(chain: Chain, nu: ProbabilityMeasure, f, check: bool = True,
                   tol: float = REVERSIBILITY_TOL, agreement_tol: float = DIRICHLET_TOL) -> float:
    """
    D(f) = (1/2) sum nu(i) R(i,j) (f(j) - f(i))^2 for a reversible nu.

    Args:
        check: verify detailed balance first (NotReversible otherwise)
        agreement_tol: DirichletMismatch when <-Lf, f>_nu departs from the
            gradient sum by more than this (see dirichlet_gap)
    """
    if len(nu.space) != chain.n:
        raise DimensionMismatch(
            f"measure has {len(nu.space)} states, chain has {chain.n}")
    if check:
        require_reversible(chain, nu, tol)
    inner, grad = dirichlet_form_both(chain, nu, f)
    gap = dirichlet_gap(chain, nu, f, inner, grad)
    if gap > agreement_tol:
        raise DirichletMismatch(
            f"Dirichlet form routes disagree: {inner:.17g} vs {grad:.17g} "
            f"(relative gap {gap:.3g})")
    return grad


if __name__ == "__main__":
    import sys

    if len(sys.argv) < 2:
        print("Usage:")
        print("  python3 markov_chain.py <chain.json>")
        sys.exit(1)

    chain = load_chain(sys.argv[1])
    nu = stationary_measure(chain)
    balance = check_detailed_balance(chain, nu)
    print(f"States: {chain.n}  speedup: {chain.speedup}")
    print(f"Stationary residual: {nu.residual:.3g}")
    print(f"Reversible: {'✓' if balance else '✗'} (worst violation {balance.worst_violation:.3g})")
    for label, w in zip(chain.space.labels, nu.weights):
        print(f"  {label}: {w:.6g}")
