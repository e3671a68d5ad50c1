#!/usr/bin/env python3
"""
Identity suites on random reversible chains
Capacity routes, trace identities, hitting times and the occupation identity,
with a reproducer written for every failure
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from errors import MetastabilityError
from markov_chain import (
    Chain,
    ProbabilityMeasure,
    StateSpace,
    chain_from_matrix,
    save_chain,
    stationary_measure,
)
from montecarlo import SeedSpec
from potential import (
    bd_capacity_closed_form,
    capacity,
    capacity_flux,
    capacity_variational,
    mean_hitting_time,
    occupation_identity_check,
    trace_capacity_identity,
)
from watched_chain import trace_chain, trace_rates_schur, first_return_check

logger = logging.getLogger(__name__)

CAPACITY_TOL = 1e-9
CLOSED_FORM_TOL = 1e-10
TRACE_TOL = 1e-10
G02_TOL = 1e-9
ANTON_TOL = 1e-8
OCCUPATION_T = 1.0


@dataclass
class RandomChain:
    chain: Chain
    nu: ProbabilityMeasure
    seed: SeedSpec
    kind: str


def random_reversible_chain(n: int, rng: np.random.Generator, edge_prob: float = 0.3,
                            path: bool = False) -> Chain:
    """
    Random connected chain reversible with respect to random weights.

    Symmetric conductances c(a, b) on a random spanning tree plus extra
    edges (or on the path 0-1-...-n-1) give R(a, b) = c(a, b) / w(a).
    """
    weights = np.exp(rng.normal(0.0, 1.0, n))
    c = np.zeros((n, n))
    if path:
        edges = [(i, i + 1) for i in range(n - 1)]
    else:
        order = rng.permutation(n)
        edges = [(int(order[k]), int(order[rng.integers(0, k)])) for k in range(1, n)]
        for a in range(n):
            for b in range(a + 1, n):
                if rng.random() < edge_prob:
                    edges.append((a, b))
    for a, b in edges:
        c[a, b] = c[b, a] = np.exp(rng.normal(0.0, 1.0))
    rates = c / weights[:, None]
    return chain_from_matrix(StateSpace(tuple(range(n))), rates)


def _random_subsets(n: int, rng: np.random.Generator, parts: int) -> List[List[int]]:
    """``parts`` disjoint nonempty random subsets of range(n)"""
    order = [int(i) for i in rng.permutation(n)]
    cuts = sorted(rng.choice(np.arange(1, n), size=parts - 1, replace=False).tolist()) if parts > 1 else []
    pieces, prev = [], 0
    for cut in cuts + [n]:
        pieces.append(order[prev:cut])
        prev = cut
    return pieces


def _rel(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


@dataclass
class SuiteOutcome:
    suite: str
    seed: SeedSpec
    n: int
    passed: bool
    deviation: float
    detail: str = ""
    reproducer: Optional[str] = None


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def capacity_suite(case: RandomChain, rng: np.random.Generator):
    """Dirichlet, flux and variational capacities; closed form on paths"""
    F, G = _random_subsets(case.chain.n, rng, 2)
    d = capacity(case.chain, case.nu, F, G).value
    f = capacity_flux(case.chain, case.nu, F, G).value
    v = capacity_variational(case.chain, case.nu, F, G).value
    dev = max(_rel(d, f), _rel(d, v))
    ok = dev <= CAPACITY_TOL
    if case.kind == "path":
        x, y = sorted(rng.choice(case.chain.n, size=2, replace=False).tolist())
        closed = bd_capacity_closed_form(case.chain, case.nu, x, y).value
        single = capacity(case.chain, case.nu, [x], [y]).value
        closed_dev = _rel(closed, single)
        ok = ok and closed_dev <= CLOSED_FORM_TOL
        dev = max(dev, closed_dev)
    return ok, dev, f"Cap = {d:.17g}"


def trace_suite(case: RandomChain, rng: np.random.Generator):
    """Conditioned measure, block formula and the trace capacity identities"""
    chain, nu = case.chain, case.nu
    if chain.n < 4:
        return True, 0.0, "skipped below 4 states"
    G1, G2, rest = _random_subsets(chain.n, rng, 3)
    extra = rest[: int(rng.integers(0, len(rest)))]
    F = G1 + G2 + extra
    trace = trace_chain(chain, F, nu=nu)
    schur = trace_rates_schur(chain, F)
    schur_dev = float(np.abs(schur - trace.chain.rates).max() / trace.chain.rates.max())
    report = trace_capacity_identity(chain, nu, F, G1, G2, trace=trace)
    dev = max(trace.residual, schur_dev, report.worst_deviation)
    ok = trace.residual <= TRACE_TOL and schur_dev <= TRACE_TOL and report.passed
    return ok, dev, f"|F| = {len(F)}"


def first_return_suite(case: RandomChain, rng: np.random.Generator):
    """Holding rate and jump law of the trace from first-step systems"""
    chain = case.chain
    if chain.n < 3:
        return True, 0.0, "skipped below 3 states"
    size = int(rng.integers(2, chain.n))
    F = [int(i) for i in rng.choice(chain.n, size=size, replace=False)]
    report = first_return_check(chain, F, F[0])
    return report.max_deviation <= G02_TOL, report.max_deviation, f"eta = {F[0]}"


def hitting_suite(case: RandomChain, rng: np.random.Generator):
    """Linear-system hitting time against nu(f) / Cap"""
    F, rest = _random_subsets(case.chain.n, rng, 2)
    eta = rest[0]
    report = mean_hitting_time(case.chain, eta, F, nu=case.nu)
    return report.deviation <= ANTON_TOL, report.deviation, f"E[H] = {report.value:.17g}"


def occupation_suite(case: RandomChain, rng: np.random.Generator):
    """Occupation identity for a random mean-zero V and its bound"""
    chain = case.chain
    V = rng.normal(0.0, 1.0, chain.n)
    xi, eta = (int(i) for i in rng.choice(chain.n, size=2, replace=False))
    report = occupation_identity_check(chain, V, xi, eta, OCCUPATION_T, nu=case.nu,
                                       support=range(chain.n))
    return report.passed, report.deviation, f"slack {report.slack:.3g}"


SUITES: Dict[str, Callable] = {
    "capacity": capacity_suite,
    "trace": trace_suite,
    "first_return": first_return_suite,
    "hitting": hitting_suite,
    "occupation": occupation_suite,
}


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def write_reproducer(case: RandomChain, suite: str, detail: str, out_dir: str) -> str:
    """Chain JSON plus the seed that drew it"""
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.join(out_dir, f"repro_{suite}_{case.seed.base_seed}_{case.seed.replica}")
    save_chain(case.chain, stem + "_chain.json")
    with open(stem + ".json", 'w') as f:
        json.dump({
            'suite': suite,
            'base_seed': case.seed.base_seed,
            'replica': case.seed.replica,
            'kind': case.kind,
            'chain_file': os.path.basename(stem + "_chain.json"),
            'detail': detail,
        }, f, indent=2)
    return stem + ".json"


def run_case(case: RandomChain, suites: Sequence[str], out_dir: Optional[str] = None) -> List[SuiteOutcome]:
    outcomes = []
    for k, name in enumerate(suites):
        sequence = np.random.SeedSequence(case.seed.base_seed, spawn_key=(case.seed.replica, k))
        rng = np.random.Generator(np.random.Philox(sequence))
        try:
            ok, dev, detail = SUITES[name](case, rng)
        except MetastabilityError as e:
            ok, dev, detail = False, float("inf"), f"{type(e).__name__}: {e}"
        outcome = SuiteOutcome(name, case.seed, case.chain.n, bool(ok), float(dev), detail)
        if not ok:
            logger.warning("suite %s failed on replica %d: %s", name, case.seed.replica, detail)
            if out_dir is not None:
                outcome.reproducer = write_reproducer(case, name, detail, out_dir)
        outcomes.append(outcome)
    return outcomes


def make_case(seed: SeedSpec, n: int) -> RandomChain:
    rng, _ = seed.generators()
    kind = "path" if seed.replica % 3 == 2 else "graph"
    chain = random_reversible_chain(n, rng, path=(kind == "path"))
    return RandomChain(chain, stationary_measure(chain), seed, kind)


@dataclass
class VerifySummary:
    outcomes: List[SuiteOutcome] = field(default_factory=list)

    @property
    def failures(self) -> List[SuiteOutcome]:
        return [o for o in self.outcomes if not o.passed]

    @property
    def passed(self) -> bool:
        return not self.failures

    def by_suite(self) -> Dict[str, List[SuiteOutcome]]:
        out = {}
        for o in self.outcomes:
            out.setdefault(o.suite, []).append(o)
        return out

    def worst(self, suite: str) -> float:
        return max((o.deviation for o in self.outcomes if o.suite == suite), default=0.0)


def verify_suite(seed: int, sizes: Sequence[int] = (4, 8, 16, 32), chains: int = 50,
                 suites: Optional[Sequence[str]] = None,
                 out_dir: Optional[str] = None) -> VerifySummary:
    """
    Run every suite on ``chains`` random reversible chains; chain k has
    sizes[k % len(sizes)] states and is drawn from replica k of ``seed``.
    """
    suites = list(suites or SUITES)
    summary = VerifySummary()
    for k in range(chains):
        case = make_case(SeedSpec(seed, k), int(sizes[k % len(sizes)]))
        summary.outcomes.extend(run_case(case, suites, out_dir))
    logger.debug("verification: %d outcomes, %d failures",
                 len(summary.outcomes), len(summary.failures))
    return summary


def perturbed(case: RandomChain, factor: float = 1.5) -> RandomChain:
    """Scale one rate so detailed balance fails"""
    rates = np.array(case.chain.rates)
    i, j = np.argwhere(rates > 0)[0]
    rates[i, j] *= factor
    chain = chain_from_matrix(case.chain.space, rates)
    return RandomChain(chain, stationary_measure(chain), case.seed, case.kind)


def model_capacity_check(chain: Chain, nu: ProbabilityMeasure, F, G) -> float:
    """Largest relative gap between the capacity routes on a built model"""
    d = capacity(chain, nu, F, G, check=False).value
    f = capacity_flux(chain, nu, F, G, check=False).value
    v = capacity_variational(chain, nu, F, G, check=False).value
    return max(_rel(d, f), _rel(d, v))


if __name__ == "__main__":
    import sys

    base = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    summary = verify_suite(base)
    print("=== Verification ===")
    for name, outcomes in summary.by_suite().items():
        failed = sum(not o.passed for o in outcomes)
        mark = '✓' if failed == 0 else '✗'
        print(f"  {mark} {name}: {len(outcomes) - failed}/{len(outcomes)} "
              f"(worst deviation {summary.worst(name):.3g})")
    sys.exit(0 if summary.passed else 1)
