#!/usr/bin/env python3
"""
Potential theory on finite reversible chains
Equilibrium potentials, capacities by several routes, mean hitting times,
trace identities and the occupation-time identity
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Hashable, Iterable, List, Optional

import numpy as np
from scipy.integrate import solve_ivp

from errors import (
    EmptySubset,
    NotBirthDeath,
    NotMeanZero,
    ODEStepFailure,
    OverlappingSets,
    StateInTargetSet,
)
from markov_chain import (
    Chain,
    ProbabilityMeasure,
    apply_generator,
    dirichlet_form,
    generator_matrix,
    lu_solve_checked,
    require_reversible,
    stationary_measure,
)
from watched_chain import TraceResult, r_F, trace_chain

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-9            # relative to the largest rate
CLAMP_TOL = 1e-12
ODE_ATOL = 1e-9
ODE_RTOL = 1e-10
IDENTITY_TOL = 1e-8
OCCUPATION_TOL = 1e-6


@dataclass
class HarmonicFunction:
    """f(eta) = P_eta[H_F < H_G]"""

    values: np.ndarray
    F: List[Hashable]
    G: List[Hashable]
    residual: float
    clamped: float = 0.0

    def __getitem__(self, i):
        return self.values[i]


@dataclass
class CapacityReport:
    value: float
    route: str
    residual: float = 0.0
    F: List[Hashable] = field(default_factory=list)
    G: List[Hashable] = field(default_factory=list)


def _disjoint_pair(chain: Chain, F: Iterable, G: Iterable):
    F, G = list(F), list(G)
    if not F or not G:
        raise EmptySubset("both sets must be nonempty")
    Fi, Gi = chain.space.indices(F), chain.space.indices(G)
    common = np.intersect1d(Fi, Gi)
    if common.size:
        raise OverlappingSets(
            f"sets share {[chain.space.label(int(i)) for i in common[:5]]}")
    return Fi, Gi


def equilibrium_potential(chain: Chain, F: Iterable, G: Iterable) -> HarmonicFunction:
    """
    Solve Lf = 0 off F and G with f = 1 on F, f = 0 on G.

    Only the interior system is assembled; boundary values enter the right
    hand side.
    """
    Fi, Gi = _disjoint_pair(chain, F, G)
    n = chain.n
    f = np.zeros(n)
    f[Fi] = 1.0
    interior = np.setdiff1d(np.arange(n), np.union1d(Fi, Gi))
    if interior.size:
        R = chain.rates
        lam = R.sum(axis=1)
        A = np.diag(lam[interior]) - R[np.ix_(interior, interior)]
        b = R[np.ix_(interior, Fi)].sum(axis=1)
        f[interior] = lu_solve_checked(A, b, "equilibrium potential")

    clamped = float(max(0.0, -f.min(), f.max() - 1.0))
    if clamped > CLAMP_TOL:
        logger.warning("equilibrium potential left [0, 1] by %.3g; clamped", clamped)
    f = np.clip(f, 0.0, 1.0)

    residual = float(np.abs(apply_generator(chain, f)[interior]).max()) if interior.size else 0.0
    if residual > RESIDUAL_TOL * chain.max_rate:
        logger.warning("equilibrium potential residual %.3g", residual)
    return HarmonicFunction(f, [chain.space.label(int(i)) for i in Fi],
                            [chain.space.label(int(i)) for i in Gi], residual, clamped)


def capacity(chain: Chain, nu: ProbabilityMeasure, F: Iterable, G: Iterable,
             check: bool = True) -> CapacityReport:
    """Cap(F, G) = D(f_{F,G}), speedup included"""
    if check:
        require_reversible(chain, nu)
    f = equilibrium_potential(chain, F, G)
    value = dirichlet_form(chain, nu, f.values, check=False)
    return CapacityReport(value, "dirichlet", f.residual, f.F, f.G)


def capacity_variational(chain: Chain, nu: ProbabilityMeasure, F: Iterable, G: Iterable,
                         check: bool = True) -> CapacityReport:
    """
    Minimize D(f) over f = 1 on F, f = 0 on G.

    D is written with the symmetrized conductances c(a, b) and its interior
    normal equations are solved directly, without the generator.
    """
    if check:
        require_reversible(chain, nu)
    Fi, Gi = _disjoint_pair(chain, F, G)
    flux = nu.weights[:, None] * chain.effective_rates
    c = 0.5 * (flux + flux.T)
    laplacian = np.diag(c.sum(axis=1)) - c
    n = chain.n
    f = np.zeros(n)
    f[Fi] = 1.0
    interior = np.setdiff1d(np.arange(n), np.union1d(Fi, Gi))
    residual = 0.0
    if interior.size:
        A = laplacian[np.ix_(interior, interior)]
        b = c[np.ix_(interior, Fi)].sum(axis=1)
        f[interior] = lu_solve_checked(A, b, "variational normal equations")
        residual = float(np.abs(laplacian[interior] @ f).max())
    diffs = f[None, :] - f[:, None]
    value = 0.5 * float((c * diffs ** 2).sum())
    return CapacityReport(value, "variational", residual,
                          [chain.space.label(int(i)) for i in Fi],
                          [chain.space.label(int(i)) for i in Gi])


def capacity_flux(chain: Chain, nu: ProbabilityMeasure, F: Iterable, G: Iterable,
                  check: bool = True) -> CapacityReport:
    """Equilibrium flux sum_{a in F, b} nu(a) R(a, b) P_b[H_G < H_F]"""
    if check:
        require_reversible(chain, nu)
    F, G = list(F), list(G)
    escape = equilibrium_potential(chain, G, F)
    Fi = chain.space.indices(F)
    w = nu.weights[Fi]
    value = float((w[:, None] * chain.effective_rates[Fi] * escape.values[None, :]).sum())
    return CapacityReport(value, "flux", escape.residual, escape.G, escape.F)


def path_conductance(chain: Chain, nu: ProbabilityMeasure, i: int, j: int) -> float:
    """Series conductance between path positions i < j"""
    z = np.arange(i, j)
    edge = nu.weights[z] * chain.effective_rates[z, z + 1]
    return float(1.0 / np.sum(1.0 / edge))


def bd_capacity_closed_form(chain: Chain, nu: ProbabilityMeasure, x, y) -> CapacityReport:
    """Cap(x, y) = [sum_{z=x}^{y-1} (nu(z) R(z, z+1))^-1]^-1 on a path graph"""
    if not chain.is_path_graph():
        raise NotBirthDeath("closed-form capacity needs nearest-neighbour rates only")
    i, j = sorted((chain.space.index(x), chain.space.index(y)))
    if i == j:
        raise OverlappingSets("the two states coincide")
    return CapacityReport(path_conductance(chain, nu, i, j), "closed-form-1d", 0.0,
                          [chain.space.label(i)], [chain.space.label(j)])


# ---------------------------------------------------------------------------
# Hitting times
# ---------------------------------------------------------------------------

def hitting_times(chain: Chain, target: Iterable) -> np.ndarray:
    """E_eta[H_target] for every state (zero on the target)"""
    Ti = chain.space.indices(target)
    if Ti.size == 0:
        raise EmptySubset("target set is empty")
    n = chain.n
    h = np.zeros(n)
    interior = np.setdiff1d(np.arange(n), Ti)
    if interior.size:
        L = generator_matrix(chain)
        h[interior] = lu_solve_checked(-L[np.ix_(interior, interior)],
                                       np.ones(interior.size), "hitting-time system")
    return h


@dataclass
class HittingTimeReport:
    value: float
    capacity_value: Optional[float]
    deviation: Optional[float]


def capacity_hitting_time(chain: Chain, nu: ProbabilityMeasure, eta, F: Iterable) -> float:
    """nu(f_{eta,F}) / Cap(eta, F)"""
    f = equilibrium_potential(chain, [eta], F)
    cap = dirichlet_form(chain, nu, f.values, check=False)
    return float(np.dot(nu.weights, f.values) / cap)


def mean_hitting_time(chain: Chain, eta, F: Iterable,
                      nu: Optional[ProbabilityMeasure] = None) -> HittingTimeReport:
    """
    E_eta[H_F] from the linear system Lh = -1 off F, and, when the chain is
    reversible, from the capacity formula.
    """
    F = list(F)
    if eta in set(F):
        raise StateInTargetSet(f"{eta!r} already lies in the target set")
    value = float(hitting_times(chain, F)[chain.space.index(eta)])
    if nu is None:
        nu = stationary_measure(chain)
    try:
        require_reversible(chain, nu)
    except ValueError:
        return HittingTimeReport(value, None, None)
    by_capacity = capacity_hitting_time(chain, nu, eta, F)
    return HittingTimeReport(value, by_capacity, abs(by_capacity - value) / value)


# ---------------------------------------------------------------------------
# Trace identities
# ---------------------------------------------------------------------------

@dataclass
class TraceIdentityReport:
    """Capacity, rate and hitting-time identities between a chain and its trace"""

    cap: float
    cap_trace: float
    nu_F: float
    scaling_deviation: float
    potential_deviation: float
    set_rate: float
    reverse_set_rate: float
    balance_deviation: float
    escape_flux: float
    flux_deviation: float
    union_deviation: Optional[float]
    hitting_formula: Dict[Hashable, float]
    hitting_trace_direct: Dict[Hashable, float]
    hitting_trace_capacity: Dict[Hashable, float]
    hitting_deviation: float
    derivations_disagree: bool
    worst_deviation: float
    tol: float = IDENTITY_TOL

    @property
    def passed(self) -> bool:
        return self.worst_deviation <= self.tol


def _rel(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def trace_capacity_identity(chain: Chain, nu: ProbabilityMeasure, F: Iterable,
                            G1: Iterable, G2: Iterable,
                            trace: Optional[TraceResult] = None) -> TraceIdentityReport:
    """
    Check on the trace chain on F, for disjoint G1, G2 inside F:

      P_a[H_G1 < H_G2] on the trace = the full-chain value, a in F
      Cap_F(G1, G2) = Cap(G1, G2) / nu(F)
      nu(G1) r_F(G1, G2) = nu(G2) r_F(G2, G1)
      nu(G1) r_F(G1, G2) = sum_{a in G1, b} nu(a) R(a, b) P_b[H_G2 < H_{F - G2}]
      nu(G1) r_F(G1, G2) = Cap(G1, G2) when F = G1 + G2
      E^F_eta[H_G2] = sum_{b in F} P_b[H_eta < H_G2] nu(b) / Cap(eta, G2), eta in G1

    The last identity is evaluated three ways: the stated formula, the
    trace chain's own hitting-time system and the capacity formula on the
    trace chain. A disagreement between them is flagged in the report.
    """
    F, G1, G2 = list(F), list(G1), list(G2)
    require_reversible(chain, nu)
    Fset = set(F)
    if not (set(G1) <= Fset and set(G2) <= Fset):
        raise OverlappingSets("G1 and G2 must lie inside F")
    _disjoint_pair(chain, G1, G2)
    if trace is None:
        trace = trace_chain(chain, F, nu=nu)

    cap = capacity(chain, nu, G1, G2, check=False).value
    cap_trace = capacity(trace.chain, trace.conditioned, G1, G2).value
    nu_F = nu.mass(F)
    scaling_dev = _rel(cap_trace, cap / nu_F)

    F_idx = chain.space.indices(F)
    on_trace = equilibrium_potential(trace.chain, G1, G2).values
    on_chain = equilibrium_potential(chain, G1, G2).values[chain.space.indices(trace.space.labels)]
    potential_dev = float(np.abs(on_trace - on_chain).max())

    nu_G1, nu_G2 = nu.mass(G1), nu.mass(G2)
    rate12 = nu_G1 * r_F(trace, G1, G2)
    rate21 = nu_G2 * r_F(trace, G2, G1)
    balance_dev = _rel(rate12, rate21)

    rest = [s for s in F if s not in set(G2)]
    hit = equilibrium_potential(chain, G2, rest).values
    Gi = chain.space.indices(G1)
    escape_flux = float((nu.weights[Gi, None] * chain.effective_rates[Gi] * hit[None, :]).sum())
    flux_dev = _rel(rate12, escape_flux)

    union_dev = None
    if Fset == set(G1) | set(G2):
        union_dev = _rel(rate12, cap)

    direct = hitting_times(trace.chain, G2)
    formula, trace_direct, trace_capacity = {}, {}, {}
    hitting_dev = 0.0
    disagree = False
    for eta in G1:
        f = equilibrium_potential(chain, [eta], G2)
        cap_eta = dirichlet_form(chain, nu, f.values, check=False)
        stated = float(np.dot(f.values[F_idx], nu.weights[F_idx]) / cap_eta)
        own = float(direct[trace.space.index(eta)])
        via_capacity = capacity_hitting_time(trace.chain, trace.conditioned, eta, G2)
        formula[eta], trace_direct[eta], trace_capacity[eta] = stated, own, via_capacity
        dev = max(_rel(stated, own), _rel(stated, via_capacity))
        hitting_dev = max(hitting_dev, dev)
        if _rel(own, via_capacity) <= IDENTITY_TOL < dev:
            disagree = True
    if disagree:
        logger.warning("stated trace hitting formula departs from both trace-chain routes")

    worst = max([scaling_dev, potential_dev, balance_dev, flux_dev, hitting_dev]
                + ([union_dev] if union_dev is not None else []))
    return TraceIdentityReport(cap, cap_trace, nu_F, scaling_dev, potential_dev, rate12, rate21,
                               balance_dev, escape_flux, flux_dev, union_dev, formula, trace_direct,
                               trace_capacity, hitting_dev, disagree, worst)


# ---------------------------------------------------------------------------
# Kolmogorov equations and the occupation identity
# ---------------------------------------------------------------------------

def _integrate(L: np.ndarray, u0: np.ndarray, forcing: np.ndarray, t: float,
               atol: float) -> np.ndarray:
    if t == 0:
        return u0.copy()
    sol = solve_ivp(lambda _, u: L @ u + forcing, (0.0, t), u0, method="RK45",
                    atol=atol, rtol=ODE_RTOL)
    if not sol.success:
        raise ODEStepFailure(f"Kolmogorov integration failed: {sol.message}")
    return sol.y[:, -1]


def integrate_forward(chain: Chain, V, t: float, atol: float = ODE_ATOL) -> np.ndarray:
    """u(t) with u' = Lu + V, u(0) = 0, i.e. E_xi[int_0^t V(eta_s) ds] for every xi"""
    V = np.asarray(V, dtype=float)
    return _integrate(generator_matrix(chain), np.zeros(chain.n), V, t, atol)


def semigroup_action(chain: Chain, h, t: float, atol: float = ODE_ATOL) -> np.ndarray:
    """e^{tL} h without forming the exponential"""
    h = np.asarray(h, dtype=float)
    return _integrate(generator_matrix(chain), h, np.zeros(chain.n), t, atol)


def hitting_functional(chain: Chain, V, eta) -> np.ndarray:
    """h(xi) = E_xi[int_0^{H_eta} V], from Lh = -V off eta, h(eta) = 0"""
    V = np.asarray(V, dtype=float)
    e = chain.space.index(eta)
    interior = np.delete(np.arange(chain.n), e)
    L = generator_matrix(chain)
    h = np.zeros(chain.n)
    h[interior] = lu_solve_checked(-L[np.ix_(interior, interior)], V[interior],
                                   "hitting functional")
    return h


@dataclass
class OccupationReport:
    lhs: float
    rhs: float
    deviation: float
    max_abs_lhs: float
    bound: Optional[float]
    slack: Optional[float]
    passed: bool


def occupation_identity_check(chain: Chain, V, xi, eta, t: float,
                              nu: Optional[ProbabilityMeasure] = None,
                              center: bool = True, support: Optional[Iterable] = None,
                              tol: float = OCCUPATION_TOL) -> OccupationReport:
    """
    E_xi[int_0^t V] = h(xi) - (e^{tL} h)(xi) for mean-zero V, with h the
    hitting functional at eta. When V vanishes outside ``support`` (the
    support of V by default) the bound
    max_xi |E_xi[int_0^t V]| <= 2 |V|_inf max_{z in support} E_z[H_eta]
    is checked as well.
    """
    if nu is None:
        nu = stationary_measure(chain)
    V = np.asarray(V, dtype=float)
    mean = float(np.dot(nu.weights, V))
    if center:
        V = V - mean
    elif abs(mean) > 1e-12:
        raise NotMeanZero(f"V has mean {mean:.3g} under the stationary measure")

    x = chain.space.index(xi)
    u = integrate_forward(chain, V, t)
    h = hitting_functional(chain, V, eta)
    evolved = semigroup_action(chain, h, t)
    lhs = float(u[x])
    rhs = float(h[x] - evolved[x])
    deviation = abs(lhs - rhs)
    max_abs = float(np.abs(u).max())

    if support is None:
        support_idx = np.flatnonzero(V != 0)
    else:
        support_idx = chain.space.indices(support)
        if np.any(np.delete(V, support_idx) != 0):
            logger.warning("V does not vanish outside the given support; bound skipped")
            support_idx = None
    bound = slack = None
    if support_idx is not None:
        if support_idx.size == 0:
            bound = 0.0
        else:
            times = hitting_times(chain, [eta])
            bound = 2.0 * float(np.abs(V).max()) * float(times[support_idx].max())
        slack = bound - max_abs
    passed = deviation <= tol and (slack is None or slack >= -tol)
    return OccupationReport(lhs, rhs, deviation, max_abs, bound, slack, passed)
