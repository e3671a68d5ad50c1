#!/usr/bin/env python3
"""
Model families
Condensed zero-range process on kappa sites and the birth-death process
with potential H, built exactly with measures, wells and limit rates
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate
from scipy.special import beta as beta_fn

from errors import (
    HVanishesOffZeros,
    KappaNotTwo,
    OverlappingNeighborhoods,
    QuadratureFailure,
    SpecInvalid,
    StateSpaceTooLarge,
)
from markov_chain import (
    MAX_STATES,
    Chain,
    ProbabilityMeasure,
    StateSpace,
    chain_from_matrix,
    measure_from_weights,
    require_reversible,
    with_speedup,
)
from meta_analysis import (
    LimitChain,
    WellGeometry,
    WellPartition,
    build_geometry,
    inter_well_rates,
    limit_chain,
    make_partition,
)
from potential import capacity
from watched_chain import TraceResult, trace_chain

logger = logging.getLogger(__name__)

THETA_SPREAD_TOL = 1e-10
SERIES_TOL = 1e-10
QUAD_TOL = 1e-10
H_FLOOR = 1e-14
GRID_EPS = 1e-9


def default_beta(alpha: float, kappa: int) -> float:
    """Well-radius exponent keeping ell^{2 alpha (kappa-1) + 1} / N^{1+alpha} small"""
    return min(0.2, (1.0 + alpha) / (2.0 * (2.0 * alpha * (kappa - 1) + 1.0)))


def well_radius(N: int, beta: float) -> int:
    """ceil(N^beta), robust to N^beta landing a hair above an integer"""
    return max(1, math.ceil(round(N ** beta, 9)))


# ---------------------------------------------------------------------------
# Zero-range process
# ---------------------------------------------------------------------------

@dataclass
class ZeroRangeSpec:
    kappa: int
    alpha: float
    N: int
    ell: Optional[int] = None
    beta: Optional[float] = None

    def __post_init__(self):
        if self.kappa < 2:
            raise SpecInvalid(f"kappa must be at least 2, got {self.kappa}")
        if not self.alpha > 1:
            raise SpecInvalid(f"alpha must exceed 1, got {self.alpha}")
        if self.N < 1:
            raise SpecInvalid(f"N must be positive, got {self.N}")
        if self.ell is not None and self.ell < 1:
            raise SpecInvalid(f"ell must be a positive integer, got {self.ell}")
        if self.beta is not None and not self.beta > 0:
            raise SpecInvalid(f"beta must be positive, got {self.beta}")

    @property
    def radius(self) -> int:
        if self.ell is not None:
            return self.ell
        beta = self.beta if self.beta is not None else default_beta(self.alpha, self.kappa)
        return well_radius(self.N, beta)

    @property
    def ln_ratio(self) -> float:
        """ell^{2 alpha (kappa-1) + 1} / N^{1+alpha}"""
        return self.radius ** (2 * self.alpha * (self.kappa - 1) + 1) / self.N ** (1 + self.alpha)

    @property
    def n_states(self) -> int:
        return math.comb(self.N + self.kappa - 1, self.kappa - 1)


def jump_rate(n: int, alpha: float) -> float:
    """g(n) = (n / (n-1))^alpha for n >= 2, g(1) = 1"""
    return 1.0 if n == 1 else (n / (n - 1)) ** alpha


def compositions(N: int, kappa: int):
    """Compositions of N into kappa nonnegative parts, (N, 0, ...) first"""
    if kappa == 1:
        yield (N,)
        return
    for first in range(N, -1, -1):
        for rest in compositions(N - first, kappa - 1):
            yield (first,) + rest


def zr_measure(N: int, kappa: int, alpha: float,
               space: Optional[StateSpace] = None) -> Tuple[ProbabilityMeasure, float]:
    """
    nu(eta) = Z^-1 N^alpha / prod_x p(eta(x)) with p(0) = 1, p(n) = n^alpha.
    Z is the sum of the unnormalized weights, N^alpha factor included.
    """
    if space is None:
        space = StateSpace(tuple(compositions(N, kappa)))
    occupied = np.array(space.labels, dtype=float)
    with np.errstate(divide="ignore"):
        logs = np.where(occupied > 0, np.log(occupied), 0.0)
    log_w = alpha * math.log(N) - alpha * logs.sum(axis=1)
    top = log_w.max()
    Z = float(math.exp(top) * np.exp(log_w - top).sum())
    return measure_from_weights(space, np.exp(log_w - top)), Z


@dataclass
class ThetaReport:
    """Time scale from the capacity between one well and the others"""

    theta: float
    theta_full: float
    inverse_caps: Dict[Hashable, float]
    spread: float
    normalization: str


@dataclass
class ModelInstance:
    """A built model: the chain to analyse and everything around it"""

    name: str
    N: int
    ell: int
    base_chain: Chain
    chain: Chain
    nu: ProbabilityMeasure
    partition: WellPartition
    geometry: WellGeometry
    Z: float
    trace: TraceResult
    spec: object
    theta: Optional[ThetaReport] = None
    extras: Dict[str, float] = field(default_factory=dict)

    def triple(self):
        return self.chain, self.nu, self.partition


def zr_build(spec: ZeroRangeSpec, max_states: int = MAX_STATES) -> ModelInstance:
    """
    Zero-range chain on compositions of N into kappa parts with exact nu,
    wells E^x = {eta(x) >= N - ell}, anchors eta(x) = N and gates
    eta(x) = N - ell - 1, eta(y) = ell + 1 at the smallest y != x.
    The returned chain is unspeeded; see zr_theta.
    """
    kappa, alpha, N = spec.kappa, spec.alpha, spec.N
    ell = spec.radius
    if not N - ell > ell:
        raise SpecInvalid(f"wells overlap: N - ell = {N - ell} must exceed ell = {ell}")
    count = spec.n_states
    if count > max_states:
        raise StateSpaceTooLarge(
            f"{count} configurations exceed the limit of {max_states}; use a smaller N or kappa")

    states = list(compositions(N, kappa))
    space = StateSpace(tuple(states))
    index = {s: i for i, s in enumerate(states)}
    n = len(states)
    R = np.zeros((n, n))
    g = [0.0] + [jump_rate(k, alpha) for k in range(1, N + 1)]
    for i, eta in enumerate(states):
        for x in range(kappa):
            if eta[x] == 0:
                continue
            for y in range(kappa):
                if y == x:
                    continue
                target = list(eta)
                target[x] -= 1
                target[y] += 1
                R[i, index[tuple(target)]] = g[eta[x]]
    chain = chain_from_matrix(space, R, max_states=max_states)
    nu, Z = zr_measure(N, kappa, alpha, space)
    require_reversible(chain, nu)

    wells = {x + 1: [s for s in states if s[x] >= N - ell] for x in range(kappa)}
    partition = make_partition(space, wells)
    if not partition.delta:
        raise SpecInvalid(f"no configurations between the wells for N={N}, ell={ell}")

    anchors, gates = {}, {}
    delta = set(partition.delta)
    for x in range(kappa):
        anchor = [0] * kappa
        anchor[x] = N
        anchors[x + 1] = tuple(anchor)
        gate = [0] * kappa
        gate[x] = N - ell - 1
        gate[0 if x != 0 else 1] = ell + 1
        gates[x + 1] = tuple(gate) if tuple(gate) in delta else None

    trace = trace_chain(chain, partition.union(), nu=nu)
    geometry = build_geometry(chain, nu, partition, anchors, gates, trace)
    logger.debug("zero-range kappa=%d N=%d ell=%d: %d states, Z=%.6g", kappa, N, ell, n, Z)
    return ModelInstance("zr", N, ell, chain, chain, nu, partition, geometry, Z, trace, spec,
                         extras={"nu_delta": nu.mass(partition.delta)})


def zr_theta(model: ModelInstance, normalization: str = "trace") -> ModelInstance:
    """
    theta from Cap(E^x, other wells) on the unspeeded chain.

    With normalization "trace" the capacity is taken for the chain watched on
    the wells, Cap / nu(wells), and the sped-up chain has r(x, y) equal to
    kappa / (kappa - 1) exactly. "full" uses 1 / Cap itself. Both values are
    reported; the returned model carries the chosen speedup.
    """
    chain, nu, partition = model.base_chain, model.nu, model.partition
    inverse = {}
    for x in partition.labels:
        cap = capacity(chain, nu, partition.wells[x], partition.complement(x), check=False)
        inverse[x] = 1.0 / cap.value
    values = np.array(list(inverse.values()))
    spread = float((values.max() - values.min()) / values.max())
    if spread > THETA_SPREAD_TOL:
        logger.warning("1/Cap varies across wells by %.3g", spread)
    theta_full = float(values.mean())
    wells_mass = nu.mass(partition.union())
    if normalization == "trace":
        theta = theta_full * wells_mass
    elif normalization == "full":
        theta = theta_full
    else:
        raise SpecInvalid(f"unknown theta normalization {normalization!r}")
    report = ThetaReport(theta, theta_full, inverse, spread, normalization)
    model.theta = report
    model.chain = with_speedup(chain, theta)
    model.extras["theta"] = theta
    model.extras["theta_over_scale"] = theta / model.N ** (1 + model.spec.alpha)
    return model


@dataclass
class ZeroRangeLimits:
    well_mass: float
    nu_delta: float
    ln_ratio: float
    Z_limit: float


def zr_limits(spec: ZeroRangeSpec) -> ZeroRangeLimits:
    """
    Values the family approaches as N grows: nu(E^x) -> 1/kappa,
    nu(Delta) -> 0 and Z -> kappa (1 + sum_k k^-alpha)^(kappa-1).
    """
    series = 1.0 + zeta_series(spec.alpha)
    return ZeroRangeLimits(1.0 / spec.kappa, 0.0, spec.ln_ratio,
                           spec.kappa * series ** (spec.kappa - 1))


# ---------------------------------------------------------------------------
# Birth-death process
# ---------------------------------------------------------------------------

def zeta_series(alpha: float, tol: float = SERIES_TOL) -> float:
    """
    sum_{k>=1} k^-alpha, summed up to K and closed with the Euler-Maclaurin
    tail; K grows until the first neglected correction is below tol.
    """
    K = 16
    while alpha * (alpha + 1) * (alpha + 2) * K ** (-alpha - 3) / 720.0 > tol:
        K *= 2
    k = np.arange(1, K, dtype=float)
    head = float(np.sum(k ** -alpha))
    tail = K ** (1 - alpha) / (alpha - 1) + 0.5 * K ** -alpha + alpha * K ** (-alpha - 1) / 12.0
    return head + tail


@dataclass
class BirthDeathSpec:
    """
    Birth-death process on a grid of [a, b] with potential H.

    H is either a global function or |x - a_i|^alpha_i near each zero
    (within ``neighborhood``) and ``H_outside`` elsewhere. ``lam`` defaults
    to 1; ``rate_scale`` to N^{1+alpha}.
    """

    N: int
    zeros: Sequence[float]
    exponents: Sequence[float]
    interval: Tuple[float, float] = (0.0, 1.0)
    H: Optional[Callable[[float], float]] = None
    H_outside: Optional[Callable[[float], float]] = None
    neighborhood: Optional[float] = None
    lam: Optional[Callable[[float], float]] = None
    ell: Optional[int] = None
    beta: Optional[float] = None
    rate_scale: Optional[float] = None

    def __post_init__(self):
        a, b = self.interval
        zeros = list(self.zeros)
        if not a < b:
            raise SpecInvalid(f"interval ({a}, {b}) is empty")
        if len(zeros) != len(self.exponents) or not zeros:
            raise SpecInvalid("one exponent per zero is required")
        if any(z2 <= z1 for z1, z2 in zip(zeros, zeros[1:])):
            raise SpecInvalid("zeros must be strictly increasing")
        if zeros[0] < a or zeros[-1] > b:
            raise SpecInvalid("zeros must lie in the interval")
        if any(e <= 0 for e in self.exponents):
            raise SpecInvalid("exponents must be positive")
        if not self.alpha > 1:
            raise SpecInvalid(f"the largest exponent must exceed 1, got {self.alpha}")
        if len(self.deep_zeros) < 2:
            raise SpecInvalid("at least two zeros must carry the largest exponent")
        if self.neighborhood is not None:
            gaps = np.diff(zeros)
            if gaps.size and gaps.min() <= 2 * self.neighborhood:
                raise OverlappingNeighborhoods(
                    f"neighbourhoods of radius {self.neighborhood} around the zeros intersect")
            if self.neighborhood < 1.0 / self.N:
                logger.warning("zero neighbourhoods are narrower than the grid spacing")
        if self.H is None and self.H_outside is None:
            raise SpecInvalid("either H or H_outside must be given")
        if self.N < 1:
            raise SpecInvalid(f"N must be positive, got {self.N}")

    @property
    def alpha(self) -> float:
        return float(max(self.exponents))

    @property
    def deep_zeros(self) -> List[float]:
        """b_1 < ... < b_kappa: zeros whose exponent is alpha"""
        top = max(self.exponents)
        return [z for z, e in zip(self.zeros, self.exponents) if e == top]

    @property
    def kappa(self) -> int:
        return len(self.deep_zeros)

    @property
    def radius(self) -> int:
        if self.ell is not None:
            return self.ell
        beta = self.beta if self.beta is not None else default_beta(self.alpha, 2)
        return well_radius(self.N, beta)

    @property
    def scale(self) -> float:
        return self.rate_scale if self.rate_scale is not None else float(self.N) ** (1 + self.alpha)

    def sigma(self, z: float) -> int:
        """1 for a zero on the boundary of the interval, 2 inside"""
        a, b = self.interval
        return 1 if (abs(z - a) < GRID_EPS or abs(z - b) < GRID_EPS) else 2

    def potential(self, x: float) -> float:
        if self.H is not None:
            return float(self.H(x))
        for z, e in zip(self.zeros, self.exponents):
            if abs(x - z) < self.neighborhood:
                return abs(x - z) ** e
        return float(self.H_outside(x))

    def rate_profile(self, x: float) -> float:
        return 1.0 if self.lam is None else float(self.lam(x))


def bd_grid(spec: BirthDeathSpec) -> np.ndarray:
    """The union of the blocks G_{N,0}, ..., G_{N,m} in increasing order"""
    a, b = spec.interval
    N = spec.N
    zeros = list(spec.zeros)
    points = []

    k0 = 0
    while not a > zeros[0] - (k0 + 1) / N + GRID_EPS / N:
        k0 += 1
    points += [zeros[0] - j / N for j in range(k0, -1, -1)]

    for left, right in zip(zeros[:-1], zeros[1:]):
        k = 0
        while not left + (k + 1) / N > right - (k + 1) / N + GRID_EPS / N:
            k += 1
        points += [left + j / N for j in range(1, k + 1)]
        points += [right - j / N for j in range(k, -1, -1)]

    km = 0
    while not zeros[-1] + (km + 1) / N > b + GRID_EPS / N:
        km += 1
    points += [zeros[-1] + j / N for j in range(1, km + 1)]

    grid = np.array(sorted(points))
    keep = np.concatenate(([True], np.diff(grid) > GRID_EPS / N))
    return grid[keep]


def _nearest(grid: np.ndarray, x: float) -> Optional[int]:
    i = int(np.argmin(np.abs(grid - x)))
    return i if abs(grid[i] - x) < GRID_EPS else None


def bd_build(spec: BirthDeathSpec, max_states: int = MAX_STATES) -> ModelInstance:
    """
    Birth-death chain: nu = 1/(Z H) off the zeros and N^alpha_i / Z at a_i;
    R(x, left) = scale lambda(x), R(x, right) = scale lambda(right) nu(right)/nu(x).
    Wells E^i = grid within ell/N of b_i, anchored at b_i, with gates at
    b_i +- (ell+1)/N (towards the inside of the interval).
    """
    grid = bd_grid(spec)
    n = grid.size
    if n > max_states:
        raise StateSpaceTooLarge(f"{n} grid points exceed the limit of {max_states}")
    N = spec.N
    zero_at = {}
    for z, e in zip(spec.zeros, spec.exponents):
        i = _nearest(grid, z)
        if i is not None:
            zero_at[i] = e

    log_w = np.empty(n)
    for i, x in enumerate(grid):
        if i in zero_at:
            log_w[i] = zero_at[i] * math.log(N)
        else:
            h = spec.potential(float(x))
            if not h > H_FLOOR:
                raise HVanishesOffZeros(f"H({x:.6g}) = {h:.3g} away from the zeros")
            log_w[i] = -math.log(h)
    top = log_w.max()
    Z = float(math.exp(top) * np.exp(log_w - top).sum())
    nu = measure_from_weights(StateSpace(tuple(float(x) for x in grid)), np.exp(log_w - top))
    space = nu.space

    lam = np.array([spec.rate_profile(float(x)) for x in grid])
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise SpecInvalid("lambda must be positive and finite on the grid")
    w = nu.weights
    R = np.zeros((n, n))
    i = np.arange(n - 1)
    R[i + 1, i] = spec.scale * lam[i + 1]
    R[i, i + 1] = spec.scale * lam[i + 1] * w[i + 1] / w[i]
    chain = chain_from_matrix(space, R, max_states=max_states)
    require_reversible(chain, nu)

    ell = spec.radius
    if min(np.diff(spec.deep_zeros)) <= 2 * ell / N:
        raise SpecInvalid(f"wells of radius {ell}/{N} around the deepest zeros overlap")
    wells, anchors, gates = {}, {}, {}
    a, b = spec.interval
    for k, z in enumerate(spec.deep_zeros, start=1):
        inside = np.flatnonzero(np.abs(grid - z) <= ell / N + GRID_EPS)
        wells[k] = [space.label(int(j)) for j in inside]
        anchors[k] = space.label(_nearest(grid, z))
        step = -1 if abs(z - b) < GRID_EPS else 1
        g = _nearest(grid, z + step * (ell + 1) / N)
        gates[k] = space.label(g) if g is not None else None
    partition = make_partition(space, wells)
    delta = set(partition.delta)
    gates = {k: (v if v in delta else None) for k, v in gates.items()}

    trace = trace_chain(chain, partition.union(), nu=nu)
    geometry = build_geometry(chain, nu, partition, anchors, gates, trace)
    extras = {
        "Z_over_scale": Z / float(N) ** spec.alpha,
        "nu_delta": nu.mass(partition.delta) if partition.delta else 0.0,
    }
    for k, z in enumerate(spec.deep_zeros, start=1):
        extras[f"nu_b{k}"] = nu[anchors[k]]
    return ModelInstance("bd", N, ell, chain, chain, nu, partition, geometry, Z, trace, spec,
                         extras=extras)


def _integral(f: Callable[[float], float], lo: float, hi: float) -> float:
    result = integrate.quad(f, lo, hi, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200,
                            full_output=1)
    if len(result) > 3:
        raise QuadratureFailure(f"quadrature on [{lo}, {hi}] failed: {result[3]}")
    value, error = result[0], result[1]
    if error > max(QUAD_TOL, QUAD_TOL * abs(value)) * 100:
        raise QuadratureFailure(f"quadrature error {error:.3g} on [{lo}, {hi}]")
    return float(value)


@dataclass
class BirthDeathLimits:
    m: Dict[int, float]
    m_total: float
    nu_anchor: float
    well_mass: Dict[int, float]

    def capacity(self, spec: BirthDeathSpec, lo: float, hi: float) -> float:
        """Limit capacity between two points lo < hi"""
        integral = _integral(lambda u: spec.potential(u) / spec.rate_profile(u), lo, hi)
        return 1.0 / (self.m_total * integral)


def bd_limits(spec: BirthDeathSpec) -> BirthDeathLimits:
    """m(b_i) = 1 + sigma_i sum_k k^-alpha and the limits built from it"""
    series = zeta_series(spec.alpha)
    m = {k: 1.0 + spec.sigma(z) * series for k, z in enumerate(spec.deep_zeros, start=1)}
    total = sum(m.values())
    return BirthDeathLimits(m, total, 1.0 / total, {k: v / total for k, v in m.items()})


def bd_limit_rates(spec: BirthDeathSpec) -> LimitChain:
    """r(i, i+1) = 1 / (m(b_i) int_{b_i}^{b_{i+1}} H / lambda) and symmetrically"""
    limits = bd_limits(spec)
    b = spec.deep_zeros
    k = len(b)
    r = np.zeros((k, k))
    for i in range(k - 1):
        integral = _integral(lambda u: spec.potential(u) / spec.rate_profile(u), b[i], b[i + 1])
        r[i, i + 1] = 1.0 / (limits.m[i + 1] * integral)
        r[i + 1, i] = 1.0 / (limits.m[i + 2] * integral)
    return limit_chain(r, tuple(range(1, k + 1)))


def double_well_spec(alpha: float, N: int, ell: Optional[int] = None,
                     beta: Optional[float] = None, rate_scale: Optional[float] = None,
                     lam: Optional[Callable[[float], float]] = None) -> BirthDeathSpec:
    """H(u) = u^alpha (1-u)^alpha on [0, 1], lambda = 1 unless given"""
    return BirthDeathSpec(
        N=N, zeros=(0.0, 1.0), exponents=(alpha, alpha), interval=(0.0, 1.0),
        H=lambda u: abs(u) ** alpha * abs(1.0 - u) ** alpha, lam=lam,
        ell=ell, beta=beta, rate_scale=rate_scale)


# ---------------------------------------------------------------------------
# Two-site zero-range as a birth-death chain
# ---------------------------------------------------------------------------

def two_site_lambda(N: int, alpha: float) -> Callable[[float], float]:
    """lambda_N(x) = (x / (x - 1/N))^alpha for x >= 2/N, 1 at x = 1/N"""
    def lam(x: float) -> float:
        k = int(round(x * N))
        return (k / (k - 1)) ** alpha if k >= 2 else 1.0
    return lam


@dataclass
class TwoSiteMap:
    zr: ModelInstance
    bd: ModelInstance
    bijection: Dict[Tuple[int, int], float]
    max_deviation: float
    r_theta: float
    r_scaled: float
    theta_over_scale: float
    limit_rate: float


def zr_two_site_map(spec: ZeroRangeSpec) -> TwoSiteMap:
    """
    Map eta -> eta(1)/N and compare the zero-range rates with the birth-death
    chain built from H = x^alpha (1-x)^alpha and lambda_N with unit scale.
    Also reports r under theta and under N^{1+alpha}; their ratio is
    theta / N^{1+alpha}.
    """
    if spec.kappa != 2:
        raise KappaNotTwo(f"the two-site map needs kappa = 2, got {spec.kappa}")
    zr = zr_theta(zr_build(spec))
    N, alpha, ell = spec.N, spec.alpha, zr.ell
    bd = bd_build(double_well_spec(alpha, N, ell=ell, rate_scale=1.0,
                                   lam=two_site_lambda(N, alpha)))

    bijection = {eta: bd.chain.space.label(eta[0]) for eta in zr.base_chain.space.labels}
    order = np.array([bd.chain.space.index(bijection[eta]) for eta in zr.base_chain.space.labels])
    mapped = bd.base_chain.rates[np.ix_(order, order)]
    deviation = float(np.abs(mapped - zr.base_chain.rates).max())

    r_theta = inter_well_rates(*zr.triple())[(1, 2)]
    scale = float(N) ** (1 + alpha)
    r_scaled = inter_well_rates(with_speedup(bd.base_chain, scale), bd.nu, bd.partition)[(1, 2)]
    m = 1.0 + zeta_series(alpha)
    limit_rate = 1.0 / (m * beta_fn(alpha + 1, alpha + 1))
    return TwoSiteMap(zr, bd, bijection, deviation, r_theta, r_scaled,
                      zr.theta.theta / scale, limit_rate)


def build_model(spec, theta_normalization: str = "trace",
                max_states: int = MAX_STATES) -> ModelInstance:
    """Build a zero-range (with its theta) or birth-death model from its spec"""
    if isinstance(spec, ZeroRangeSpec):
        return zr_theta(zr_build(spec, max_states=max_states), theta_normalization)
    if isinstance(spec, BirthDeathSpec):
        return bd_build(spec, max_states=max_states)
    raise SpecInvalid(f"unknown model spec {type(spec).__name__}")
