#!/usr/bin/env python3
"""
Metastability experiment runner
Builds the model on every grid point, computes the exact diagnostics,
simulates the projected well processes and writes plot-ready reports
"""

import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numba
import numpy as np
import pydantic
import scipy

from errors import (
    ConfigInvalid,
    MetastabilityError,
    ResourceLimit,
    StateSpaceTooLarge,
    ValidationError,
)
from experiment_config import (
    ExperimentConfig,
    config_hash,
    load_config,
    model_spec,
    resolve_chain_file,
    with_overrides,
)
from markov_chain import _as_label, load_chain, stationary_measure
from meta_analysis import (
    InterWellRates,
    MetastabilityReport,
    analyze,
    build_geometry,
    cauchy_diagnostic,
    delta_time_expectation,
    inter_well_rates,
    make_partition,
    report_rows,
)
from montecarlo import (
    EmpiricalRates,
    MeanEstimate,
    SeedSpec,
    coupling_check,
    empirical_rates,
    mean_with_ci,
    run_replicas,
    simulate_projected,
)
from gillespie_kernels import jump_tables
from particle_models import (
    BirthDeathSpec,
    ModelInstance,
    ZeroRangeSpec,
    bd_limit_rates,
    build_model,
    zr_limits,
)
from verify_suite import VerifySummary, model_capacity_check, verify_suite
from watched_chain import trace_chain

logger = logging.getLogger(__name__)

__version__ = "0.3.0"

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_RESOURCE = 3
EXIT_MODEL = 4

MODEL_CAPACITY_TOL = 1e-9


def fmt(value) -> str:
    """Floats with 17 significant digits, everything else as text"""
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


# ---------------------------------------------------------------------------
# One grid point
# ---------------------------------------------------------------------------

@dataclass
class SimulationSummary:
    replicas: int
    horizon: float
    jumps: int
    delta_fractions: List[float]
    delta: Optional[MeanEstimate]
    rates_X: EmpiricalRates
    rates_X_hat: EmpiricalRates
    coupling_holds: bool


@dataclass
class GridResult:
    N: int
    ell: Optional[int]
    n_states: int
    rates: InterWellRates
    report: Optional[MetastabilityReport]
    extras: Dict[str, float] = field(default_factory=dict)
    limit_rates: Optional[np.ndarray] = None
    simulation: Optional[SimulationSummary] = None
    delta_exact: Optional[float] = None
    capacity_gap: Optional[float] = None


def _chain_model(config: ExperimentConfig, config_path: Optional[str]) -> ModelInstance:
    chain = load_chain(resolve_chain_file(config, config_path), max_states=config.max_states)
    nu = stationary_measure(chain)
    wells = {x: [_as_label(s) for s in states] for x, states in config.wells.items()}
    partition = make_partition(chain.space, wells)
    geometry = build_geometry(chain, nu, partition)
    trace = trace_chain(chain, partition.union(), nu=nu)
    return ModelInstance("chain", chain.n, None, chain, chain, nu, partition, geometry,
                         1.0, trace, None)


def _expected_jumps(model: ModelInstance, horizon: float, replicas: int) -> float:
    """Mean number of jumps under nu over all replicas"""
    return float(np.dot(model.nu.weights, model.chain.holding_rates)) * horizon * replicas


def simulate_grid_point(model: ModelInstance, config: ExperimentConfig,
                        grid_index: int) -> SimulationSummary:
    """
    Replica i of grid point k uses substream k * replicas + i and starts at
    the anchor of well i mod kappa.
    """
    chain, partition = model.chain, model.partition
    anchors = model.geometry.anchors
    tables = jump_tables(chain.rates, chain.speedup)
    first = grid_index * config.replicas
    seeds = [SeedSpec(config.base_seed, first + i) for i in range(config.replicas)]

    def one(seed: SeedSpec):
        start = anchors[partition.labels[(seed.replica - first) % partition.kappa]]
        return simulate_projected(chain, partition, start, config.horizon, seed, tables)

    runs = run_replicas(one, seeds, config.max_workers)
    fractions = [run.delta_fraction for run in runs]
    delta = mean_with_ci(fractions) if len(runs) >= 2 else None
    coupling = all(coupling_check(run.X, run.X_hat, run.delta_time).holds for run in runs)
    if not coupling:
        logger.warning("coupling inequalities failed on N=%d", model.N)
    return SimulationSummary(
        config.replicas, config.horizon, sum(run.jumps for run in runs), fractions, delta,
        empirical_rates([run.X for run in runs], partition.labels),
        empirical_rates([run.X_hat for run in runs], partition.labels),
        coupling)


def run_grid_point(config: ExperimentConfig, N: int, grid_index: int,
                   config_path: Optional[str] = None) -> GridResult:
    if config.model == "chain":
        model = _chain_model(config, config_path)
    else:
        model = build_model(model_spec(config, N), config.theta_normalization,
                            max_states=config.max_states)
    chain, nu, partition = model.triple()
    print(f"  N={model.N}: {chain.n} states, ell={model.ell}")

    if config.conditions or config.hypotheses:
        report = analyze(chain, nu, partition, model.geometry, trace=model.trace,
                         route=config.route)
        rates = report.rates
    else:
        report = None
        rates = inter_well_rates(chain, nu, partition, route=config.route, trace=model.trace)

    result = GridResult(model.N, model.ell, chain.n, rates, report, dict(model.extras))
    if model.theta is not None:
        result.extras["theta_full"] = model.theta.theta_full
        result.extras["theta_spread"] = model.theta.spread
    if isinstance(model.spec, ZeroRangeSpec):
        limits = zr_limits(model.spec)
        result.extras["ln_ratio"] = limits.ln_ratio
        result.extras["Z"] = model.Z
        result.extras["Z_limit"] = limits.Z_limit
        result.limit_rates = np.full((partition.kappa, partition.kappa),
                                     partition.kappa / (partition.kappa - 1.0))
        np.fill_diagonal(result.limit_rates, 0.0)
    elif isinstance(model.spec, BirthDeathSpec):
        result.limit_rates = bd_limit_rates(model.spec).rates

    if config.verify:
        x = partition.labels[0]
        result.capacity_gap = model_capacity_check(chain, nu, partition.wells[x],
                                                   partition.complement(x))

    if config.delta_time_exact:
        result.delta_exact = delta_time_expectation(chain, partition, config.horizon)

    if config.simulate:
        expected = _expected_jumps(model, config.horizon, config.replicas)
        if expected > config.jump_budget:
            raise ResourceLimit(
                f"N={model.N}: about {expected:.3g} jumps expected, budget is "
                f"{config.jump_budget:.3g}; lower the horizon or the replicas")
        result.simulation = simulate_grid_point(model, config, grid_index)
    return result


# ---------------------------------------------------------------------------
# Whole experiment
# ---------------------------------------------------------------------------

@dataclass
class ReportBundle:
    config: ExperimentConfig
    grid: List[GridResult]
    cauchy: Optional[object] = None
    verification: Optional[VerifySummary] = None
    provenance: Dict[str, object] = field(default_factory=dict)

    @property
    def verification_failed(self) -> bool:
        failed = self.verification is not None and not self.verification.passed
        gaps = [g.capacity_gap for g in self.grid if g.capacity_gap is not None]
        return failed or any(gap > MODEL_CAPACITY_TOL for gap in gaps)


def _precheck(config: ExperimentConfig):
    """Reject invalid model specs and oversized state spaces before any work"""
    if config.model == "chain":
        return
    for N in config.n_grid:
        try:
            spec = model_spec(config, N)
        except ValidationError as e:
            raise ConfigInvalid(f"N={N}: {e}") from e
        if isinstance(spec, ZeroRangeSpec) and spec.n_states > config.max_states:
            raise StateSpaceTooLarge(
                f"N={N}: {spec.n_states} configurations exceed the limit of {config.max_states}")


def run_experiment(config: ExperimentConfig, config_path: Optional[str] = None) -> ReportBundle:
    """Compute everything in memory; nothing is written here"""
    _precheck(config)
    grid = config.n_grid if config.model != "chain" else [0]
    print(f"=== Exact analysis: model {config.model} ===")

    def one(item):
        k, N = item
        return run_grid_point(config, N, k, config_path)

    workers = 1 if config.simulate else min(config.max_workers, len(grid))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = list(executor.map(one, enumerate(grid)))

    bundle = ReportBundle(config, results)
    if config.cauchy and len(results) >= 3:
        bundle.cauchy = cauchy_diagnostic([r.N for r in results], [r.rates for r in results])
    if config.verify:
        print("=== Verification suites ===")
        bundle.verification = verify_suite(config.base_seed, config.verify_sizes,
                                           config.verify_chains,
                                           out_dir=os.path.join(config.out_dir, "reproducers"))
    bundle.provenance = {
        'config_sha256': config_hash(config),
        'base_seed': config.base_seed,
        'version': __version__,
        'libraries': {
            'numpy': np.__version__,
            'scipy': scipy.__version__,
            'numba': numba.__version__,
            'pydantic': pydantic.__version__,
        },
    }
    return bundle


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def _pair_rows(result: GridResult):
    labels = result.rates.labels
    sim = result.simulation
    for a, x in enumerate(labels):
        for b, y in enumerate(labels):
            if a == b:
                continue
            row = [result.N, x, y, result.rates.matrix[a, b]]
            if sim is not None:
                row += [sim.rates_X.rates[a, b], sim.rates_X.stderr[a, b],
                        sim.rates_X_hat.rates[a, b], sim.rates_X_hat.stderr[a, b]]
            else:
                row += [None] * 4
            row.append(result.limit_rates[a, b] if result.limit_rates is not None else None)
            yield row


def write_rates_csv(bundle: ReportBundle, filename: str):
    with open(filename, 'w') as f:
        f.write("N,from,to,r,r_hat_X,se_X,r_hat_X_hat,se_X_hat,r_limit\n")
        for result in bundle.grid:
            for row in _pair_rows(result):
                f.write(",".join(fmt(v) for v in row) + "\n")


def write_conditions_csv(bundle: ReportBundle, filename: str):
    with open(filename, 'w') as f:
        f.write("N,key,quantity,value\n")
        for result in bundle.grid:
            rows = report_rows(result.report, result.N) if result.report is not None else []
            rows += [(result.N, "all", name, value) for name, value in sorted(result.extras.items())]
            if result.capacity_gap is not None:
                rows.append((result.N, "all", "capacity_route_gap", result.capacity_gap))
            for row in rows:
                f.write(",".join(fmt(v) for v in row) + "\n")


def write_occupation_csv(bundle: ReportBundle, filename: str):
    with open(filename, 'w') as f:
        f.write("N,replicas,horizon,delta_mean,delta_se,ci_low,ci_high,delta_exact,jumps\n")
        for result in bundle.grid:
            sim = result.simulation
            if sim is None and result.delta_exact is None:
                continue
            est = sim.delta if sim is not None else None
            row = [result.N,
                   sim.replicas if sim else None, sim.horizon if sim else None,
                   est.mean if est else (sim.delta_fractions[0] if sim else None),
                   est.stderr if est else None, est.low if est else None,
                   est.high if est else None, result.delta_exact,
                   sim.jumps if sim else None]
            f.write(",".join(fmt(v) for v in row) + "\n")


def _plain(value):
    if isinstance(value, dict):
        return {(f"{k[0]}->{k[1]}" if isinstance(k, tuple) else str(k)): _plain(v)
                for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def report_json(bundle: ReportBundle) -> dict:
    grid = []
    for result in bundle.grid:
        entry = {
            'N': result.N,
            'ell': result.ell,
            'states': result.n_states,
            'rates': result.rates.matrix,
            'rate_route': result.rates.route,
            'well_mass': result.rates.well_mass,
            'extras': result.extras,
            'limit_rates': result.limit_rates,
            'delta_exact': result.delta_exact,
        }
        if result.report is not None:
            hyp = result.report.hypotheses
            entry.update({
                'C2': result.report.c2, 'C2_bound': result.report.c2_bound,
                'C3': result.report.c3, 'C3_bound': result.report.c3_bound,
                'sigma': result.report.sigma, 'nu_delta': hyp.nu_delta,
                'h2': hyp.h2, 'h2_unspeeded': hyp.h2_unspeeded, 'h3': hyp.h3,
            })
        sim = result.simulation
        if sim is not None:
            entry['simulation'] = {
                'replicas': sim.replicas,
                'horizon': sim.horizon,
                'jumps': sim.jumps,
                'delta_fraction_mean': sim.delta.mean if sim.delta else sim.delta_fractions[0],
                'delta_fraction_ci': [sim.delta.low, sim.delta.high] if sim.delta else None,
                'coupling_holds': sim.coupling_holds,
                'projected_jumps': sim.rates_X.total_jumps,
                'missing_wells': sim.rates_X.missing,
            }
        grid.append(entry)
    out = {'model': bundle.config.model, 'grid': grid}
    if bundle.cauchy is not None:
        out['cauchy'] = {
            'threshold': bundle.cauchy.threshold,
            'max_change': bundle.cauchy.max_change,
            'plausibly_convergent': bundle.cauchy.plausibly_convergent,
        }
    if bundle.verification is not None:
        out['verification'] = {
            'passed': bundle.verification.passed,
            'failures': [{'suite': o.suite, 'replica': o.seed.replica, 'detail': o.detail,
                          'reproducer': o.reproducer} for o in bundle.verification.failures],
            'worst': {name: bundle.verification.worst(name)
                      for name in bundle.verification.by_suite()},
        }
    return _plain(out)


def write_bundle(bundle: ReportBundle, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), 'w') as f:
        json.dump(report_json(bundle), f, indent=2, sort_keys=True)
    write_rates_csv(bundle, os.path.join(out_dir, "rates.csv"))
    write_conditions_csv(bundle, os.path.join(out_dir, "conditions.csv"))
    write_occupation_csv(bundle, os.path.join(out_dir, "occupation.csv"))
    with open(os.path.join(out_dir, "provenance.json"), 'w') as f:
        json.dump(_plain({**bundle.provenance,
                          'config': bundle.config.model_dump(mode="json")}),
                  f, indent=2, sort_keys=True)


def print_summary(bundle: ReportBundle):
    print("\n=== Summary ===")
    for result in bundle.grid:
        labels = result.rates.labels
        row_sums = result.rates.row_sums()
        print(f"N={result.N}:")
        for x, total in zip(labels, row_sums):
            print(f"  well {x}: sum_y r = {total:.10g}")
        if result.simulation is not None and result.simulation.delta is not None:
            d = result.simulation.delta
            print(f"  Delta fraction: {d.mean:.4g} [{d.low:.4g}, {d.high:.4g}]")
            mark = '✓' if result.simulation.coupling_holds else '✗'
            print(f"  {mark} coupling inequalities")
    if bundle.cauchy is not None:
        for pair, ok in bundle.cauchy.plausibly_convergent.items():
            print(f"  {'✓' if ok else '✗'} r{pair} settles "
                  f"(last value {bundle.cauchy.last_value[pair]:.6g})")
    if bundle.verification is not None:
        v = bundle.verification
        mark = '✓' if v.passed else '✗'
        print(f"  {mark} verification: {len(v.outcomes) - len(v.failures)}/{len(v.outcomes)} passed")


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

def _parse_grid(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigInvalid(f"--n-grid expects comma-separated integers, got {text!r}")


def build_parser():
    import argparse

    parser = argparse.ArgumentParser(description='Finite-N metastability diagnostics')
    parser.add_argument('--config', type=str, help='JSON experiment config')
    parser.add_argument('--model', choices=['zr', 'bd', 'chain'], help='Model family')
    parser.add_argument('--kappa', type=int, help='Number of sites (zero-range)')
    parser.add_argument('--alpha', type=float, help='Exponent alpha > 1')
    parser.add_argument('--n-grid', type=str, help='Grid of N, e.g. 20,40,80')
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--beta', type=float, help='Well radius ell = ceil(N^beta)')
    group.add_argument('--ell', type=int, help='Fixed well radius')
    parser.add_argument('--horizon', type=float, help='Simulation horizon on the analysed clock')
    parser.add_argument('--replicas', type=int, help='Monte Carlo replicas per grid point')
    parser.add_argument('--seed', type=int, help='Base seed')
    parser.add_argument('--out', type=str, help='Output directory')
    parser.add_argument('--verify', action='store_true', help='Run the identity suites')
    parser.add_argument('--max-states', type=int, help='State-space size limit')
    parser.add_argument('--verbose', action='store_true', help='Debug logging')
    return parser


def config_from_args(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    return with_overrides(
        config,
        model=args.model, kappa=args.kappa, alpha=args.alpha,
        n_grid=_parse_grid(args.n_grid) if args.n_grid else None,
        beta=args.beta, ell=args.ell, horizon=args.horizon, replicas=args.replicas,
        base_seed=args.seed, out_dir=args.out, max_states=args.max_states,
        verify=True if args.verify else None)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
    except (ValidationError, OSError) as e:
        print(f"✗ Invalid configuration: {e}")
        return EXIT_CONFIG

    try:
        bundle = run_experiment(config, args.config)
    except (StateSpaceTooLarge, ResourceLimit) as e:
        print(f"✗ Resource limit: {e}")
        return EXIT_RESOURCE
    except (ConfigInvalid, OSError) as e:
        print(f"✗ Invalid configuration: {e}")
        return EXIT_CONFIG
    except ValidationError as e:
        print(f"✗ Model rejected: {type(e).__name__}: {e}")
        return EXIT_MODEL
    except MetastabilityError as e:
        print(f"✗ {type(e).__name__}: {e}")
        return EXIT_VERIFY_FAILED

    write_bundle(bundle, config.out_dir)
    print_summary(bundle)
    print(f"\nReports written to {config.out_dir}/")
    if bundle.verification_failed:
        print("✗ Verification failed")
        return EXIT_VERIFY_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
