"""Property batteries behind `verify`: each suite returns a report and never raises on a
failed property."""
import time
from functools import partial
from typing import Callable, Dict, List, Optional

import numpy as np

from app.core import cell, corrector, fpp, oracles, varform
from app.core.errors import FppError
from app.core.lattice import Box
from app.core.medium import (ConstantKind, Environment, IidUniformKind, MediumSpec, PeriodicKind)
from app.core.rng import PROBE_STREAM, derive_seed, uniform
from app.observability.logger import log_solver_event, logger

SUITES = ("dpp", "comparison", "norm", "oracle", "tauberian")


def random_periodic_spec(d: int, period: int, seed: int, lo: float = 1.0, hi: float = 2.0,
                         undirected: bool = True) -> MediumSpec:
    shape = (period,) * d + (2 * d,)
    count = int(np.prod(shape))
    keys = np.arange(count, dtype=np.int64).reshape(-1, 1)
    table = lo + (hi - lo) * uniform(seed, PROBE_STREAM, keys).reshape(shape)
    return MediumSpec(dimension=d, kind=PeriodicKind(period=[period] * d, table=table.tolist()),
                      undirected=undirected, seed=seed)


def random_iid_spec(d: int, seed: int, lo: float = 1.0, hi: float = 2.0) -> MediumSpec:
    return MediumSpec(dimension=d, kind=IidUniformKind(lo=lo, hi=hi), undirected=True, seed=seed)


def random_atomic_space(seed: int, max_atoms: int = 5, max_dim: int = 3, lo: float = 1.0,
                        hi: float = 3.0):
    """(space, p) with atoms in [lo, hi]^d and weights in [1, 2] normalized"""
    u = uniform(seed, PROBE_STREAM, np.arange(2 + max_atoms * (max_dim + 1) + max_dim).reshape(-1, 1))
    n = 1 + int(u[0] * max_atoms)
    d = 1 + int(u[1] * max_dim)
    rest = u[2:]
    atoms = (lo + (hi - lo) * rest[: n * d]).reshape(n, d)
    weights = 1.0 + rest[max_atoms * max_dim: max_atoms * max_dim + n]
    p = 4.0 * rest[max_atoms * (max_dim + 1): max_atoms * (max_dim + 1) + d] - 2.0
    space = corrector.AtomicSpace(atoms=atoms.tolist(), probs=(weights / weights.sum()).tolist())
    return space, p


class Report:
    def __init__(self, suite: str):
        self.suite = suite
        self.checks = 0
        self.failures: List[Dict] = []

    def expect(self, ok: bool, name: str, **detail):
        self.checks += 1
        if not ok:
            self.failures.append({"check": name, **detail})

    def run(self, name: str, fn: Callable[[], None]):
        """Run a block of checks; a solver error counts as a failed check"""
        try:
            fn()
        except FppError as e:
            self.expect(False, name, error=f"{type(e).__name__}: {e}")

    def as_dict(self) -> Dict:
        return {"suite": self.suite, "passed": not self.failures, "checks": self.checks,
                "failures": self.failures}


def suite_dpp(seed: int, count: int, env: Optional[Environment] = None) -> Report:
    report = Report("dpp")
    envs = [env] if env is not None else [
        Environment(random_periodic_spec(2, 7, derive_seed(seed, "dpp-medium", i), undirected=i % 2 == 0))
        for i in range(count)
    ]
    for i, e in enumerate(envs):
        def checks(e=e, i=i):
            origin = tuple([0] * e.dimension)
            box = Box(origin, 6)
            field = fpp.passage_times(e, origin, box)
            report.expect(field.dpp_violation(e) <= 1e-9, "interior_dpp", medium=i)
            report.expect(field.bounds_violation(e.bounds) <= 1e-9, "lipschitz_bounds", medium=i)
            reference = oracles.networkx_times(e, origin, box)
            gap = max(abs(field[y] - t) for y, t in reference.items())
            report.expect(gap <= 1e-9, "networkx_agreement", medium=i, gap=gap)
            t_small, t_large = 1.5 * e.bounds.a, 3.0 * e.bounds.a
            small = fpp.reachable_set(e, origin, t_small)
            large = fpp.reachable_set(e, origin, t_large)
            report.expect(small.members <= large.members, "monotone_reachability", medium=i)
            expected = {y for y, t in reference.items() if t <= t_large}
            report.expect(large.members == expected, "reachable_threshold", medium=i)
            p = (1.0, -0.5) if e.dimension == 2 else tuple([1.0] * e.dimension)
            t = 2 * e.bounds.b
            direct = cell.mu(e, p, origin, t).value
            walked = oracles.walk_mu(e, p, origin, t)
            report.expect(abs(direct - walked) <= 1e-9, "mu_walk_enumeration", medium=i,
                          mu=direct, walk=walked)

        report.run("dpp_medium", checks)
    return report


def suite_comparison(seed: int, count: int, samples: int, env: Optional[Environment] = None) -> Report:
    report = Report("comparison")
    envs = [env] if env is not None else [
        Environment(random_iid_spec(2, derive_seed(seed, "comparison-medium", i))) for i in range(count)
    ]
    for i, e in enumerate(envs):
        def checks(e=e, i=i):
            p = np.ones(e.dimension)
            phi = cell.TerminalCost.random_piecewise(e.dimension, 2.0, derive_seed(seed, "phi", i))
            result = cell.check_comparison(e, p, phi, samples, derive_seed(seed, "probe", i),
                                           t_max=3 * e.bounds.b)
            report.expect(not result["violations"], "comparison_principle", medium=i,
                          violations=len(result["violations"]),
                          lower_excess=result["max_lower_excess"],
                          upper_excess=result["max_upper_excess"])

        report.run("comparison_medium", checks)
    return report


def default_p_samples(d: int) -> List[List[float]]:
    if d == 2:
        return [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 2.0], [0.5, -1.0]]
    samples = [list(row) for row in np.eye(d)]
    samples.append([1.0] * d)
    return samples


def suite_norm(seed: int, env: Optional[Environment] = None, t: Optional[float] = None) -> Report:
    report = Report("norm")
    e = env or Environment(MediumSpec(dimension=2, kind=ConstantKind(c=2.0)))
    horizon = t or max(100.0, 10 * e.bounds.b)
    estimator = partial(varform.hbar_mu_slope, e, t=horizon, replicas=1)

    def checks():
        result = varform.norm_axiom_check(estimator, default_p_samples(e.dimension), e.bounds)
        report.checks += result["checks"]
        report.failures.extend(result["violations"])

    report.run("norm_axioms", checks)
    return report


def suite_oracle(seed: int, count: int, tol: float = 1e-9) -> Report:
    report = Report("oracle")
    fixtures = [
        (corrector.AtomicSpace(atoms=[[1, 2], [2, 1]], probs=[0.5, 0.5]), [1.0, 1.0],
         corrector.OutcomeKind.CORRECTOR_FOUND, 1.0),
        (corrector.AtomicSpace(atoms=[[4, 4], [1, 3]], probs=[0.5, 0.5]), [-1.0, 1.0],
         corrector.OutcomeKind.MINIMIZER_NOT_CORRECTOR, 0.5),
    ]
    for space, p, kind, hbar in fixtures:
        def fixture(space=space, p=p, kind=kind, hbar=hbar):
            outcome = corrector.run(space, p, tol=tol)
            report.expect(outcome.kind == kind and abs(outcome.hbar - hbar) <= 10 * tol,
                          "fixture", atoms=space.atoms, kind=outcome.kind.value, hbar=outcome.hbar)

        report.run("fixture", fixture)
    for i in range(count):
        def checks(i=i):
            space, p = random_atomic_space(derive_seed(seed, "atomic-space", i))
            outcome = corrector.run(space, p, tol=tol)
            value, witness = corrector.brute_force_minimax(space, p, tol=tol)
            report.expect(abs(outcome.hbar - value) <= 10 * tol, "oracle_equivalence", space=i,
                          hbar=outcome.hbar, oracle=value)
            report.expect(outcome.max_abs_xi <= 1 + 1e-12, "xi_bound", space=i, xi=outcome.max_abs_xi)
            report.expect(abs(float(space.pi @ outcome.f)) <= 1e-10, "mean_zero", space=i)
            q = float(np.max(np.abs(p)))
            report.expect(q / space.b - 10 * tol <= value <= q / space.a + 10 * tol, "sandwich", space=i)

        report.run("atomic_space", checks)
    return report


def suite_tauberian(seed: int, count: int, env: Optional[Environment] = None,
                    t: float = 100.0, eps: float = 0.05, tol: float = 1e-4) -> Report:
    report = Report("tauberian")
    envs = [env] if env is not None else [
        Environment(random_iid_spec(2, derive_seed(seed, "tauberian-medium", i), lo=1.0, hi=1.2))
        for i in range(count)
    ]
    momenta = [[1.0, 0.0], [1.0, 1.0], [-1.0, 1.0]]
    for i, e in enumerate(envs):
        for p in momenta if e.dimension == 2 else [[1.0] * e.dimension]:
            def checks(e=e, i=i, p=p):
                slope = varform.hbar_mu_slope(e, p, max(t, 10 * e.bounds.b))
                discount = varform.hbar_nu_discount(e, p, eps, tol)
                gap = abs(slope.value - discount.value)
                allowed = slope.uncertainty + discount.uncertainty
                report.expect(gap <= allowed, "limit_exchange", medium=i, p=p, mu_slope=slope.value,
                              nu_discount=discount.value, gap=gap, allowed=allowed)

            report.run("tauberian_medium", checks)
    return report


def verify(suite: str, seed: int = 0, count: int = 10, samples: int = 100,
           env: Optional[Environment] = None) -> Dict:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite}; choose from {', '.join(SUITES)}")
    start_ms = int(time.time() * 1000)
    if suite == "dpp":
        report = suite_dpp(seed, count, env)
    elif suite == "comparison":
        report = suite_comparison(seed, count, samples, env)
    elif suite == "norm":
        report = suite_norm(seed, env)
    elif suite == "oracle":
        report = suite_oracle(seed, count)
    else:
        report = suite_tauberian(seed, count, env)
    result = report.as_dict()
    log_solver_event("verify", suite, "success" if result["passed"] else "failed", start_ms,
                     int(time.time() * 1000), checks=result["checks"], failures=len(result["failures"]))
    if not result["passed"]:
        logger.warning("verify_failed", suite=suite, first_failure=result["failures"][0])
    return result
