"""Discrete Hamiltonian, variational bounds and the three estimators of H̄(p)."""
import math
import time
from dataclasses import dataclass
from itertools import product
from typing import Callable, Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from app.core.cell import as_momentum, hamiltonian_kernel, hjb_residual, mu, nu, sup_norm
from app.core.errors import ConfigError, DegenerateError
from app.core.fpp import mean_stderr, replica_env, time_constant_sweep
from app.core.lattice import Box, WeightBounds, as_point, direction_vectors
from app.core.medium import Environment
from app.core.workers import ordered_map
from app.observability.logger import log_solver_event, logger


@dataclass
class GradientCandidate:
    """Lattice function φ; mean_zero records that φ has a mean-zero stationary gradient"""
    evaluator: Callable[[np.ndarray], np.ndarray]
    mean_zero: bool = False
    label: str = "custom"

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.evaluator(np.atleast_2d(np.asarray(points, dtype=np.int64))),
                          dtype=np.float64)

    @classmethod
    def zero(cls) -> "GradientCandidate":
        return cls(lambda pts: np.zeros(pts.shape[0]), mean_zero=True, label="zero")

    @classmethod
    def linear(cls, v: Sequence[float]) -> "GradientCandidate":
        v = np.asarray(v, dtype=np.float64)
        return cls(lambda pts: pts @ v, mean_zero=False, label="linear")

    @classmethod
    def from_table(cls, table: Mapping[Tuple[int, ...], float], default: float = 0.0) -> "GradientCandidate":
        lookup = {tuple(int(v) for v in k): float(val) for k, val in table.items()}

        def evaluate(pts):
            return np.array([lookup.get(tuple(int(v) for v in row), default) for row in pts])

        return cls(evaluate, mean_zero=False, label="table")


class EffectiveHamiltonianEstimate(BaseModel):
    p: List[float]
    method: Literal["mu_slope", "nu_discount", "dual_norm"]
    value: float
    uncertainty: float
    metadata: Dict = Field(default_factory=dict)

    def bounds_violation(self, bounds: WeightBounds) -> float:
        q = sup_norm(np.asarray(self.p))
        low = q / bounds.b - self.uncertainty - self.value
        high = self.value - q / bounds.a - self.uncertainty
        return max(0.0, low, high)


def hamiltonian_field(phi: GradientCandidate, p: Sequence[float], env: Environment,
                      sites: np.ndarray) -> np.ndarray:
    """ℋ(φ, p, x) for each row x of sites"""
    sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
    pv = as_momentum(p, env.dimension)
    nbr_vals = np.column_stack([phi(sites + v) for v in direction_vectors(env.dimension)])
    return hamiltonian_kernel(phi(sites), nbr_vals, env.edge_weights(sites), pv)


def discrete_hamiltonian(phi: GradientCandidate, p: Sequence[float], x: Sequence[int],
                         env: Environment) -> float:
    """sup over α of (-𝒟φ(x, α) - p·α) / τ(x, α)"""
    x = as_point(x, env.dimension)
    return float(hamiltonian_field(phi, p, env, np.asarray([x]))[0])


def variational_bounds(phi: GradientCandidate, p: Sequence[float], env: Environment,
                       box: Box) -> Tuple[float, float]:
    """(inf, sup) of ℋ(φ, p, ·) over the box; brackets H̄(p) when φ has a mean-zero gradient"""
    ham = hamiltonian_field(phi, p, env, box.grid().sites)
    if not phi.mean_zero:
        logger.debug("variational_bounds_unflagged_candidate", label=phi.label)
    return float(ham.min()), float(ham.max())


def hbar_mu_slope(env: Environment, p: Sequence[float], t: float,
                  replicas: int = 1) -> EffectiveHamiltonianEstimate:
    """Mean of -μ(0, t; φ≡0)/t over replicas"""
    pv = as_momentum(p, env.dimension)
    a, b = env.bounds.a, env.bounds.b
    if t < 10 * b:
        raise ConfigError(f"hbar_mu_slope needs t >= 10b = {10 * b}, got t={t}")
    if replicas < 1:
        raise ConfigError(f"replicas must be >= 1, got {replicas}")
    origin = tuple([0] * env.dimension)

    def one_replica(r: int) -> float:
        return -mu(replica_env(env, r), pv, origin, t).value / t

    start_ms = int(time.time() * 1000)
    slopes = ordered_map(one_replica, range(replicas))
    value, se = mean_stderr(slopes)
    bias = 2 * sup_norm(pv) / (a * t)
    log_solver_event("hbar", "mu_slope", "success", start_ms, int(time.time() * 1000),
                     t=t, replicas=replicas, value=value)
    return EffectiveHamiltonianEstimate(
        p=list(pv), method="mu_slope", value=value, uncertainty=se + bias,
        metadata={"t": t, "replicas": replicas, "stderr": se, "bias_allowance": bias,
                  "bias_model": "heuristic 2|p|/(a t)", "samples": slopes},
    )


def hbar_nu_discount(env: Environment, p: Sequence[float], eps: float,
                     tol: Optional[float] = None) -> EffectiveHamiltonianEstimate:
    """-ε ν_ε(0), with the HJB residual plus ε·tol as uncertainty"""
    pv = as_momentum(p, env.dimension)
    if not (0 < eps <= 1):
        raise ConfigError(f"hbar_nu_discount needs eps in (0, 1], got {eps}")
    value_fn = nu(env, pv, eps, tol, interior_radius=1)
    residual = hjb_residual(value_fn, env, pv)
    value = -eps * value_fn.at(tuple([0] * env.dimension))
    return EffectiveHamiltonianEstimate(
        p=list(pv), method="nu_discount", value=value, uncertainty=residual + eps * value_fn.tol,
        metadata={"eps": eps, "tol": value_fn.tol, "residual": residual,
                  "empirical_C": residual / eps, "box_radius": value_fn.box.radius,
                  "sweeps": value_fn.sweeps},
    )


def dual_norm(m_samples: Iterable[Tuple[Sequence[float], float]], p: Sequence[float]) -> float:
    """max over samples of (p·x) / m̂(x)"""
    return dual_norm_argmax(m_samples, p)[0]


def dual_norm_argmax(m_samples: Iterable[Tuple[Sequence[float], float]],
                     p: Sequence[float]) -> Tuple[float, int]:
    pv = np.asarray(p, dtype=np.float64)
    best, arg = -math.inf, -1
    for j, (x, m) in enumerate(m_samples):
        if not m > 0:
            raise DegenerateError(f"time constant must be positive, got m̂={m} at direction {list(x)}")
        ratio = float(np.dot(pv, np.asarray(x, dtype=np.float64))) / m
        if ratio > best:
            best, arg = ratio, j
    if arg < 0:
        raise DegenerateError("dual_norm needs at least one sample")
    return best, arg


def direction_grid(d: int, radius: int = 2) -> List[Tuple[float, ...]]:
    """Primitive integer vectors with |x|_∞ <= radius, scaled to unit Euclidean length"""
    dirs = []
    for v in product(range(-radius, radius + 1), repeat=d):
        if any(v) and math.gcd(*[abs(c) for c in v]) == 1:
            norm = math.sqrt(sum(c * c for c in v))
            dirs.append(tuple(c / norm for c in v))
    return dirs


def hbar_dual_norm(env: Environment, p: Sequence[float], n: int, replicas: int,
                   directions: Optional[Sequence[Sequence[float]]] = None) -> EffectiveHamiltonianEstimate:
    pv = as_momentum(p, env.dimension)
    directions = directions or direction_grid(env.dimension)
    estimates = time_constant_sweep(env, directions, n, replicas)
    value, j = dual_norm_argmax([(e.direction, e.estimate) for e in estimates], pv)
    best = estimates[j]
    uncertainty = 0.0
    if value > 0:
        rounding = env.bounds.b * env.dimension / (2 * n * best.estimate)
        uncertainty = value * (best.stderr / best.estimate + rounding)
    return EffectiveHamiltonianEstimate(
        p=list(pv), method="dual_norm", value=value, uncertainty=uncertainty,
        metadata={"n": n, "replicas": replicas, "directions": len(directions),
                  "argmax_direction": list(best.direction),
                  "m_hat": [e.estimate for e in estimates],
                  "m_stderr": [e.stderr for e in estimates]},
    )


def norm_axiom_check(estimator: Callable[[Sequence[float]], EffectiveHamiltonianEstimate],
                     p_samples: Sequence[Sequence[float]], bounds: WeightBounds,
                     scales: Sequence[float] = (2.0, 0.5)) -> Dict:
    """Homogeneity, subadditivity on consecutive pairs and the a/b bounds, each up to the
    estimators' stated uncertainties"""
    cache: Dict[Tuple[float, ...], EffectiveHamiltonianEstimate] = {}

    def H(p) -> EffectiveHamiltonianEstimate:
        key = tuple(float(v) for v in p)
        if key not in cache:
            cache[key] = estimator(list(key))
        return cache[key]

    violations = []
    checks = 0
    samples = [np.asarray(p, dtype=np.float64) for p in p_samples]
    for p in samples:
        base = H(p)
        checks += 1
        excess = base.bounds_violation(bounds)
        if excess > 1e-12:
            violations.append({"axiom": "bounds", "p": p.tolist(), "value": base.value, "excess": excess})
        for lam in scales:
            scaled = H(lam * p)
            checks += 1
            gap = abs(scaled.value - lam * base.value)
            allowed = scaled.uncertainty + lam * base.uncertainty + 1e-12
            if gap > allowed:
                violations.append({"axiom": "homogeneity", "p": p.tolist(), "scale": lam,
                                   "gap": gap, "allowed": allowed})
    for p, q in zip(samples, samples[1:]):
        hp, hq, hpq = H(p), H(q), H(p + q)
        checks += 1
        excess = hpq.value - hp.value - hq.value
        allowed = hpq.uncertainty + hp.uncertainty + hq.uncertainty + 1e-12
        if excess > allowed:
            violations.append({"axiom": "subadditivity", "p": p.tolist(), "q": q.tolist(),
                               "excess": excess, "allowed": allowed})
    logger.info("norm_axioms_checked", checks=checks, violations=len(violations))
    return {"checks": checks, "violations": violations,
            "estimates": {",".join(f"{v:g}" for v in k): e.value for k, e in cache.items()}}
