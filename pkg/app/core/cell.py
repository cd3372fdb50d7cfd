"""Discrete cell problems: finite-horizon value μ(x,t) and discounted stationary value ν_ε.

Index convention for μ: a path γ(0)=x, …, γ(k) pays the running cost λ(γ(i), α_i) = p·α_i for
i = 0..k-1, its elapsed time Σ τ(γ(i), α_i) must not exceed t, and the terminal cost is
charged at γ(k). The running cost telescopes to p·(γ(k) - x), so

    μ(x, t) = min over y in R(x, t) of [p·(y - x) + φ(y)].
"""
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from app.config import Config
from app.core.errors import ConfigError, NonConvergenceError
from app.core.fpp import reach_radius, reachable_set
from app.core.lattice import Box, BoxGrid, as_point, direction_vectors
from app.core.medium import Environment
from app.core.rng import PROBE_STREAM, uniform
from app.observability.logger import log_solver_event, logger


def as_momentum(p: Sequence[float], d: int) -> np.ndarray:
    vec = np.asarray(p, dtype=np.float64).reshape(-1)
    if vec.size != d or not np.all(np.isfinite(vec)):
        raise ConfigError(f"momentum must be a finite {d}-vector, got {list(p)}")
    return vec


def sup_norm(p: np.ndarray) -> float:
    return float(np.max(np.abs(p))) if p.size else 0.0


def hamiltonian_kernel(center: np.ndarray, nbr_vals: np.ndarray, tau: np.ndarray,
                       p: np.ndarray) -> np.ndarray:
    """max over α of (-(φ(x+α) - φ(x)) - p·α) / τ(x, α), rows = sites, columns = directions"""
    pa = direction_vectors(p.size) @ p
    return ((center[:, None] - nbr_vals - pa[None, :]) / tau).max(axis=1)


@dataclass
class TerminalCost:
    evaluator: Callable[[np.ndarray], np.ndarray]
    lip: float
    label: str = "custom"

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.evaluator(np.atleast_2d(np.asarray(points, dtype=np.int64))),
                          dtype=np.float64)

    def at(self, x: Sequence[int]) -> float:
        return float(self(np.asarray([x]))[0])

    def lipschitz_violation(self, points: np.ndarray) -> float:
        points = np.atleast_2d(np.asarray(points, dtype=np.int64))
        here = self(points)
        worst = 0.0
        for v in direction_vectors(points.shape[1])[0::2]:
            worst = max(worst, float(np.max(np.abs(self(points + v) - here))) - self.lip)
        return max(0.0, worst)

    @classmethod
    def zero(cls) -> "TerminalCost":
        return cls(lambda pts: np.zeros(pts.shape[0]), lip=0.0, label="zero")

    @classmethod
    def linear_clamp(cls, p: np.ndarray, cap: float) -> "TerminalCost":
        """clip(p·x, -cap, cap)"""
        p = np.asarray(p, dtype=np.float64)
        return cls(lambda pts: np.clip(pts @ p, -cap, cap), lip=sup_norm(p), label="linear_clamp")

    @classmethod
    def random_piecewise(cls, d: int, lip: float, seed: int, pieces: int = 4,
                         spread: int = 6) -> "TerminalCost":
        """lip · min_j (|x - c_j|_1 + o_j) with seeded centres and offsets"""
        keys = np.array([[j, c] for j in range(pieces) for c in range(d + 1)], dtype=np.int64)
        u = uniform(seed, PROBE_STREAM, keys).reshape(pieces, d + 1)
        centers = np.floor(u[:, :d] * (2 * spread + 1)).astype(np.int64) - spread
        offsets = u[:, d] * spread

        def evaluate(pts):
            dist = np.abs(pts[:, None, :] - centers[None, :, :]).sum(axis=2) + offsets[None, :]
            return lip * dist.min(axis=1)

        return cls(evaluate, lip=lip, label="random_piecewise")


@dataclass
class FiniteHorizonValue:
    x: Tuple[int, ...]
    t: float
    p: Tuple[float, ...]
    value: float
    argmin: Tuple[int, ...]
    reached: int


def _min_over_reach(reach, p: np.ndarray, x: Tuple[int, ...], phi: TerminalCost):
    costs = (reach.sites - np.asarray(x)) @ p + phi(reach.sites)
    j = int(np.argmin(costs))
    return float(costs[j]), tuple(int(v) for v in reach.sites[j])


def mu(env: Environment, p: Sequence[float], x: Sequence[int], t: float,
       phi: Optional[TerminalCost] = None, box: Optional[Box] = None) -> FiniteHorizonValue:
    x = as_point(x, env.dimension)
    pv = as_momentum(p, env.dimension)
    phi = phi or TerminalCost.zero()
    reach = reachable_set(env, x, t, box)
    value, argmin = _min_over_reach(reach, pv, x, phi)
    return FiniteHorizonValue(x=x, t=float(t), p=tuple(pv), value=value, argmin=argmin,
                              reached=len(reach))


def mu_truncated(env: Environment, p: Sequence[float], x: Sequence[int], t: float,
                 phi: Optional[TerminalCost], K: float) -> FiniteHorizonValue:
    """μ_K: paths are frozen once they sit outside the Euclidean ball of radius K"""
    x = as_point(x, env.dimension)
    pv = as_momentum(p, env.dimension)
    phi = phi or TerminalCost.zero()
    if K < 0:
        raise ConfigError(f"truncation radius must be nonnegative, got {K}")
    if math.sqrt(sum(v * v for v in x)) > K:
        return FiniteHorizonValue(x=x, t=float(t), p=tuple(pv), value=phi.at(x), argmin=x, reached=1)
    reach = reachable_set(env, x, t, frozen_outside=K)
    value, argmin = _min_over_reach(reach, pv, x, phi)
    return FiniteHorizonValue(x=x, t=float(t), p=tuple(pv), value=value, argmin=argmin,
                              reached=len(reach))


def nu_exact_bounds(p: np.ndarray, eps: float, a: float, b: float) -> Tuple[float, float]:
    """(lower, upper) = (-|p|/(1-e^{-εa}), -|p|/(1-e^{-εb}))"""
    q = sup_norm(p)
    return -q / -math.expm1(-eps * a), -q / -math.expm1(-eps * b)


def nu_box_radius(p: np.ndarray, eps: float, tol: float, a: float, b: float,
                  interior: int = 0) -> int:
    lower, upper = nu_exact_bounds(p, eps, a, b)
    spread = upper - lower
    if spread <= tol:
        return interior + 1
    return interior + max(1, int(math.ceil(math.log(spread / tol) / (eps * a))))


@dataclass
class StationaryValue:
    eps: float
    p: Tuple[float, ...]
    box: Box
    grid: BoxGrid = field(repr=False)
    values: np.ndarray = field(repr=False)
    interior: np.ndarray = field(repr=False)
    tol: float
    sweeps: int
    residual: Optional[float] = None

    def at(self, x: Sequence[int]) -> float:
        return float(self.values[self.grid.index(x)])

    def as_dict(self) -> Dict[Tuple[int, ...], float]:
        return {tuple(int(v) for v in self.grid.sites[i]): float(self.values[i])
                for i in np.flatnonzero(self.interior)}

    def bounds_violation(self, a: float, b: float) -> Dict[str, float]:
        """Excess over the exact discounted bounds and over the first-order upper bound"""
        pv = np.asarray(self.p)
        lower, upper = nu_exact_bounds(pv, self.eps, a, b)
        vals = self.values[self.interior]
        slack = 1e-12 * max(1.0, abs(lower))
        first_order_upper = -sup_norm(pv) / (self.eps * b)
        return {
            "exact": float(max(0.0, (lower - vals).max() - slack, (vals - upper).max() - slack)),
            "first_order_upper": float(max(0.0, (vals - first_order_upper).max() - slack)),
        }

    def lipschitz_violation(self, a: float, b: float) -> float:
        """Excess of |ν(x) - ν(x+α)| over ((a+b)/a)|p|_∞ on interior neighbor pairs"""
        bound = (a + b) / a * sup_norm(np.asarray(self.p))
        nbr = self.grid.neighbors
        idx = np.flatnonzero(self.interior)
        worst = 0.0
        for k in range(0, nbr.shape[0], 2):
            j = nbr[k, idx]
            ok = (j >= 0) & self.interior[np.maximum(j, 0)]
            if ok.any():
                gap = np.abs(self.values[idx[ok]] - self.values[j[ok]]).max()
                worst = max(worst, float(gap) - bound - 2 * self.tol)
        return max(0.0, worst)


def nu(env: Environment, p: Sequence[float], eps: float, tol: Optional[float] = None,
       interior_radius: int = 0, center: Optional[Sequence[int]] = None) -> StationaryValue:
    """Fixed point of ν(x) = min_α [p·α + e^{-ετ(x,α)} ν(x+α)] by Jacobi value iteration.

    Sites at ℓ¹ distance <= interior_radius from center are accurate to tol.
    """
    tol = Config.NU_TOL if tol is None else tol
    if eps <= 0 or tol <= 0:
        raise ConfigError(f"nu needs eps > 0 and tol > 0, got eps={eps} tol={tol}")
    d = env.dimension
    pv = as_momentum(p, d)
    center = tuple([0] * d) if center is None else as_point(center, d)
    a, b = env.bounds.a, env.bounds.b
    lower, upper = nu_exact_bounds(pv, eps, a, b)
    radius = nu_box_radius(pv, eps, tol, a, b, interior_radius)
    box = Box(center, radius)
    grid = box.grid()
    nbr = grid.neighbors
    boundary = (nbr < 0).any(axis=0)
    active = np.flatnonzero(~boundary)

    values = np.full(len(grid), upper)
    values[boundary] = 0.5 * (lower + upper)
    disc = np.exp(-eps * env.edge_weights(grid.sites[active]))
    pa = direction_vectors(d) @ pv
    act_nbr = nbr[:, active].T
    threshold = tol * -math.expm1(-eps * a)

    start_ms = int(time.time() * 1000)
    change = np.inf
    for sweep in range(1, Config.NU_MAX_SWEEPS + 1):
        new = (pa[None, :] + disc * values[act_nbr]).min(axis=1)
        change = float(np.max(np.abs(new - values[active]))) if active.size else 0.0
        values[active] = new
        if change < threshold:
            break
    else:
        log_solver_event("nu", "value_iteration", "failed", start_ms, int(time.time() * 1000),
                         error="sweep cap reached", sweeps=Config.NU_MAX_SWEEPS, change=change)
        raise NonConvergenceError(
            f"nu did not converge in {Config.NU_MAX_SWEEPS} sweeps (last change {change:.3e})"
        )
    log_solver_event("nu", "value_iteration", "success", start_ms, int(time.time() * 1000),
                     sweeps=sweep, radius=radius, sites=len(grid), change=change)
    interior = grid.l1_offset <= interior_radius
    return StationaryValue(eps=float(eps), p=tuple(pv), box=box, grid=grid, values=values,
                           interior=interior, tol=float(tol), sweeps=sweep)


def hjb_residual(nu_value: StationaryValue, env: Environment, p: Sequence[float]) -> float:
    """max over interior x of |ε ν(x) + ℋ(ν, p, x)|; residual / ε is the empirical constant C"""
    pv = as_momentum(p, env.dimension)
    grid = nu_value.grid
    idx = np.flatnonzero(nu_value.interior & (grid.neighbors >= 0).all(axis=0))
    if idx.size == 0:
        nu_value.residual = 0.0
        return 0.0
    vals = nu_value.values
    ham = hamiltonian_kernel(vals[idx], vals[grid.neighbors[:, idx].T],
                             env.edge_weights(grid.sites[idx]), pv)
    residual = float(np.max(np.abs(nu_value.eps * vals[idx] + ham)))
    nu_value.residual = residual
    logger.info("hjb_residual_computed", eps=nu_value.eps, residual=residual,
                constant=residual / nu_value.eps)
    return residual


def check_comparison(env: Environment, p: Sequence[float], phi: TerminalCost, samples: int,
                     seed: int, t_max: float, x_radius: int = 3) -> Dict:
    """Check φ(x) - t·sup⁺ℋ <= μ(x,t) <= φ(x) - inf ℋ·(t-b)⁺ on sampled (x, t).

    When inf ℋ < 0 the upper side reads μ <= φ(x) - t·inf ℋ. Both extrema are taken over a
    box holding every sampled reachable set plus one layer.
    """
    d = env.dimension
    pv = as_momentum(p, d)
    b = env.bounds.b
    keys = np.array([[i, c] for i in range(samples) for c in range(d + 1)], dtype=np.int64)
    u = uniform(seed, PROBE_STREAM, keys).reshape(samples, d + 1)
    xs = np.floor(u[:, :d] * (2 * x_radius + 1)).astype(np.int64) - x_radius
    ts = u[:, d] * t_max

    outer = Box(tuple([0] * d), d * x_radius + reach_radius(t_max, env.bounds) + 1)
    grid = outer.grid()
    inner = np.flatnonzero((grid.neighbors >= 0).all(axis=0))
    center_vals = phi(grid.sites[inner])
    nbr_vals = np.column_stack([phi(grid.sites[inner] + v) for v in direction_vectors(d)])
    ham = hamiltonian_kernel(center_vals, nbr_vals, env.edge_weights(grid.sites[inner]), pv)
    h_sup, h_inf = float(ham.max()), float(ham.min())

    violations = []
    worst_lower = worst_upper = 0.0
    for x, t in zip(xs, ts):
        x = tuple(int(v) for v in x)
        value = mu(env, pv, x, float(t), phi).value
        phi_x = phi.at(x)
        lower = phi_x - t * max(h_sup, 0.0)
        upper = phi_x - h_inf * (max(t - b, 0.0) if h_inf >= 0 else t)
        worst_lower = max(worst_lower, lower - value)
        worst_upper = max(worst_upper, value - upper)
        if lower - value > 1e-9 or value - upper > 1e-9:
            violations.append({"x": list(x), "t": float(t), "mu": value,
                               "lower": lower, "upper": upper})
    logger.info("comparison_checked", samples=samples, violations=len(violations),
                sup_hamiltonian=h_sup, inf_hamiltonian=h_inf)
    return {
        "samples": samples,
        "sup_hamiltonian": h_sup,
        "inf_hamiltonian": h_inf,
        "hamiltonian_box_radius": outer.radius,
        "max_lower_excess": float(worst_lower),
        "max_upper_excess": float(worst_upper),
        "violations": violations,
    }
