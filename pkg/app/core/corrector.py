"""Minimizers and correctors of the variational formula for diagonal-symmetric media.

When every coordinate translation acts the same way, weights are constant along the
hyperplanes Σx_i = const and a candidate reduces to one scalar f(ω) per atom of a finite
probability space. The Hamiltonian becomes

    H_sym(t) = max_i |t + p_i| / q_i,

a convex piecewise-linear function with a unique minimizer x*, and the problem reads
minimize max_ω H_sym(f(ω), ω) subject to E[f] = 0.

`run` is the descent iteration: atoms above the mean level move toward their minimizers,
atoms below absorb the displacement, and the mean-zero constraint is restored each step.
`brute_force_minimax` solves the same problem by bisection on the level and serves as an
independent oracle.

Two closed forms that circulate for this problem are kept as written, for comparison:
`closed_form_diagonal_candidate(space, "max")` and `antidiagonal_formula`. Neither
is a corrector in general; the "min" candidate and (q_2 - q_1)/(q_1 + q_2) are.
"""
import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ValidationError, model_validator

from app.config import Config
from app.core.errors import ConfigError, MismatchError, NonConvergenceError, NumericalError, WrongKindError
from app.core.medium import DiagonalSymmetricKind, Environment, MediumSpec, PROB_TOL
from app.core.varform import GradientCandidate
from app.observability.logger import log_solver_event, logger

MEAN_TOL = 1e-12


class AtomicSpace(BaseModel):
    atoms: List[List[float]]
    probs: Optional[List[float]] = None
    periodic: bool = False

    @model_validator(mode="after")
    def _check(self):
        if not self.atoms:
            raise ValueError("atomic space needs at least one atom")
        d = len(self.atoms[0])
        if d == 0 or any(len(q) != d for q in self.atoms):
            raise ValueError("atoms must be nonempty vectors of equal length")
        if any(not np.isfinite(v) or v <= 0 for q in self.atoms for v in q):
            raise ValueError("atom weights must be finite and positive")
        n = len(self.atoms)
        if self.probs is None:
            if not self.periodic:
                raise ValueError("probs are required unless the space is periodic")
            self.probs = [1.0 / n] * n
        if len(self.probs) != n:
            raise ValueError(f"{n} atoms but {len(self.probs)} probabilities")
        if any(p < 0 for p in self.probs):
            raise ValueError("probabilities must be nonnegative")
        total = sum(self.probs)
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"probabilities must sum to 1 within {PROB_TOL}, got {total!r}")
        if self.periodic and any(abs(p - 1.0 / n) > PROB_TOL for p in self.probs):
            raise ValueError("a periodic space carries uniform probabilities 1/n")
        self.probs = [p / total for p in self.probs]
        return self

    @property
    def n(self) -> int:
        return len(self.atoms)

    @property
    def dimension(self) -> int:
        return len(self.atoms[0])

    @property
    def q(self) -> np.ndarray:
        return np.asarray(self.atoms, dtype=np.float64)

    @property
    def pi(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=np.float64)

    @property
    def a(self) -> float:
        return float(self.q.min())

    @property
    def b(self) -> float:
        return float(self.q.max())

    @classmethod
    def periodic_space(cls, atoms: Sequence[Sequence[float]]) -> "AtomicSpace":
        return cls(atoms=[list(map(float, q)) for q in atoms], periodic=True)

    @classmethod
    def from_medium(cls, spec: MediumSpec) -> "AtomicSpace":
        if not isinstance(spec.kind, DiagonalSymmetricKind):
            raise WrongKindError(f"atomic space needs a diagonal_symmetric medium, got {spec.kind.type}")
        return cls(atoms=spec.kind.atoms, probs=spec.kind.probs)

    @classmethod
    def parse(cls, document: Dict) -> "AtomicSpace":
        try:
            return cls.model_validate(document)
        except ValidationError as e:
            raise ConfigError(f"invalid atomic space: {e}") from e

    @classmethod
    def load(cls, path: str) -> "AtomicSpace":
        try:
            document = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read atomic space {path}: {e}") from e
        return cls.parse(document)


def _momentum(p: Sequence[float], d: int) -> np.ndarray:
    pv = np.asarray(p, dtype=np.float64).reshape(-1)
    if pv.size != d or not np.all(np.isfinite(pv)):
        raise ConfigError(f"momentum must be a finite {d}-vector, got {list(p)}")
    return pv


def h_sym(t: float, p: Sequence[float], q: Sequence[float]) -> float:
    """max_i |t + p_i| / q_i"""
    return float(np.max(np.abs(t + np.asarray(p, dtype=np.float64)) / np.asarray(q, dtype=np.float64)))


def h_sym_atoms(f: np.ndarray, p: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """H_sym(f_j, atom j) for every atom"""
    return (np.abs(f[:, None] + p[None, :]) / Q).max(axis=1)


@dataclass(frozen=True)
class HsymMinimum:
    x: float
    minval: float
    p: Tuple[float, ...]
    q: Tuple[float, ...]

    def derivatives(self, t: float) -> Tuple[float, float]:
        """(left, right) derivatives of H_sym at t"""
        p, q = np.asarray(self.p), np.asarray(self.q)
        vals = np.abs(t + p) / q
        top = vals.max()
        active = vals >= top - 1e-12 * max(1.0, top)
        shifted = t + p[active]
        inv = 1.0 / q[active]
        sign = np.sign(shifted)
        right = np.where(sign == 0, inv, sign * inv)
        left = np.where(sign == 0, -inv, sign * inv)
        return float(left.min()), float(right.max())


def argmin_h_sym(p: Sequence[float], q: Sequence[float]) -> HsymMinimum:
    """Exact minimizer: the optimum sits at a kink -p_i or where two pieces cross"""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    candidates = list(-p)
    for i in range(p.size):
        for j in range(i + 1, p.size):
            for s in (1.0, -1.0):
                denom = q[j] - s * q[i]
                if denom != 0:
                    candidates.append((s * p[j] * q[i] - p[i] * q[j]) / denom)
    cand = np.asarray(candidates)
    vals = (np.abs(cand[:, None] + p[None, :]) / q[None, :]).max(axis=1)
    k = int(np.argmin(vals))
    return HsymMinimum(x=float(cand[k]), minval=float(vals[k]), p=tuple(p), q=tuple(q))


@dataclass
class IterationState:
    f: np.ndarray
    h: np.ndarray
    mu0: float
    d: float
    min0: np.ndarray
    S: np.ndarray
    I: np.ndarray
    S_plus: np.ndarray
    S_minus: np.ndarray
    xi: Optional[float] = None
    iteration: int = 0

    @property
    def sup(self) -> float:
        return float(self.h.max())

    def as_dict(self) -> Dict:
        def members(mask):
            return [int(i) for i in np.flatnonzero(mask)]

        return {
            "iteration": self.iteration, "f": self.f.tolist(), "h": self.h.tolist(),
            "mu0": self.mu0, "d": self.d, "xi": self.xi,
            "MIN0": members(self.min0), "S": members(self.S), "I": members(self.I),
            "S_plus": members(self.S_plus), "S_minus": members(self.S_minus),
        }


class CorrectorProblem:
    """One (space, p) instance with per-atom minimizers precomputed"""

    def __init__(self, space: AtomicSpace, p: Sequence[float], tol: Optional[float] = None):
        self.space = space
        self.p = _momentum(p, space.dimension)
        self.tol = Config.DEFAULT_TOL if tol is None else tol
        if self.tol <= 0:
            raise ConfigError(f"tolerance must be positive, got {self.tol}")
        self.Q = space.q
        self.pi = space.pi
        self.a, self.b = space.a, space.b
        self.minima = [argmin_h_sym(self.p, q) for q in self.Q]
        self.xstar = np.array([m.x for m in self.minima])
        self.minval = np.array([m.minval for m in self.minima])

    def project(self, f: np.ndarray) -> np.ndarray:
        return f - float(self.pi @ f)

    def state(self, f: np.ndarray, iteration: int = 0) -> IterationState:
        f = np.asarray(f, dtype=np.float64)
        h = h_sym_atoms(f, self.p, self.Q)
        mu0 = float(self.pi @ h)
        d = max(0.0, float(h.max()) - mu0)
        min0 = h <= self.minval + self.tol
        S, I = h > mu0 + self.tol, h < mu0 - self.tol
        S_plus = np.zeros(self.space.n, dtype=bool)
        S_minus = np.zeros(self.space.n, dtype=bool)
        for i in np.flatnonzero(S & ~min0):
            left, right = self.minima[i].derivatives(f[i])
            S_plus[i] = right < 0
            S_minus[i] = left > 0
        return IterationState(f=f, h=h, mu0=mu0, d=d, min0=min0, S=S, I=I,
                              S_plus=S_plus, S_minus=S_minus, iteration=iteration)

    def step(self, state: IterationState) -> IterationState:
        """One descent step; a state with nothing above the mean is a fixpoint"""
        f, h = state.f, state.h
        gap = h - state.mu0
        target = self.xstar - f
        delta = np.zeros_like(f)
        delta[state.S_plus] = np.minimum(self.a * gap, target)[state.S_plus]
        delta[state.S_minus] = np.maximum(-self.a * gap, target)[state.S_minus]
        moved = state.S_plus | state.S_minus
        num = float(self.pi[moved] @ delta[moved])
        below = state.I if state.I.any() else h < state.mu0
        den = float(self.pi[below] @ (self.a * (state.mu0 - h[below])))
        if den > 0:
            xi = -num / den
        elif abs(num) <= MEAN_TOL:
            xi = 0.0
        else:
            raise NumericalError(f"no mass below the mean level to balance a move of {num:.3e}")
        # |xi| <= 1 in exact arithmetic; project() absorbs the clipped remainder
        xi = min(1.0, max(-1.0, xi))
        delta[below] = self.a * xi * (state.mu0 - h[below])
        new = self.state(self.project(f + delta), state.iteration + 1)
        new.xi = xi
        return new

    def descent_certificate(self, state: IterationState) -> bool:
        """False when atoms sit on both sides of their minimizers with none at its minimum,
        so a balanced move lowers every value"""
        if state.min0.any():
            return True
        below = state.f < self.xstar
        above = state.f > self.xstar
        return not (below.any() and above.any())

    def pinch(self, state: IterationState) -> IterationState:
        """Raise atoms left of their minimizers and lower those to the right, in balance"""
        gap = self.xstar - state.f
        below = (state.f < self.xstar) & ~state.min0
        above = (state.f > self.xstar) & ~state.min0
        mass_b, mass_a = float(self.pi[below].sum()), float(self.pi[above].sum())
        step = min(mass_b * float(gap[below].min()), mass_a * float((-gap[above]).min()))
        f = state.f.copy()
        f[below] += step / mass_b
        f[above] -= step / mass_a
        return self.state(self.project(f), state.iteration + 1)


class OutcomeKind(str, Enum):
    CORRECTOR_FOUND = "CorrectorFound"
    MINIMIZER_NOT_CORRECTOR = "MinimizerNotCorrector"
    LIMIT_CORRECTOR = "LimitCorrector"


@dataclass
class Outcome:
    kind: OutcomeKind
    f: np.ndarray
    h: np.ndarray
    hbar: float
    iterations: int
    pinch_moves: int = 0
    max_abs_xi: float = 0.0
    trace: List[Dict] = field(default_factory=list)

    def as_dict(self) -> Dict:
        return {"kind": self.kind.value, "f": self.f.tolist(), "h": self.h.tolist(),
                "hbar": self.hbar, "iterations": self.iterations,
                "pinch_moves": self.pinch_moves, "max_abs_xi": self.max_abs_xi}


def iterate_step(state: IterationState, space: AtomicSpace, p: Sequence[float],
                 tol: Optional[float] = None) -> IterationState:
    return CorrectorProblem(space, p, tol).step(state)


def initial_state(space: AtomicSpace, p: Sequence[float], f0: Optional[Sequence[float]] = None,
                  tol: Optional[float] = None) -> IterationState:
    problem = CorrectorProblem(space, p, tol)
    f = np.zeros(space.n) if f0 is None else np.asarray(f0, dtype=np.float64)
    return problem.state(f)


def run(space: AtomicSpace, p: Sequence[float], f0: Optional[Sequence[float]] = None,
        tol: Optional[float] = None, max_iter: Optional[int] = None,
        trace: bool = False) -> Outcome:
    problem = CorrectorProblem(space, p, tol)
    tol = problem.tol
    max_iter = Config.MAX_ITER if max_iter is None else max_iter
    f = np.zeros(space.n) if f0 is None else np.asarray(f0, dtype=np.float64)
    if f.size != space.n:
        raise ConfigError(f"f0 has {f.size} entries, space has {space.n} atoms")
    if abs(float(problem.pi @ f)) > 1e-10:
        raise ConfigError("f0 must have zero mean")
    state = problem.state(problem.project(f))
    history: List[Dict] = []
    pinches = 0
    max_xi = 0.0
    short_descent = False
    start_ms = int(time.time() * 1000)

    def finish(kind: OutcomeKind) -> Outcome:
        if trace:
            history.append(state.as_dict())
        outcome = Outcome(kind=kind, f=state.f, h=state.h, hbar=state.sup,
                          iterations=state.iteration, pinch_moves=pinches, max_abs_xi=max_xi,
                          trace=history)
        log_solver_event("corrector", "descent_iteration", "success", start_ms,
                         int(time.time() * 1000), kind=kind.value, hbar=outcome.hbar,
                         iterations=outcome.iterations, pinch_moves=pinches)
        return outcome

    while True:
        if state.d <= tol:
            if problem.descent_certificate(state):
                return finish(OutcomeKind.CORRECTOR_FOUND)
            if state.iteration >= max_iter:
                break
            if trace:
                history.append(state.as_dict())
            state = problem.pinch(state)
            pinches += 1
            short_descent = False
            logger.debug("corrector_pinch", iteration=state.iteration, sup=state.sup)
            continue
        if state.min0.any() and state.h[state.min0].max() >= state.sup - tol:
            return finish(OutcomeKind.MINIMIZER_NOT_CORRECTOR)
        if short_descent:
            raise NonConvergenceError(
                f"sup decreased by less than d*a/b at iteration {state.iteration} without reaching a minimum"
            )
        if state.iteration >= max_iter:
            break
        if trace:
            history.append(state.as_dict())
        new = problem.step(state)
        max_xi = max(max_xi, abs(new.xi))
        drop = state.sup - new.sup
        if drop < -tol:
            raise NonConvergenceError(f"sup increased by {-drop:.3e} at iteration {new.iteration}")
        short_descent = drop < state.d * problem.a / problem.b - tol
        state = new

    if state.d < 10 * tol:
        return finish(OutcomeKind.LIMIT_CORRECTOR)
    log_solver_event("corrector", "descent_iteration", "failed", start_ms, int(time.time() * 1000),
                     error="iteration cap", d=state.d, iterations=state.iteration)
    raise NonConvergenceError(f"no termination after {max_iter} iterations (d={state.d:.3e})")


def sublevel_intervals(space: AtomicSpace, p: np.ndarray, c: float) -> Tuple[np.ndarray, np.ndarray]:
    """[l_i, r_i] = {t : H_sym(t, atom i) <= c}; empty when l_i > r_i"""
    Q = space.q
    left = (-p[None, :] - c * Q).max(axis=1)
    right = (-p[None, :] + c * Q).min(axis=1)
    return left, right


def brute_force_minimax(space: AtomicSpace, p: Sequence[float],
                        tol: Optional[float] = None) -> Tuple[float, np.ndarray]:
    """min over mean-zero f of max_i H_sym(f_i), by bisection on the level"""
    tol = Config.DEFAULT_TOL if tol is None else tol
    pv = _momentum(p, space.dimension)
    pi = space.pi

    def feasible(c: float) -> bool:
        left, right = sublevel_intervals(space, pv, c)
        if np.any(left > right):
            return False
        return float(pi @ left) <= 0.0 <= float(pi @ right)

    lo = max(argmin_h_sym(pv, q).minval for q in space.q)
    hi = float(h_sym_atoms(np.zeros(space.n), pv, space.q).max())
    if feasible(lo):
        hi = lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    left, right = sublevel_intervals(space, pv, hi)
    right = np.maximum(left, right)
    low_mean, high_mean = float(pi @ left), float(pi @ right)
    theta = 0.0 if high_mean <= low_mean else min(1.0, max(0.0, -low_mean / (high_mean - low_mean)))
    witness = left + theta * (right - left)
    return float(hi), witness


def lift_to_lattice(space: AtomicSpace, f: Sequence[float], env: Environment):
    """φ with φ(x + e_i) - φ(x) = f(atom at level Σx) for every i, and φ(0) = 0"""
    spec = env.spec
    if not isinstance(spec.kind, DiagonalSymmetricKind):
        raise WrongKindError(f"lift needs a diagonal_symmetric medium, got {env.kind}")
    env_atoms = np.asarray(spec.kind.atoms, dtype=np.float64)
    if env_atoms.shape != space.q.shape or not np.allclose(env_atoms, space.q, rtol=0, atol=1e-12) \
            or not np.allclose(spec.kind.probs, space.pi, rtol=0, atol=1e-12):
        raise MismatchError("medium atoms or probabilities differ from the atomic space")
    fv = np.asarray(f, dtype=np.float64)
    if fv.size != space.n:
        raise MismatchError(f"f has {fv.size} entries, space has {space.n} atoms")

    def evaluate(pts: np.ndarray) -> np.ndarray:
        levels = pts.sum(axis=1)
        lo, hi = min(int(levels.min()), 0), max(int(levels.max()), 0)
        steps = fv[env.atoms_at_levels(np.arange(lo, hi))] if hi > lo else np.zeros(0)
        cum = np.concatenate([[0.0], np.cumsum(steps)])
        return cum[levels - lo] - cum[-lo]

    mean_zero = abs(float(space.pi @ fv)) <= 1e-10
    return GradientCandidate(evaluate, mean_zero=mean_zero, label="lifted_corrector")


def closed_form_diagonal_candidate(space: AtomicSpace, reducer: str = "min") -> np.ndarray:
    """f = r(q)/E[r(q)] - 1 with r the coordinate-wise min or max of each atom (p = (1, …, 1))"""
    if reducer not in ("min", "max"):
        raise ConfigError(f"reducer must be 'min' or 'max', got {reducer}")
    r = space.q.min(axis=1) if reducer == "min" else space.q.max(axis=1)
    return r / float(space.pi @ r) - 1.0


def antidiagonal_formula(q: Sequence[float]) -> float:
    """(q_1 - q_2)/(q_1 + q_2); the minimizer for p = (-1, 1) is the negative of this"""
    return (q[0] - q[1]) / (q[0] + q[1])
