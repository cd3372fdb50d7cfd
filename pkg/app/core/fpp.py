"""First-passage times, reachable sets and time-constant estimates on finite ℓ¹ boxes.

Passage times are label-setting shortest paths over the directed edges (u, u+α) with
cost τ(u, α), restricted to the box. Distances do not depend on how ties are broken,
so results are independent of evaluation order.
"""
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from app.core.errors import BoxTooSmallError, ConfigError
from app.core.lattice import Box, BoxGrid, WeightBounds, as_point
from app.core.medium import Environment
from app.core.rng import PROBE_STREAM, derive_seed, uniform
from app.core.workers import ordered_map
from app.observability.logger import log_solver_event, logger

# slack on dijkstra's pruning limit; membership is decided on exact values afterwards
LIMIT_SLACK = 1e-9


def edge_graph(grid: BoxGrid, tau: np.ndarray, frozen: Optional[np.ndarray] = None) -> csr_matrix:
    """Sparse directed adjacency of the box; sites flagged frozen have no outgoing edges"""
    n = len(grid)
    nbr = grid.neighbors
    rows = np.tile(np.arange(n, dtype=np.int64), nbr.shape[0])
    cols = nbr.ravel()
    data = tau.T.ravel()
    keep = cols >= 0
    if frozen is not None:
        keep &= ~frozen[rows]
    return csr_matrix((data[keep], (rows[keep], cols[keep])), shape=(n, n))


def shortest_times(grid: BoxGrid, tau: np.ndarray, source_idx: int,
                   limit: float = np.inf, frozen: Optional[np.ndarray] = None) -> np.ndarray:
    graph = edge_graph(grid, tau, frozen)
    return dijkstra(graph, directed=True, indices=source_idx, limit=limit)


@dataclass
class PassageTimeField:
    source: Tuple[int, ...]
    box: Box
    grid: BoxGrid = field(repr=False)
    times: np.ndarray = field(repr=False)

    def __getitem__(self, y: Sequence[int]) -> float:
        return float(self.times[self.grid.index(y)])

    @property
    def values(self) -> Dict[Tuple[int, ...], float]:
        return {pt: float(t) for pt, t in zip(self.grid.points(), self.times) if np.isfinite(t)}

    def dpp_violation(self, env: Environment) -> float:
        """max |T(y) - min_α [T(y-α) + τ(y-α, α)]| over interior sites y != source"""
        nbr = self.grid.neighbors
        tau = env.edge_weights(self.grid.sites)
        interior = (nbr >= 0).all(axis=0)
        interior[self.grid.index(self.source)] = False
        idx = np.flatnonzero(interior)
        if idx.size == 0:
            return 0.0
        best = np.full(idx.size, np.inf)
        for k in range(nbr.shape[0]):
            pred = nbr[k ^ 1, idx]
            best = np.minimum(best, self.times[pred] + tau[pred, k])
        return float(np.max(np.abs(self.times[idx] - best)))

    def bounds_violation(self, bounds: WeightBounds) -> float:
        """Largest excess over a|y-x|_1 <= T <= b|y-x|_1; needs a source-centred box"""
        dist = np.abs(self.grid.sites - np.asarray(self.source)).sum(axis=1)
        low = bounds.a * dist - self.times
        high = self.times - bounds.b * dist
        return float(max(0.0, low.max(), high.max()))


@dataclass
class ReachableSet:
    source: Tuple[int, ...]
    t: float
    sites: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False)

    @property
    def members(self) -> frozenset:
        return frozenset(tuple(int(v) for v in row) for row in self.sites)

    def __len__(self) -> int:
        return self.sites.shape[0]

    def __contains__(self, y) -> bool:
        return tuple(int(v) for v in y) in self.members


def safe_radius(target: Sequence[int], bounds: WeightBounds) -> int:
    """Box radius beyond which no path can beat the direct one to target"""
    l1 = sum(abs(int(v)) for v in target)
    return int(math.ceil(bounds.ratio * l1)) + 1


def reach_radius(t: float, bounds: WeightBounds) -> int:
    return int(math.ceil(t / bounds.a)) + 1


def passage_times(env: Environment, source: Sequence[int], box: Box) -> PassageTimeField:
    source = as_point(source, env.dimension)
    if box.radius < 1:
        raise ConfigError(f"passage_times needs box radius >= 1, got {box.radius}")
    grid = box.grid()
    tau = env.edge_weights(grid.sites)
    times = shortest_times(grid, tau, grid.index(source))
    logger.debug("passage_times_computed", source=source, radius=box.radius, sites=len(grid))
    return PassageTimeField(source=source, box=box, grid=grid, times=times)


def reachable_set(env: Environment, source: Sequence[int], t: float,
                  box: Optional[Box] = None, frozen_outside: Optional[float] = None) -> ReachableSet:
    """Sites reached from source within time t.

    frozen_outside=K removes the outgoing edges of every site with Euclidean norm > K,
    so paths stop once they leave the ball.
    """
    source = as_point(source, env.dimension)
    if t < 0:
        raise ConfigError(f"time horizon must be nonnegative, got {t}")
    need = reach_radius(t, env.bounds)
    if box is None:
        box = Box(source, need)
    offset = sum(abs(s - c) for s, c in zip(source, box.center))
    if box.radius - offset < need:
        raise BoxTooSmallError(
            f"box {box} cannot hold R({source}, {t}): need radius {need} around the source"
        )
    grid = box.grid()
    tau = env.edge_weights(grid.sites)
    frozen = None
    if frozen_outside is not None:
        frozen = np.sqrt((grid.sites.astype(np.float64) ** 2).sum(axis=1)) > frozen_outside
    times = shortest_times(grid, tau, grid.index(source), limit=t + LIMIT_SLACK * max(1.0, t),
                           frozen=frozen)
    inside = times <= t
    return ReachableSet(source=source, t=float(t), sites=grid.sites[inside], times=times[inside])


def nearest_lattice_point(v: Sequence[float]) -> Tuple[int, ...]:
    """Round to nearest; exact halves go to the smaller coordinate"""
    return tuple(int(c) for c in np.ceil(np.asarray(v, dtype=np.float64) - 0.5))


def mean_stderr(samples: Sequence[float]) -> Tuple[float, float]:
    values = np.asarray(samples, dtype=np.float64)
    if values.size > 1:
        return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))
    return float(values.mean()), 0.0


@dataclass
class TimeConstantEstimate:
    direction: Tuple[float, ...]
    n: int
    target: Tuple[int, ...]
    estimate: float
    stderr: float
    samples: List[float]
    box_radius: int
    metadata: Dict = field(default_factory=dict)

    def rows(self) -> List[Dict]:
        label = ",".join(f"{v:g}" for v in self.direction)
        return [
            {"direction": label, "n": self.n, "replica": r, "T": t, "m_hat": t / self.n,
             "stderr": self.stderr}
            for r, t in enumerate(self.samples)
        ]


def replica_env(env: Environment, r: int) -> Environment:
    return env.with_seed(derive_seed(env.seed, "replica", r))


def time_constant_sweep(env: Environment, directions: Sequence[Sequence[float]], n: int,
                        replicas: int, radius: Optional[int] = None) -> List[TimeConstantEstimate]:
    """m̂(x) for several directions; each replica's field serves every direction"""
    if n < 1 or replicas < 1:
        raise ConfigError(f"time constant needs n >= 1 and replicas >= 1, got n={n} replicas={replicas}")
    d = env.dimension
    dirs = [tuple(float(v) for v in x) for x in directions]
    if any(len(x) != d for x in dirs):
        raise ConfigError(f"directions must have dimension {d}")
    targets = [nearest_lattice_point(np.asarray(x) * n) for x in dirs]
    safe = max(safe_radius(tg, env.bounds) for tg in targets)
    metadata = {"safe_radius": safe}
    if radius is None:
        radius = safe
    elif radius < safe:
        metadata["warning"] = f"box radius {radius} below safe radius {safe}; times may be overestimated"
        logger.warning("box_below_safe_radius", radius=radius, safe_radius=safe)

    origin = tuple([0] * d)
    grid = Box(origin, radius).grid()
    _ = grid.neighbors  # build the cached table before threads share the grid
    target_idx = np.asarray([grid.index(tg) for tg in targets])
    limit = max(env.bounds.b * sum(abs(v) for v in tg) for tg in targets)
    source_idx = grid.index(origin)

    def one_replica(r: int) -> np.ndarray:
        renv = replica_env(env, r)
        times = shortest_times(grid, renv.edge_weights(grid.sites), source_idx,
                               limit=limit * (1 + LIMIT_SLACK) + LIMIT_SLACK)
        return times[target_idx]

    start_ms = int(time.time() * 1000)
    per_replica = ordered_map(one_replica, range(replicas))
    table = np.vstack(per_replica)
    log_solver_event("timeconstant", "time_constant_sweep", "success", start_ms,
                     int(time.time() * 1000), directions=len(dirs), n=n, replicas=replicas,
                     radius=radius)

    estimates = []
    for j, (x, tg) in enumerate(zip(dirs, targets)):
        samples = [float(v) for v in table[:, j]]
        est, se = mean_stderr([v / n for v in samples])
        estimates.append(TimeConstantEstimate(direction=x, n=n, target=tg, estimate=est, stderr=se,
                                              samples=samples, box_radius=radius,
                                              metadata=dict(metadata)))
    return estimates


def time_constant(env: Environment, x: Sequence[float], n: int, replicas: int,
                  radius: Optional[int] = None) -> TimeConstantEstimate:
    """Mean over replicas of T(0, [nx]) / n with its standard error"""
    return time_constant_sweep(env, [x], n, replicas, radius)[0]


def check_subadditivity(env: Environment, probes: int, seed: int, max_coord: int = 4) -> Dict:
    """Sampled T(0, y1+y2) <= T(0, y1) + T(y1, y1+y2)"""
    d = env.dimension
    keys = np.array([[i, j] for i in range(probes) for j in range(2 * d)], dtype=np.int64)
    u = uniform(seed, PROBE_STREAM, keys).reshape(probes, 2 * d)
    coords = np.floor(u * (2 * max_coord + 1)).astype(np.int64) - max_coord
    violations = []
    worst = 0.0
    for i in range(probes):
        y1, y2 = tuple(coords[i, :d]), tuple(coords[i, d:])
        y12 = tuple(a + b for a, b in zip(y1, y2))
        origin = tuple([0] * d)
        r0 = max(safe_radius(y1, env.bounds), safe_radius(y12, env.bounds))
        from_origin = passage_times(env, origin, Box(origin, r0))
        from_y1 = passage_times(env, y1, Box(y1, safe_radius(y2, env.bounds)))
        excess = from_origin[y12] - from_origin[y1] - from_y1[y12]
        worst = max(worst, excess)
        if excess > 1e-9:
            violations.append({"y1": list(y1), "y2": list(y2), "excess": float(excess)})
    return {"probes": probes, "violations": violations, "max_excess": float(worst)}
