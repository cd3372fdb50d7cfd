"""Independent reference computations used to cross-check the solvers on small instances."""
from itertools import product
from typing import Dict, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.optimize import linprog

from app.core.cell import TerminalCost, as_momentum
from app.core.errors import ConfigError, NumericalError, WrongKindError
from app.core.lattice import Box, Direction, as_point, direction_vectors
from app.core.medium import Environment, PeriodicKind


def box_digraph(env: Environment, box: Box) -> nx.DiGraph:
    """Directed graph of the box with edge attribute `weight` = τ(u, α)"""
    G = nx.DiGraph()
    grid = box.grid()
    tau = env.edge_weights(grid.sites)
    points = list(grid.points())
    G.add_nodes_from(points)
    vecs = direction_vectors(env.dimension)
    for i, u in enumerate(points):
        for k, v in enumerate(vecs):
            w = tuple(int(c) for c in np.asarray(u) + v)
            if box.contains(w):
                G.add_edge(u, w, weight=float(tau[i, k]))
    return G


def simple_path_times(env: Environment, source: Sequence[int], box: Box) -> Dict[Tuple[int, ...], float]:
    """Passage times by exhaustive enumeration of simple paths; tiny boxes only"""
    source = as_point(source, env.dimension)
    G = box_digraph(env, box)
    times = {source: 0.0}
    for target in G.nodes:
        if target == source:
            continue
        best = np.inf
        for path in nx.all_simple_paths(G, source, target):
            best = min(best, sum(G[u][v]["weight"] for u, v in zip(path, path[1:])))
        times[target] = float(best)
    return times


def networkx_times(env: Environment, source: Sequence[int], box: Box) -> Dict[Tuple[int, ...], float]:
    G = box_digraph(env, box)
    lengths = nx.single_source_dijkstra_path_length(G, as_point(source, env.dimension), weight="weight")
    return {node: float(t) for node, t in lengths.items()}


def walk_mu(env: Environment, p: Sequence[float], x: Sequence[int], t: float,
            phi: Optional[TerminalCost] = None) -> float:
    """μ(x, t) by depth-first enumeration of every walk with elapsed time <= t.

    The running cost is accumulated step by step as Σ p·α_i rather than telescoped.
    """
    x = as_point(x, env.dimension)
    pv = as_momentum(p, env.dimension)
    phi = phi or TerminalCost.zero()
    directions = Direction.all(env.dimension)
    cache: Dict[Tuple[Tuple[int, ...], int], float] = {}
    best = phi.at(x)
    stack = [(x, 0.0, 0.0)]
    while stack:
        y, elapsed, cost = stack.pop()
        best = min(best, cost + phi.at(y))
        for alpha in directions:
            key = (y, alpha.index)
            if key not in cache:
                cache[key] = env.weight(y, alpha)
            nxt = elapsed + cache[key]
            if nxt <= t:
                step = tuple(a + b for a, b in zip(y, alpha.vector(env.dimension)))
                stack.append((step, nxt, cost + float(pv[alpha.axis]) * alpha.sign))
    return float(best)


def _quotient(env: Environment):
    if not isinstance(env.spec.kind, PeriodicKind):
        raise WrongKindError(f"quotient oracles need a periodic medium, got {env.kind}")
    period = tuple(env.spec.kind.period)
    cells = [tuple(c) for c in product(*[range(n) for n in period])]
    index = {c: i for i, c in enumerate(cells)}
    vecs = direction_vectors(env.dimension)
    tau = env.edge_weights(np.asarray(cells, dtype=np.int64))
    succ = np.array([[index[tuple(int(v) for v in np.mod(np.asarray(c) + vec, period))]
                      for vec in vecs] for c in cells])
    return cells, succ, tau, vecs


def periodic_nu_exact(env: Environment, p: Sequence[float], eps: float,
                      max_rounds: int = 1000) -> Dict[Tuple[int, ...], float]:
    """ν_ε on the period cell by policy iteration with exact linear solves"""
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    cells, succ, tau, vecs = _quotient(env)
    pv = as_momentum(p, env.dimension)
    reward = vecs @ pv
    disc = np.exp(-eps * tau)
    n = len(cells)
    rows = np.arange(n)
    policy = np.argmin(np.broadcast_to(reward, (n, reward.size)), axis=1)
    for _ in range(max_rounds):
        P = np.zeros((n, n))
        np.add.at(P, (rows, succ[rows, policy]), disc[rows, policy])
        v = np.linalg.solve(np.eye(n) - P, reward[policy])
        q = reward[None, :] + disc * v[succ]
        improved = np.argmin(q, axis=1)
        keep = q[rows, policy] <= q[rows, improved] + 1e-14 * (1 + np.abs(v))
        improved[keep] = policy[keep]
        if np.array_equal(improved, policy):
            return {c: float(v[i]) for i, c in enumerate(cells)}
        policy = improved
    raise NumericalError(f"policy iteration did not stabilise in {max_rounds} rounds")


def periodic_hbar_lp(env: Environment, p: Sequence[float]) -> float:
    """H̄(p) of a periodic medium as the maximal ratio (-p·displacement)/time over cycles
    of the quotient graph, written as a circulation LP"""
    cells, succ, tau, vecs = _quotient(env)
    pv = as_momentum(p, env.dimension)
    n, m = succ.shape
    gain = np.tile(-(vecs @ pv), n)
    conservation = np.zeros((n, n * m))
    for i in range(n):
        for k in range(m):
            e = i * m + k
            conservation[i, e] += 1.0
            conservation[succ[i, k], e] -= 1.0
    A_eq = np.vstack([conservation, tau.reshape(1, -1)])
    b_eq = np.concatenate([np.zeros(n), [1.0]])
    res = linprog(-gain, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise NumericalError(f"cycle-ratio LP failed: {res.message}")
    return float(-res.fun)
