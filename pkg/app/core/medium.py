"""Random edge-weight environments on Z^d.

Weights are never stored: each τ(x, α) is recomputed from (seed, canonical edge key)
through the counter-based generator in `app.core.rng`, so any window of any size can be
queried in any order.
"""
import hashlib
import json
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from app.core.errors import ConfigError, WrongKindError
from app.core.lattice import Box, Direction, WeightBounds, as_point
from app.core.rng import EDGE_STREAM, LEVEL_STREAM, MASK64, uniform
from app.observability.logger import logger

PROB_TOL = 1e-12


def _normalized(probs: List[float]) -> List[float]:
    if any(p < 0 for p in probs):
        raise ValueError(f"probabilities must be nonnegative, got {probs}")
    total = sum(probs)
    if abs(total - 1.0) > PROB_TOL:
        raise ValueError(f"probabilities must sum to 1 within {PROB_TOL}, got sum {total!r}")
    return [p / total for p in probs]


def _positive(values: Sequence[float], what: str):
    if any(not np.isfinite(v) or v <= 0 for v in values):
        raise ValueError(f"{what} must be finite and positive, got {list(values)}")


class ConstantKind(BaseModel):
    type: Literal["constant"] = "constant"
    c: float

    @field_validator("c")
    @classmethod
    def _check_c(cls, v):
        _positive([v], "constant weight")
        return v


class IidDiscreteKind(BaseModel):
    type: Literal["iid_discrete"] = "iid_discrete"
    values: List[float]
    probs: List[float]

    @model_validator(mode="after")
    def _check(self):
        if not self.values or len(self.values) != len(self.probs):
            raise ValueError("iid_discrete needs matching nonempty values and probs")
        _positive(self.values, "weight values")
        self.probs = _normalized(self.probs)
        return self


class IidUniformKind(BaseModel):
    type: Literal["iid_uniform"] = "iid_uniform"
    lo: float
    hi: float

    @model_validator(mode="after")
    def _check(self):
        _positive([self.lo, self.hi], "uniform endpoints")
        if self.lo > self.hi:
            raise ValueError(f"iid_uniform needs lo <= hi, got [{self.lo}, {self.hi}]")
        return self


class PeriodicKind(BaseModel):
    """Weights tabulated over one period cell; table shape is period + [2d]"""
    type: Literal["periodic"] = "periodic"
    period: List[int]
    table: Any

    @model_validator(mode="after")
    def _check(self):
        if not self.period or any(n < 1 for n in self.period):
            raise ValueError(f"period entries must be >= 1, got {self.period}")
        table = np.asarray(self.table, dtype=np.float64)
        expected = tuple(self.period) + (2 * len(self.period),)
        if table.shape != expected:
            raise ValueError(f"periodic table has shape {table.shape}, expected {expected}")
        _positive(table.ravel(), "periodic weights")
        self.table = table.tolist()
        return self


class DiagonalSymmetricKind(BaseModel):
    """One atom q per diagonal level Σx_i; τ(x, ±e_i) reads coordinate i of an atom"""
    type: Literal["diagonal_symmetric"] = "diagonal_symmetric"
    atoms: List[List[float]]
    probs: List[float]
    level_seed: Optional[int] = None

    @model_validator(mode="after")
    def _check(self):
        if not self.atoms or len(self.atoms) != len(self.probs):
            raise ValueError("diagonal_symmetric needs matching nonempty atoms and probs")
        width = len(self.atoms[0])
        if any(len(q) != width for q in self.atoms):
            raise ValueError("all atoms must have the same length")
        for q in self.atoms:
            _positive(q, "atom weights")
        self.probs = _normalized(self.probs)
        return self


MediumKind = Annotated[
    Union[ConstantKind, IidDiscreteKind, IidUniformKind, PeriodicKind, DiagonalSymmetricKind],
    Field(discriminator="type"),
]


class MediumSpec(BaseModel):
    dimension: int = Field(ge=1)
    kind: MediumKind
    undirected: bool = False
    seed: int = 0
    bounds: Optional[Tuple[float, float]] = None

    @model_validator(mode="after")
    def _check(self):
        d = self.dimension
        if isinstance(self.kind, PeriodicKind) and len(self.kind.period) != d:
            raise ValueError(f"periodic period has {len(self.kind.period)} axes, dimension is {d}")
        if isinstance(self.kind, DiagonalSymmetricKind):
            if len(self.kind.atoms[0]) != d:
                raise ValueError(f"atoms have length {len(self.kind.atoms[0])}, dimension is {d}")
            # level-constant weights are undirected by construction
            self.undirected = True
        lo, hi = self._tabulated_range()
        if self.bounds is not None:
            a, b = self.bounds
            if not (0 < a <= b):
                raise ValueError(f"bounds must satisfy 0 < a <= b, got {self.bounds}")
            if lo < a or hi > b:
                raise ValueError(f"weights span [{lo}, {hi}], outside declared bounds [{a}, {b}]")
        return self

    def _tabulated_range(self) -> Tuple[float, float]:
        kind = self.kind
        if isinstance(kind, ConstantKind):
            return kind.c, kind.c
        if isinstance(kind, IidDiscreteKind):
            used = [v for v, p in zip(kind.values, kind.probs) if p > 0]
            return min(used), max(used)
        if isinstance(kind, IidUniformKind):
            return kind.lo, kind.hi
        if isinstance(kind, PeriodicKind):
            table = np.asarray(kind.table)
            if self.undirected:
                table = table[..., 0::2]
            return float(table.min()), float(table.max())
        used = np.asarray([q for q, p in zip(kind.atoms, kind.probs) if p > 0])
        return float(used.min()), float(used.max())

    def weight_bounds(self) -> WeightBounds:
        if self.bounds is not None:
            return WeightBounds(*self.bounds)
        return WeightBounds(*self._tabulated_range())

    def canonical(self) -> Dict:
        return self.model_dump(mode="json")

    def spec_hash(self) -> str:
        payload = json.dumps(self.canonical(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    @classmethod
    def parse(cls, document: Dict) -> "MediumSpec":
        try:
            return cls.model_validate(document)
        except ValidationError as e:
            raise ConfigError(f"invalid medium spec: {e}") from e

    @classmethod
    def load(cls, path: str) -> "MediumSpec":
        try:
            document = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read medium spec {path}: {e}") from e
        return cls.parse(document)


class Environment:
    """Seeded realization of a MediumSpec; immutable and safe to share across threads"""

    def __init__(self, spec: MediumSpec, seed: Optional[int] = None):
        self.spec = spec
        self.seed = int(spec.seed if seed is None else seed) & MASK64
        self.dimension = spec.dimension
        self.bounds = spec.weight_bounds()
        kind = spec.kind
        self._cum = None
        if isinstance(kind, (IidDiscreteKind, DiagonalSymmetricKind)):
            self._cum = np.cumsum(np.asarray(kind.probs, dtype=np.float64))
        if isinstance(kind, IidDiscreteKind):
            self._values = np.asarray(kind.values, dtype=np.float64)
        if isinstance(kind, PeriodicKind):
            self._table = np.asarray(kind.table, dtype=np.float64)
            self._period = np.asarray(kind.period, dtype=np.int64)
        if isinstance(kind, DiagonalSymmetricKind):
            self._atoms = np.asarray(kind.atoms, dtype=np.float64)
            level_seed = kind.level_seed if kind.level_seed is not None else self.seed
            self._level_seed = int(level_seed) & MASK64

    @property
    def kind(self) -> str:
        return self.spec.kind.type

    @property
    def undirected(self) -> bool:
        return self.spec.undirected

    def with_seed(self, seed: int) -> "Environment":
        return Environment(self.spec, seed)

    def _pick(self, u: np.ndarray) -> np.ndarray:
        return np.minimum(np.searchsorted(self._cum, u, side="right"), len(self._cum) - 1)

    def _edge_keys(self, points: np.ndarray, k: np.ndarray) -> np.ndarray:
        """Rows (base point, code) identifying the edge; undirected edges share one key"""
        if not self.undirected:
            return np.column_stack([points, k])
        axis = k // 2
        base = points.copy()
        neg = (k % 2) == 1
        base[neg, axis[neg]] -= 1
        return np.column_stack([base, 2 * axis])

    def weights(self, points: np.ndarray, k) -> np.ndarray:
        """τ(x, α_k) for an (N, d) array of points and direction indices k (scalar or (N,))"""
        points = np.atleast_2d(np.asarray(points, dtype=np.int64))
        n = points.shape[0]
        k = np.broadcast_to(np.asarray(k, dtype=np.int64), (n,)).copy()
        if points.shape[1] != self.dimension:
            raise ConfigError(f"points have dimension {points.shape[1]}, medium has {self.dimension}")
        if np.any((k < 0) | (k >= 2 * self.dimension)):
            raise ConfigError("direction index out of range")
        kind = self.spec.kind

        if isinstance(kind, ConstantKind):
            return np.full(n, kind.c, dtype=np.float64)

        if isinstance(kind, DiagonalSymmetricKind):
            levels = points.sum(axis=1) - (k % 2)
            return self._atoms[self.atoms_at_levels(levels), k // 2]

        keys = self._edge_keys(points, k)
        if isinstance(kind, PeriodicKind):
            cell = np.mod(keys[:, :-1], self._period)
            return self._table[tuple(cell.T) + (keys[:, -1],)]

        u = uniform(self.seed, EDGE_STREAM, keys)
        if isinstance(kind, IidUniformKind):
            return kind.lo + (kind.hi - kind.lo) * u
        return self._values[self._pick(u)]

    def weight(self, x: Sequence[int], alpha: Direction) -> float:
        point = as_point(x, self.dimension)
        return float(self.weights(np.asarray([point]), alpha.index)[0])

    def edge_weights(self, sites: np.ndarray) -> np.ndarray:
        """(N, 2d) matrix of outgoing weights in canonical direction order"""
        sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        return np.column_stack([self.weights(sites, k) for k in range(2 * self.dimension)])

    def atoms_at_levels(self, levels: np.ndarray) -> np.ndarray:
        if not isinstance(self.spec.kind, DiagonalSymmetricKind):
            raise WrongKindError(f"atom_of needs a diagonal_symmetric medium, got {self.kind}")
        levels = np.asarray(levels, dtype=np.int64).reshape(-1, 1)
        return self._pick(uniform(self._level_seed, LEVEL_STREAM, levels))

    def atom_of(self, x: Sequence[int]) -> int:
        point = as_point(x, self.dimension)
        return int(self.atoms_at_levels(np.asarray([sum(point)]))[0])

    def summary(self) -> Dict:
        return {
            "kind": self.kind,
            "dimension": self.dimension,
            "undirected": self.undirected,
            "seed": self.seed,
            "a": self.bounds.a,
            "b": self.bounds.b,
            "medium_hash": self.spec.spec_hash(),
        }

    def window_rows(self, radius: int) -> List[Dict]:
        """Every outgoing edge weight of the ℓ¹ ball of the given radius around the origin"""
        grid = Box(tuple([0] * self.dimension), radius).grid()
        tau = self.edge_weights(grid.sites)
        rows = []
        for i, x in enumerate(grid.points()):
            for k in range(2 * self.dimension):
                rows.append({"x": list(x), "direction": str(Direction.from_index(k)),
                             "weight": float(tau[i, k])})
        logger.debug("medium_window_dumped", radius=radius, edges=len(rows))
        return rows


def constant(d: int, c: float) -> Environment:
    return Environment(MediumSpec(dimension=d, kind=ConstantKind(c=c)))
