"""Lattice primitives: directions, weight bounds, ℓ¹ boxes and their site indexing."""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, List, Sequence, Tuple
import numpy as np

from app.config import Config
from app.core.errors import CapacityError, ConfigError


@dataclass(frozen=True, order=True)
class Direction:
    """One of the 2d control directions ±e_axis"""
    axis: int
    sign: int

    def __post_init__(self):
        if self.axis < 0 or self.sign not in (1, -1):
            raise ConfigError(f"invalid direction axis={self.axis} sign={self.sign}")

    @property
    def index(self) -> int:
        """Position in the canonical order +e_0, -e_0, +e_1, -e_1, ..."""
        return 2 * self.axis + (0 if self.sign > 0 else 1)

    @classmethod
    def from_index(cls, k: int) -> "Direction":
        return cls(axis=k // 2, sign=1 if k % 2 == 0 else -1)

    @classmethod
    def all(cls, d: int) -> List["Direction"]:
        return [cls.from_index(k) for k in range(2 * d)]

    def vector(self, d: int) -> np.ndarray:
        v = np.zeros(d, dtype=np.int64)
        v[self.axis] = self.sign
        return v

    def __str__(self) -> str:
        return f"{'+' if self.sign > 0 else '-'}e{self.axis}"


def direction_vectors(d: int) -> np.ndarray:
    """(2d, d) matrix of direction vectors in canonical order"""
    return np.stack([Direction.from_index(k).vector(d) for k in range(2 * d)])


@dataclass(frozen=True)
class WeightBounds:
    a: float
    b: float

    def __post_init__(self):
        if not (0 < self.a <= self.b < np.inf):
            raise ConfigError(f"weight bounds must satisfy 0 < a <= b < inf, got a={self.a} b={self.b}")

    @property
    def ratio(self) -> float:
        return self.b / self.a


def as_point(x: Sequence[int], d: int = None) -> Tuple[int, ...]:
    point = tuple(int(v) for v in x)
    if d is not None and len(point) != d:
        raise ConfigError(f"expected a {d}-dimensional lattice point, got {point}")
    return point


@dataclass(frozen=True)
class Box:
    """ℓ¹ ball {y : |y - center|_1 <= radius}"""
    center: Tuple[int, ...]
    radius: int

    def __post_init__(self):
        if self.radius < 0:
            raise ConfigError(f"box radius must be nonnegative, got {self.radius}")
        object.__setattr__(self, "center", as_point(self.center))

    @property
    def dimension(self) -> int:
        return len(self.center)

    def contains(self, y: Sequence[int]) -> bool:
        return sum(abs(int(a) - c) for a, c in zip(y, self.center)) <= self.radius

    def cube_sites(self) -> int:
        return (2 * self.radius + 1) ** self.dimension

    def grid(self) -> "BoxGrid":
        return BoxGrid(self)


@dataclass
class BoxGrid:
    """Indexed enumeration of a Box's sites in lexicographic order.

    A dense lookup table over the bounding cube maps coordinates to site indices,
    -1 outside the ball.
    """
    box: Box
    sites: np.ndarray = field(init=False, repr=False)
    _lookup: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        r, d = self.box.radius, self.box.dimension
        if self.box.cube_sites() > Config.MAX_BOX_SITES:
            raise CapacityError(
                f"box radius {r} in d={d} needs {self.box.cube_sites()} cube sites, "
                f"budget is {Config.MAX_BOX_SITES} (FPP_MAX_BOX_SITES)"
            )
        shape = (2 * r + 1,) * d
        offsets = np.indices(shape, dtype=np.int64).reshape(d, -1).T - r
        inside = np.abs(offsets).sum(axis=1) <= r
        self._lookup = np.full(offsets.shape[0], -1, dtype=np.int64)
        self._lookup[inside] = np.arange(int(inside.sum()), dtype=np.int64)
        self.sites = offsets[inside] + np.asarray(self.box.center, dtype=np.int64)
        self._shape = shape

    def __len__(self) -> int:
        return self.sites.shape[0]

    def index_of(self, points: np.ndarray) -> np.ndarray:
        """Site indices of an (N, d) array of points; -1 for points outside the box"""
        points = np.atleast_2d(np.asarray(points, dtype=np.int64))
        r = self.box.radius
        off = points - np.asarray(self.box.center, dtype=np.int64)
        inside = (np.abs(off) <= r).all(axis=1) & (np.abs(off).sum(axis=1) <= r)
        out = np.full(points.shape[0], -1, dtype=np.int64)
        if inside.any():
            flat = np.ravel_multi_index(tuple((off[inside] + r).T), self._shape)
            out[inside] = self._lookup[flat]
        return out

    def index(self, y: Sequence[int]) -> int:
        idx = int(self.index_of(np.asarray([y]))[0])
        if idx < 0:
            raise ConfigError(f"site {tuple(y)} lies outside box {self.box}")
        return idx

    @cached_property
    def neighbors(self) -> np.ndarray:
        """(2d, N) neighbor indices in canonical direction order, -1 outside"""
        vecs = direction_vectors(self.box.dimension)
        return np.stack([self.index_of(self.sites + v) for v in vecs])

    @cached_property
    def l1_offset(self) -> np.ndarray:
        return np.abs(self.sites - np.asarray(self.box.center, dtype=np.int64)).sum(axis=1)

    def points(self) -> Iterator[Tuple[int, ...]]:
        for row in self.sites:
            yield tuple(int(v) for v in row)
