from pathlib import Path

import pytest

from app.core.corrector import AtomicSpace
from app.core.medium import Environment, IidUniformKind, MediumSpec, constant
from app.core.verify import random_periodic_spec

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def repo_root() -> Path:
    return ROOT


@pytest.fixture
def make_constant():
    return constant


@pytest.fixture
def iid_env() -> Environment:
    return Environment(MediumSpec(dimension=2, kind=IidUniformKind(lo=1.0, hi=2.0), undirected=True, seed=3))


@pytest.fixture
def make_periodic():
    def build(seed: int, period: int = 5, d: int = 2, undirected: bool = True) -> Environment:
        return Environment(random_periodic_spec(d, period, seed, undirected=undirected))
    return build


@pytest.fixture
def minimizer_space() -> AtomicSpace:
    return AtomicSpace(atoms=[[4.0, 4.0], [1.0, 3.0]], probs=[0.5, 0.5])


@pytest.fixture
def corrector_space() -> AtomicSpace:
    return AtomicSpace(atoms=[[1.0, 2.0], [2.0, 1.0]], probs=[0.5, 0.5])
