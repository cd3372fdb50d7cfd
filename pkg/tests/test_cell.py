import math

import numpy as np
import pytest

from app.config import Config
from app.core import cell, oracles
from app.core.errors import ConfigError, NonConvergenceError
from app.core.medium import Environment, MediumSpec, PeriodicKind, constant
from app.core.rng import derive_seed
from app.core.verify import random_iid_spec


@pytest.fixture
def piecewise():
    return cell.TerminalCost.random_piecewise(2, 2.0, seed=4)


def test_mu_at_time_zero_is_terminal_cost(iid_env, piecewise):
    result = cell.mu(iid_env, (1.0, -1.0), (2, 3), 0.0, piecewise)
    assert result.value == pytest.approx(piecewise.at((2, 3)))
    assert result.reached == 1


@pytest.mark.parametrize("c, t, p", [
    (1.0, 3.0, (1.0, 0.0)),
    (1.0, 3.5, (1.0, -2.0)),
    (1.5, 4.5, (0.5, 0.25)),
    (2.0, 1.0, (1.0, 1.0)),
])
def test_mu_in_constant_medium(c, t, p):
    env = constant(2, c)
    expected = -max(abs(v) for v in p) * math.floor(t / c)
    assert cell.mu(env, p, (0, 0), t).value == pytest.approx(expected)


def test_mu_matches_walk_enumeration(make_periodic):
    for seed in range(3):
        env = make_periodic(seed=30 + seed)
        t = 2 * env.bounds.b
        for p in [(1.0, -0.5), (-1.0, 2.0)]:
            assert cell.mu(env, p, (0, 0), t).value == pytest.approx(oracles.walk_mu(env, p, (0, 0), t), abs=1e-9)


@pytest.mark.slow
def test_mu_matches_walk_enumeration_many_media(make_periodic, piecewise):
    for seed in range(25):
        env = make_periodic(seed=200 + seed)
        t = 4 * env.bounds.b
        direct = cell.mu(env, (1.0, -0.5), (1, 0), t, piecewise).value
        walked = oracles.walk_mu(env, (1.0, -0.5), (1, 0), t, piecewise)
        assert direct == pytest.approx(walked, abs=1e-9)


def test_mu_is_nonincreasing_in_time(iid_env, piecewise):
    values = [cell.mu(iid_env, (1.0, 0.5), (0, 0), t, piecewise).value for t in (0.0, 1.0, 2.5, 4.0, 8.0)]
    assert all(later <= earlier + 1e-12 for earlier, later in zip(values, values[1:]))


def test_mu_equals_terminal_cost_before_first_step(iid_env, piecewise):
    result = cell.mu(iid_env, (1.0, 1.0), (0, 0), 0.5 * iid_env.bounds.a, piecewise)
    assert result.value == piecewise.at((0, 0))


def test_truncated_value_outside_ball_is_terminal_cost(iid_env, piecewise):
    result = cell.mu_truncated(iid_env, (1.0, 1.0), (3, 4), 10.0, piecewise, K=4.9)
    assert result.value == piecewise.at((3, 4))


def test_truncated_value_converges_and_dominates(iid_env, piecewise):
    p, t = (1.0, -0.5), 6.0
    full = cell.mu(iid_env, p, (1, 0), t, piecewise).value
    truncated = [cell.mu_truncated(iid_env, p, (1, 0), t, piecewise, K).value for K in (1.0, 2.0, 4.0, 8.0, 20.0)]
    assert all(v >= full - 1e-12 for v in truncated)
    assert all(b <= a + 1e-12 for a, b in zip(truncated, truncated[1:]))
    assert truncated[-1] == pytest.approx(full)


def test_truncated_rejects_negative_radius(iid_env):
    with pytest.raises(ConfigError):
        cell.mu_truncated(iid_env, (1.0, 0.0), (0, 0), 1.0, None, K=-1.0)


def test_terminal_costs_are_lipschitz(piecewise):
    points = np.random.default_rng(0).integers(-10, 10, size=(500, 2))
    assert piecewise.lipschitz_violation(points) <= 1e-12
    clamp = cell.TerminalCost.linear_clamp(np.array([1.0, -2.0]), cap=5.0)
    assert clamp.lipschitz_violation(points) == 0.0
    assert clamp.at((10, 0)) == 5.0


@pytest.mark.parametrize("c", [1.0, 2.0])
@pytest.mark.parametrize("p", [(1.0, 0.0), (-0.5, 1.5)])
def test_nu_in_constant_medium(c, p):
    eps = 0.1
    value = cell.nu(constant(2, c), p, eps, tol=1e-10, interior_radius=2)
    expected = -max(abs(v) for v in p) / (1 - math.exp(-eps * c))
    for v in value.as_dict().values():
        assert v == pytest.approx(expected, rel=1e-9)


def test_nu_with_zero_momentum_vanishes(iid_env):
    value = cell.nu(iid_env, (0.0, 0.0), 0.2, interior_radius=1)
    assert all(v == 0.0 for v in value.as_dict().values())


def test_nu_matches_periodic_policy_iteration():
    table = [[[1.0, 1.5, 2.0, 1.2], [1.4, 1.1, 1.0, 1.9]],
             [[1.7, 1.3, 1.6, 1.0], [1.0, 2.0, 1.8, 1.5]]]
    env = Environment(MediumSpec(dimension=2, kind=PeriodicKind(period=[2, 2], table=table), undirected=False))
    p, eps = (1.0, -0.5), 0.1
    exact = oracles.periodic_nu_exact(env, p, eps)
    value = cell.nu(env, p, eps, tol=1e-8, interior_radius=2)
    for x, v in value.as_dict().items():
        assert v == pytest.approx(exact[(x[0] % 2, x[1] % 2)], abs=1e-6)


def test_nu_respects_bounds_and_lipschitz(iid_env):
    value = cell.nu(iid_env, (1.0, 0.5), 0.2, tol=1e-8, interior_radius=3)
    a, b = iid_env.bounds.a, iid_env.bounds.b
    violation = value.bounds_violation(a, b)
    assert violation["exact"] == 0.0
    assert value.lipschitz_violation(a, b) == 0.0


def test_nu_exact_bounds_order():
    lower, upper = cell.nu_exact_bounds(np.array([2.0, -1.0]), 0.1, 1.0, 3.0)
    assert lower < upper < 0
    assert lower == pytest.approx(-2.0 / (1 - math.exp(-0.1)))


def test_nu_rejects_bad_parameters(iid_env):
    with pytest.raises(ConfigError):
        cell.nu(iid_env, (1.0, 0.0), 0.0)
    with pytest.raises(ConfigError):
        cell.nu(iid_env, (1.0,), 0.1)


def test_nu_sweep_cap_raises(iid_env, monkeypatch):
    monkeypatch.setattr(Config, "NU_MAX_SWEEPS", 2)
    with pytest.raises(NonConvergenceError):
        cell.nu(iid_env, (1.0, 0.0), 0.1, tol=1e-10)


@pytest.mark.parametrize("c", [1.0, 2.0])
@pytest.mark.parametrize("eps", [0.1, 0.05])
def test_hjb_residual_in_constant_medium(c, eps):
    env = constant(2, c)
    p = (1.0, -0.5)
    value = cell.nu(env, p, eps, tol=1e-10, interior_radius=1)
    residual = cell.hjb_residual(value, env, p)
    assert residual / eps <= 2 * max(abs(v) for v in p)
    assert value.residual == residual


def test_hjb_residual_zero_momentum(iid_env):
    value = cell.nu(iid_env, (0.0, 0.0), 0.1, interior_radius=1)
    assert cell.hjb_residual(value, iid_env, (0.0, 0.0)) == 0.0


@pytest.mark.slow
def test_hjb_residual_constant_stays_bounded(iid_env):
    p = (1.0, 1.0)
    a, b = iid_env.bounds.a, iid_env.bounds.b
    ceiling = ((a + b) / a + b / a) * max(abs(v) for v in p) + 1e-3
    for eps in (0.2, 0.1, 0.05):
        value = cell.nu(iid_env, p, eps, tol=1e-5, interior_radius=2)
        assert cell.hjb_residual(value, iid_env, p) / eps <= ceiling


@pytest.mark.parametrize("phi", [
    cell.TerminalCost.zero(),
    cell.TerminalCost.linear_clamp(np.array([1.0, 1.0]), cap=4.0),
    cell.TerminalCost.random_piecewise(2, 2.0, seed=9),
])
def test_comparison_principle(phi):
    env = Environment(random_iid_spec(2, derive_seed(0, "comparison", 1)))
    result = cell.check_comparison(env, (1.0, 1.0), phi, samples=60, seed=3, t_max=3 * env.bounds.b)
    assert result["violations"] == []
    assert result["sup_hamiltonian"] >= result["inf_hamiltonian"]


@pytest.mark.slow
@pytest.mark.parametrize("phi", [
    cell.TerminalCost.linear_clamp(np.array([1.0, 1.0]), cap=4.0),
    cell.TerminalCost.random_piecewise(2, 2.0, seed=9),
])
def test_comparison_principle_on_a_thousand_samples(phi):
    env = Environment(random_iid_spec(2, derive_seed(0, "comparison", 2)))
    result = cell.check_comparison(env, (1.0, 1.0), phi, samples=1000, seed=5, t_max=3 * env.bounds.b)
    assert result["samples"] == 1000
    assert result["violations"] == []


def test_comparison_hamiltonian_of_zero_cost_in_constant_medium():
    result = cell.check_comparison(constant(2, 2.0), (1.0, -3.0), cell.TerminalCost.zero(),
                                   samples=20, seed=1, t_max=6.0)
    assert result["sup_hamiltonian"] == pytest.approx(1.5)
    assert result["inf_hamiltonian"] == pytest.approx(1.5)
    assert result["violations"] == []
