import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from app.core import corrector
from app.core.corrector import AtomicSpace, OutcomeKind
from app.core.errors import ConfigError, MismatchError, WrongKindError
from app.core.lattice import Box
from app.core.medium import DiagonalSymmetricKind, Environment, MediumSpec
from app.core.varform import variational_bounds
from app.core.verify import random_atomic_space

positive = st.floats(min_value=0.5, max_value=4.0, allow_nan=False)
momentum = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)


def diagonal_env(space, seed=11):
    kind = DiagonalSymmetricKind(atoms=space.atoms, probs=space.probs)
    return Environment(MediumSpec(dimension=space.dimension, kind=kind, seed=seed))


def test_h_sym_examples():
    assert corrector.h_sym(-2.0, [2.0], [3.0]) == 0.0
    assert corrector.h_sym(0.0, [1.0, 1.0], [1.0, 2.0]) == 1.0
    assert corrector.h_sym(0.5, [-1.0, 1.0], [1.0, 3.0]) == 0.5


@given(st.floats(-5, 5, allow_nan=False), st.lists(st.tuples(momentum, positive), min_size=1, max_size=4))
@settings(max_examples=200, deadline=None)
def test_h_sym_is_the_max_of_pieces(t, pieces):
    p = [pi for pi, _ in pieces]
    q = [qi for _, qi in pieces]
    assert corrector.h_sym(t, p, q) == pytest.approx(max(abs(t + pi) / qi for pi, qi in pieces))


def test_argmin_examples():
    m = corrector.argmin_h_sym([-1.0, 1.0], [1.0, 2.0])
    assert m.x == pytest.approx(1.0 / 3.0)
    assert m.minval == pytest.approx(2.0 / 3.0)
    single = corrector.argmin_h_sym([1.5], [2.0])
    assert single.x == -1.5 and single.minval == 0.0


def test_argmin_agrees_with_grid_scan():
    rng = np.random.default_rng(0)
    for _ in range(200):
        d = int(rng.integers(1, 4))
        p = rng.uniform(-2, 2, size=d)
        q = rng.uniform(1.0, 3.0, size=d)
        m = corrector.argmin_h_sym(p, q)
        grid = np.arange(-p.max() - 1e-5, -p.min() + 2e-5, 1e-5)
        vals = (np.abs(grid[:, None] + p[None, :]) / q[None, :]).max(axis=1)
        k = int(np.argmin(vals))
        assert m.minval <= vals[k] + 1e-12
        assert vals[k] - m.minval <= 1e-5 / q.min()
        assert abs(grid[k] - m.x) <= 2e-5


def test_derivatives_bracket_slopes():
    m = corrector.argmin_h_sym([-1.0, 1.0], [1.0, 3.0])
    left, right = m.derivatives(m.x)
    assert left < 0 < right
    for t in (-3.0, -0.2, 2.0):
        left, right = m.derivatives(t)
        assert 1.0 / 3.0 - 1e-12 <= abs(left) <= 1.0 + 1e-12
        assert 1.0 / 3.0 - 1e-12 <= abs(right) <= 1.0 + 1e-12
        assert left <= right


def test_antidiagonal_formula_has_the_wrong_sign():
    q = [1.0, 2.0]
    formula = corrector.antidiagonal_formula(q)
    assert formula == pytest.approx(-1.0 / 3.0)
    assert corrector.argmin_h_sym([-1.0, 1.0], q).x == pytest.approx(-formula)


def test_closed_form_min_candidate_is_a_corrector():
    space = AtomicSpace(atoms=[[1.0, 2.0], [2.0, 3.0]], probs=[0.5, 0.5])
    p = [1.0, 1.0]
    f = corrector.closed_form_diagonal_candidate(space, "min")
    np.testing.assert_allclose(f, [-1.0 / 3.0, 1.0 / 3.0])
    h = corrector.h_sym_atoms(f, np.array(p), space.q)
    np.testing.assert_allclose(h, [2.0 / 3.0, 2.0 / 3.0])
    value, _ = corrector.brute_force_minimax(space, p)
    assert value == pytest.approx(2.0 / 3.0, abs=1e-8)
    assert corrector.run(space, p).hbar == pytest.approx(2.0 / 3.0, abs=1e-8)


def test_closed_form_max_candidate_is_not_a_corrector():
    space = AtomicSpace(atoms=[[1.0, 2.0], [2.0, 3.0]], probs=[0.5, 0.5])
    f = corrector.closed_form_diagonal_candidate(space, "max")
    np.testing.assert_allclose(f, [-0.2, 0.2])
    h = corrector.h_sym_atoms(f, np.array([1.0, 1.0]), space.q)
    np.testing.assert_allclose(h, [0.8, 0.6])
    with pytest.raises(ConfigError):
        corrector.closed_form_diagonal_candidate(space, "mean")


def test_iteration_trace_on_minimizer_fixture(minimizer_space):
    p = [-1.0, 1.0]
    s0 = corrector.initial_state(minimizer_space, p)
    np.testing.assert_allclose(s0.h, [0.25, 1.0])
    assert s0.mu0 == pytest.approx(0.625)
    assert s0.d == pytest.approx(0.375)
    assert s0.as_dict()["MIN0"] == [0]
    assert s0.as_dict()["S_plus"] == [1]

    s1 = corrector.iterate_step(s0, minimizer_space, p)
    assert s1.xi == pytest.approx(-1.0)
    np.testing.assert_allclose(s1.f, [-0.375, 0.375])
    np.testing.assert_allclose(s1.h, [0.34375, 0.625])

    s2 = corrector.iterate_step(s1, minimizer_space, p)
    assert s2.xi == pytest.approx(-8.0 / 9.0)
    np.testing.assert_allclose(s2.f, [-0.5, 0.5])
    np.testing.assert_allclose(s2.h, [0.375, 0.5])
    assert s2.as_dict()["MIN0"] == [1]

    s3 = corrector.iterate_step(s2, minimizer_space, p)
    np.testing.assert_allclose(s3.f, s2.f, atol=1e-15)


def test_run_on_minimizer_fixture(minimizer_space):
    outcome = corrector.run(minimizer_space, [-1.0, 1.0])
    assert outcome.kind is OutcomeKind.MINIMIZER_NOT_CORRECTOR
    assert outcome.hbar == pytest.approx(0.5)
    assert outcome.iterations == 2
    np.testing.assert_allclose(outcome.f, [-0.5, 0.5])
    np.testing.assert_allclose(outcome.h, [0.375, 0.5])
    assert outcome.max_abs_xi == pytest.approx(1.0)


def test_run_on_corrector_fixture(corrector_space):
    outcome = corrector.run(corrector_space, [1.0, 1.0])
    assert outcome.kind is OutcomeKind.CORRECTOR_FOUND
    assert outcome.hbar == pytest.approx(1.0)
    np.testing.assert_allclose(outcome.f, [0.0, 0.0])
    assert outcome.iterations == 0


def test_single_atom_space():
    space = AtomicSpace(atoms=[[1.0, 1.0]], probs=[1.0])
    outcome = corrector.run(space, [1.0, 1.0])
    assert outcome.kind is OutcomeKind.CORRECTOR_FOUND
    assert outcome.hbar == pytest.approx(1.0)
    assert corrector.brute_force_minimax(space, [1.0, 1.0])[0] == pytest.approx(1.0, abs=1e-8)


def test_flat_state_is_a_fixpoint(corrector_space):
    p = [1.0, 1.0]
    state = corrector.initial_state(corrector_space, p)
    assert state.d == 0.0
    np.testing.assert_array_equal(corrector.iterate_step(state, corrector_space, p).f, state.f)


def test_brute_force_on_minimizer_fixture(minimizer_space):
    value, witness = corrector.brute_force_minimax(minimizer_space, [-1.0, 1.0], tol=1e-10)
    assert value == pytest.approx(0.5, abs=1e-9)
    assert abs(float(minimizer_space.pi @ witness)) <= 1e-9
    h = corrector.h_sym_atoms(witness, np.array([-1.0, 1.0]), minimizer_space.q)
    assert h.max() <= value + 1e-9


def test_sublevel_intervals_example(minimizer_space):
    left, right = corrector.sublevel_intervals(minimizer_space, np.array([-1.0, 1.0]), 0.5)
    np.testing.assert_allclose(left, [-1.0, 0.5])
    np.testing.assert_allclose(right, [1.0, 0.5])


def test_run_agrees_with_brute_force_on_random_spaces():
    for seed in range(30):
        space, p = random_atomic_space(seed)
        outcome = corrector.run(space, p, tol=1e-10)
        value, _ = corrector.brute_force_minimax(space, p, tol=1e-10)
        assert outcome.hbar == pytest.approx(value, abs=1e-8)
        q = float(np.max(np.abs(p)))
        assert q / space.b - 1e-8 <= outcome.hbar <= q / space.a + 1e-8


@pytest.mark.slow
def test_run_agrees_with_brute_force_on_many_spaces():
    for seed in range(1000, 1100):
        space, p = random_atomic_space(seed)
        outcome = corrector.run(space, p, tol=1e-10)
        value, _ = corrector.brute_force_minimax(space, p, tol=1e-10)
        assert outcome.hbar == pytest.approx(value, abs=1e-8)


def test_trace_invariants_on_random_spaces():
    for seed in range(20):
        space, p = random_atomic_space(seed + 500)
        outcome = corrector.run(space, p, tol=1e-10, trace=True)
        assert outcome.max_abs_xi <= 1 + 1e-12
        sups = [max(entry["h"]) for entry in outcome.trace]
        for entry in outcome.trace:
            assert abs(float(space.pi @ np.asarray(entry["f"]))) <= 1e-10
            if entry["xi"] is not None:
                assert abs(entry["xi"]) <= 1 + 1e-12
        assert all(b <= a + 1e-10 for a, b in zip(sups, sups[1:]))


def test_atoms_within_tol_of_mean_level_are_neither_raised_nor_lowered():
    # h = (1, 1/2, 10/13) at f = 0, mean 59/78, third atom 1/78 above it
    space = AtomicSpace(atoms=[[1, 1], [2, 2], [1.3, 1.3]], probs=[1 / 3, 1 / 3, 1 / 3])
    p = [1.0, 1.0]
    tight = corrector.CorrectorProblem(space, p, tol=1e-9).state(np.zeros(3))
    assert tight.as_dict()["S"] == [0, 2]
    assert tight.as_dict()["I"] == [1]

    problem = corrector.CorrectorProblem(space, p, tol=0.05)
    state = problem.state(np.zeros(3))
    assert state.as_dict()["S"] == [0]
    assert state.as_dict()["I"] == [1]
    new = problem.step(state)
    assert new.xi == pytest.approx(0.95)
    np.testing.assert_allclose(new.f, [-19 / 78, 19 / 78, 0.0], atol=1e-12)
    assert abs(float(space.pi @ new.f)) <= 1e-12
    assert new.sup < state.sup


def test_xi_never_leaves_unit_interval_on_random_spaces():
    for seed in range(200):
        space, p = random_atomic_space(seed)
        outcome = corrector.run(space, p, tol=1e-9)
        assert outcome.max_abs_xi <= 1.0


def test_run_validates_starting_point(corrector_space):
    with pytest.raises(ConfigError):
        corrector.run(corrector_space, [1.0, 1.0], f0=[1.0, 1.0])
    with pytest.raises(ConfigError):
        corrector.run(corrector_space, [1.0, 1.0], f0=[0.0])
    with pytest.raises(ConfigError):
        corrector.run(corrector_space, [1.0])


def test_nonzero_start_reaches_same_value(minimizer_space):
    outcome = corrector.run(minimizer_space, [-1.0, 1.0], f0=[0.3, -0.3])
    assert outcome.hbar == pytest.approx(0.5, abs=1e-8)


@pytest.mark.parametrize("document", [
    {"atoms": [[1.0, 2.0]], "probs": [0.9]},
    {"atoms": [[1.0, 2.0], [2.0]], "probs": [0.5, 0.5]},
    {"atoms": [[1.0, -2.0]], "probs": [1.0]},
    {"atoms": [[1.0], [2.0]], "probs": [0.3, 0.7], "periodic": True},
    {"atoms": [[1.0], [2.0]]},
    {"atoms": []},
])
def test_atomic_space_validation(document):
    with pytest.raises(ConfigError):
        AtomicSpace.parse(document)


def test_periodic_space_is_uniform():
    space = AtomicSpace.periodic_space([[1.0, 2.0], [1.5, 1.0], [2.0, 2.0]])
    np.testing.assert_allclose(space.pi, [1 / 3] * 3)
    assert space.a == 1.0 and space.b == 2.0


def test_space_from_medium(minimizer_space):
    space = AtomicSpace.from_medium(diagonal_env(minimizer_space).spec)
    assert space.atoms == minimizer_space.atoms
    with pytest.raises(WrongKindError):
        AtomicSpace.from_medium(MediumSpec.parse({"dimension": 2, "kind": {"type": "constant", "c": 1.0}}))


def test_space_loads_sample_files(repo_root):
    space = AtomicSpace.load(str(repo_root / "samples" / "space_periodic.json"))
    assert space.periodic and space.n == 3
    with pytest.raises(ConfigError):
        AtomicSpace.load(str(repo_root / "samples" / "missing.json"))


def test_lifted_corrector_has_constant_hamiltonian(corrector_space):
    env = diagonal_env(corrector_space)
    outcome = corrector.run(corrector_space, [1.0, 1.0])
    phi = corrector.lift_to_lattice(corrector_space, outcome.f, env)
    assert phi.mean_zero
    lo, hi = variational_bounds(phi, [1.0, 1.0], env, Box((0, 0), 6))
    assert hi - lo <= 1e-9
    assert hi == pytest.approx(outcome.hbar)


def test_lifted_minimizer_brackets_but_is_not_constant(minimizer_space):
    env = diagonal_env(minimizer_space)
    phi = corrector.lift_to_lattice(minimizer_space, [-0.5, 0.5], env)
    box = Box((0, 0), 6)
    lo, hi = variational_bounds(phi, [-1.0, 1.0], env, box)
    assert hi == pytest.approx(0.5)
    atoms = env.atoms_at_levels(np.arange(-7, 7))
    consecutive_zero = bool(np.any((atoms[1:] == 0) & (atoms[:-1] == 0)))
    assert lo == pytest.approx(0.375 if consecutive_zero else 0.5)


def test_lift_increments_follow_level_atoms(minimizer_space):
    env = diagonal_env(minimizer_space)
    f = np.array([-0.5, 0.5])
    phi = corrector.lift_to_lattice(minimizer_space, f, env)
    points = np.array([[0, 0], [2, -1], [-3, 1], [4, 2]])
    for x in points:
        level_atom = env.atom_of(tuple(x))
        for e in np.eye(2, dtype=np.int64):
            step = phi(np.array([x + e]))[0] - phi(np.array([x]))[0]
            assert step == pytest.approx(f[level_atom])
    assert phi(np.array([[0, 0]]))[0] == 0.0


def test_lift_rejects_wrong_medium(minimizer_space, corrector_space):
    with pytest.raises(MismatchError):
        corrector.lift_to_lattice(minimizer_space, [0.0, 0.0], diagonal_env(corrector_space))
    with pytest.raises(MismatchError):
        corrector.lift_to_lattice(minimizer_space, [0.0], diagonal_env(minimizer_space))
    constant_env = Environment(MediumSpec.parse({"dimension": 2, "kind": {"type": "constant", "c": 1.0}}))
    with pytest.raises(WrongKindError):
        corrector.lift_to_lattice(minimizer_space, [0.0, 0.0], constant_env)
