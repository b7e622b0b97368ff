import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfmoe import transport as T
from mfmoe.dynamics import EmpiricalMeasure
from mfmoe.torus import TWO_PI, pairwise_l1, torus_l1_distance

SOLVERS = ["native"] + (["pot"] if T._POT is not None else [])


def atoms(gen, n, d=3):
    return gen.uniform(0, TWO_PI, (n, d))


def test_cost_matrix_properties(gen):
    a, b = atoms(gen, 5), atoms(gen, 7)
    C = T.cost_matrix(a, b)
    np.testing.assert_array_equal(C, pairwise_l1(a, b) ** 2)
    assert np.all(C >= 0) and np.all(C <= (3 * np.pi) ** 2)
    with pytest.raises(ValueError):
        T.cost_matrix(a, b, p=3)
    with pytest.raises(ValueError, match="dimension"):
        T.cost_matrix(a, atoms(gen, 2, d=2))


def test_equal_examples(gen):
    a = atoms(gen, 6)
    assert T.w2_squared_equal(a, a) == 0.0
    assert T.w2_squared_equal(a, a[::-1]) == 0.0
    x, y = atoms(gen, 1), atoms(gen, 1)
    assert T.w2_squared_equal(x, y) == pytest.approx(torus_l1_distance(x[0], y[0]) ** 2)
    with pytest.raises(ValueError, match="w2_squared_general"):
        T.w2_squared_equal(a, a[:3])


def test_accepts_empirical_measures(gen):
    a, b = atoms(gen, 4), atoms(gen, 4)
    assert T.w2(EmpiricalMeasure(a), EmpiricalMeasure(b)) == T.w2(a, b)
    with pytest.raises(ValueError):
        T.w2(np.zeros((0, 3)), a)


@pytest.mark.parametrize("n", range(1, 8))
def test_assignment_matches_bruteforce(n, gen):
    for _ in range(5):
        a, b = atoms(gen, n), atoms(gen, n)
        oracle = T.w2_squared_bruteforce(a, b)
        assert T.w2_squared_equal(a, b) == pytest.approx(oracle, abs=1e-12)
        for s in SOLVERS:
            assert T.w2_squared_general(a, b, solver=s) == pytest.approx(oracle, abs=1e-12)


def test_assignment_beats_random_permutations(gen):
    a, b = atoms(gen, 12), atoms(gen, 12)
    C = T.cost_matrix(a, b)
    best = T.w2_squared_equal(a, b)
    for _ in range(1000):
        assert best <= C[np.arange(12), gen.permutation(12)].mean() + 1e-12


@pytest.mark.parametrize("solver", SOLVERS)
@pytest.mark.parametrize("shape", [(2, 3), (3, 4), (3, 2), (1, 4), (4, 1)])
def test_general_matches_lp_enumeration(solver, shape, gen):
    for _ in range(10):
        a, b = atoms(gen, shape[0]), atoms(gen, shape[1])
        assert T.w2_squared_general(a, b, solver) == pytest.approx(
            T.w2_squared_vertex_enumeration(a, b), abs=1e-10)


def test_single_atom_plan_is_forced(gen):
    a, b = atoms(gen, 1), atoms(gen, 5)
    expected = np.mean(torus_l1_distance(a, b) ** 2)
    for s in SOLVERS:
        assert T.w2_squared_general(a, b, s) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("solver", SOLVERS)
def test_duplicated_measure_is_at_distance_zero(solver, gen):
    a = atoms(gen, 5)
    assert T.w2_squared_general(a, np.repeat(a, 2, axis=0), solver) == pytest.approx(0.0, abs=1e-12)


def test_duplication_scaling(gen):
    a, b = atoms(gen, 6), atoms(gen, 4)
    base = T.w2_squared(a, b)
    for k in (2, 3):
        assert T.w2_squared(np.tile(a, (k, 1)), b) == pytest.approx(base, abs=1e-12)
        assert T.w2_squared(np.tile(a, (k, 1)), np.tile(b, (k, 1))) == pytest.approx(base, abs=1e-12)


def test_solvers_agree_on_larger_instances(gen):
    for na, nb in [(8, 40), (13, 29), (32, 256)]:
        a, b = atoms(gen, na, 6), atoms(gen, nb, 6)
        C = T.cost_matrix(a, b)
        nat = T.network_simplex(C)
        # replicating atoms turns the problem into an assignment with the same value
        L = np.lcm(na, nb)
        if L <= 512:
            rep = T.w2_squared_equal(np.repeat(a, L // na, 0), np.repeat(b, L // nb, 0))
            assert nat.value == pytest.approx(rep, abs=1e-12)
        if T._POT is not None:
            assert T.pot_network_simplex(C).value == pytest.approx(nat.value, abs=1e-12)


@pytest.mark.parametrize("solver", SOLVERS)
def test_plan_feasibility(solver, gen):
    plan = T.transport_plan(atoms(gen, 7), atoms(gen, 12), solver=solver)
    ra, cb = plan.marginals()
    np.testing.assert_allclose(ra, 1 / 7, atol=1e-12)
    np.testing.assert_allclose(cb, 1 / 12, atol=1e-12)
    assert plan.mass.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(plan.mass > 0)


def test_plan_csv(tmp_path, gen):
    plan = T.transport_plan(atoms(gen, 3), atoms(gen, 5))
    p = tmp_path / "plan.csv"
    plan.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "i,j,mass,cost" and len(lines) == 1 + len(plan.mass)


def test_unknown_solver(gen):
    with pytest.raises(ValueError):
        T.w2_squared_general(atoms(gen, 2), atoms(gen, 3), solver="sinkhorn")


sizes = st.integers(1, 6)


@given(sizes, sizes, sizes, st.integers(0, 2**32 - 1))
def test_triangle_inequality(na, nb, nc, seed):
    gen = np.random.default_rng(seed)
    a, b, c = atoms(gen, na, 2), atoms(gen, nb, 2), atoms(gen, nc, 2)
    assert T.w2(a, b) <= T.w2(a, c) + T.w2(c, b) + 1e-9
    assert T.w2(a, b) == pytest.approx(T.w2(b, a), abs=1e-12)


@given(sizes, sizes, st.integers(0, 2**32 - 1))
def test_w1_below_w2(na, nb, seed):
    gen = np.random.default_rng(seed)
    a, b = atoms(gen, na), atoms(gen, nb)
    assert T.w1(a, b) <= T.w2(a, b) + 1e-12


@given(sizes, sizes, st.integers(0, 2**32 - 1))
def test_translation_and_permutation_invariance(na, nb, seed):
    gen = np.random.default_rng(seed)
    a, b = atoms(gen, na), atoms(gen, nb)
    shift = gen.uniform(-10, 10, 3)
    base = T.w2_squared(a, b)
    assert T.w2_squared(np.mod(a + shift, TWO_PI), np.mod(b + shift, TWO_PI)) == pytest.approx(base, abs=1e-12)
    assert T.w2_squared(a[gen.permutation(na)], b[gen.permutation(nb)]) == pytest.approx(base, abs=1e-12)
