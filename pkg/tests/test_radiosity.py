import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ils.fixtures import build_cube
from ils.radiosity import (ConvergenceError, DirectSolver, RadiosityProblem, load_solution_csv,
                           problem_from_scene, residual, save_solution_csv, solve_direct,
                           solve_iterative)
from ils.transport import FormFactorMatrix

F_PAR = 0.19982434   # coaxial unit squares at unit distance
F_ADJ = (1.0 - F_PAR) / 4.0


def analytic_cube_matrix():
    F = np.full((6, 6), F_ADJ)
    np.fill_diagonal(F, 0.0)
    for a, b in ((0, 1), (2, 3), (4, 5)):  # opposite faces in build_cube order
        F[a, b] = F[b, a] = F_PAR
    return FormFactorMatrix(F, np.zeros_like(F), np.ones(6))


def test_build_cube_face_pairs_are_opposite():
    c = build_cube()
    for a, b in ((0, 1), (2, 3), (4, 5)):
        assert np.allclose(c.patches[a].normal, -c.patches[b].normal)


def test_uniform_cube_solution():
    c = build_cube(rho=0.5, flux=6.0)
    sol = solve_direct(problem_from_scene(c, analytic_cube_matrix()))
    # closed, uniformly emitting, uniformly reflecting: B = E / (1 - rho) on every face
    assert np.allclose(sol.B, 2.0, rtol=0, atol=1e-9)
    assert np.ptp(sol.B) <= 1e-9
    assert np.allclose(sol.H, sol.B, atol=1e-9)  # H = G B = B for row sums 1


def test_two_patch_hand_inverse():
    p = RadiosityProblem(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([0.1, 0.1]), np.array([100.0, 0.0]))
    assert np.allclose(solve_direct(p).B, [101.01010101, 10.10101010], atol=1e-8)


def test_gather_uses_reciprocity():
    # two patches of different area: G = A_j F_ji / A_i
    F = np.array([[0.0, 0.5], [0.25, 0.0]])
    p = RadiosityProblem(F, np.zeros(2), np.array([1.0, 0.0]), areas=np.array([1.0, 2.0]))
    assert np.allclose(p.gather(F), [[0.0, 0.5], [0.25, 0.0]])


def random_problem(rng, n):
    raw = rng.random((n, n))
    np.fill_diagonal(raw, 0)
    F = raw / raw.sum(axis=1, keepdims=True) * rng.uniform(0.5, 1.0, (n, 1))
    return RadiosityProblem(F, rng.uniform(0, 0.9, n), rng.random(n) * 10)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10_000), st.sampled_from(["jacobi", "gauss_seidel"]))
def test_iterative_matches_direct(n, seed, scheme):
    p = random_problem(np.random.default_rng(seed), n)
    d = solve_direct(p)
    it = solve_iterative(p, tol=1e-10, scheme=scheme)
    assert np.abs(it.B - d.B).max() <= 10 * 1e-10 * max(1, p.E.max())
    assert residual(p, it.B) <= 1e-10 * max(1, p.E.max())


def test_solutions_are_nonnegative_and_dominate_emission():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = random_problem(rng, 25)
        B = solve_direct(p).B
        assert np.all(B >= p.E - 1e-12)


def test_direct_solver_reuses_factorisation():
    p = random_problem(np.random.default_rng(4), 30)
    s = DirectSolver(p)
    E = np.random.default_rng(5).random(30)
    assert np.allclose(s.solve(E).B, solve_direct(p.with_emission(E)).B, atol=1e-12)


def test_convergence_error_and_validation():
    p = random_problem(np.random.default_rng(6), 10)
    with pytest.raises(ConvergenceError) as exc:
        solve_iterative(p, tol=1e-14, max_iters=2)
    assert exc.value.iterations == 2
    with pytest.raises(ValueError):
        solve_iterative(p, tol=0)
    with pytest.raises(ValueError):
        RadiosityProblem(np.zeros((2, 2)), np.array([0.5, 1.0]), np.zeros(2))
    with pytest.raises(ValueError):
        RadiosityProblem(np.zeros((2, 2)), np.zeros(2), np.array([-1.0, 0]))


def test_singular_system_raises():
    # rho G with eigenvalue 1: I - rho G singular
    sing = RadiosityProblem(np.array([[0.0, 2.0], [2.0, 0.0]]), np.array([0.5, 0.5]), np.ones(2))
    with pytest.raises(np.linalg.LinAlgError):
        solve_direct(sing)


def test_solution_csv_roundtrip(tmp_path):
    c = build_cube()
    sol = solve_direct(problem_from_scene(c, analytic_cube_matrix()))
    save_solution_csv(c, sol, tmp_path / "s.csv")
    ids, back = load_solution_csv(tmp_path / "s.csv")
    assert ids == [p.id for p in c.patches]
    assert np.array_equal(back.B, sol.B) and np.array_equal(back.H, sol.H)
