import numpy as np
import pytest
from scipy.optimize import linprog

from sloccdecomp.classes import ClassSpec, random_class_element
from sloccdecomp.decomposer import Decomposition, RankDeficientError, run, termination_check
from sloccdecomp.epsball import (
    CenterInfeasibleError,
    OperatorVector,
    coords_to_matrix,
    cross_polytope_ball,
    decomposition_vertices,
    dedup_vertices,
    ghz_werner_shift_bound,
    matrix_to_coords,
    max_f_direction,
    membership_lp,
    pure_coords,
    rho_to_vec,
    vec_to_rho,
)
from sloccdecomp.linalg import DensityMatrix, basis_state
from sloccdecomp.states import be3_state, ghz_werner


def random_density(rng, d):
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    m = g @ g.conj().T
    return m / np.trace(m).real


def test_coordinate_examples():
    assert np.allclose(rho_to_vec(DensityMatrix(np.eye(2) / 2, (2,))).coords, [0.5, 0, 0])
    assert np.allclose(rho_to_vec(basis_state(0, (2,)).density()).coords, [1, 0, 0])
    # off-diagonal pairs follow the row-major upper triangle
    m = np.array([[0.5, 0.1 - 0.2j], [0.1 + 0.2j, 0.5]])
    assert np.allclose(matrix_to_coords(m), [0.5, 0.1, -0.2])
    assert len(rho_to_vec(ghz_werner(3, 0.5))) == 63


def test_coordinate_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(10):
        rho = DensityMatrix(random_density(rng, 8), (2, 2, 2))
        back = vec_to_rho(rho_to_vec(rho))
        assert np.max(np.abs(back.matrix - rho.matrix)) < 1e-12


def test_coordinates_are_affine():
    rng = np.random.default_rng(1)
    a, b = random_density(rng, 4), random_density(rng, 4)
    t = 0.3
    assert np.allclose(matrix_to_coords(t * a + (1 - t) * b),
                       t * matrix_to_coords(a) + (1 - t) * matrix_to_coords(b))
    stack = np.stack([a, b])
    assert np.allclose(matrix_to_coords(stack)[1], matrix_to_coords(b))


def test_pure_coords_match_projectors():
    rng = np.random.default_rng(2)
    states = rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4))
    states /= np.linalg.norm(states, axis=1)[:, None]
    for v, c in zip(states, pure_coords(states)):
        assert np.allclose(c, matrix_to_coords(np.outer(v, v.conj())))
        assert np.allclose(coords_to_matrix(c, 4), np.outer(v, v.conj()))


def test_operator_vector_checks_length():
    with pytest.raises(ValueError):
        OperatorVector(np.zeros(4), (2,))


def test_membership_examples():
    V = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    res = membership_lp(V[1], V)
    assert res.feasible
    assert np.allclose(res.weights, [0, 1, 0], atol=1e-9)

    res = membership_lp((V[1] + V[2]) / 2, V)
    assert res.feasible
    assert np.allclose(res.weights, [0, 0.5, 0.5], atol=1e-9)

    line = np.array([[0.0], [1.0]])
    assert not membership_lp(np.array([1.5]), line).feasible
    assert membership_lp(np.array([1.0 + 5e-10]), line).feasible
    assert not membership_lp(np.array([1.0 + 1e-8]), line).feasible


def test_membership_weights_reproduce_target():
    rng = np.random.default_rng(3)
    for _ in range(20):
        V = rng.standard_normal((12, 5))
        w = rng.dirichlet(np.ones(12))
        t = V.T @ w
        res = membership_lp(t, V)
        assert res.feasible
        assert np.all(res.weights >= 0)
        assert res.weights.sum() == pytest.approx(1, abs=1e-12)
        assert np.max(np.abs(V.T @ res.weights - t)) <= 1e-9


def test_membership_errors():
    with pytest.raises(ValueError):
        membership_lp(np.zeros(2), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        membership_lp(np.zeros(3), np.zeros((2, 2)))


def test_max_f_examples():
    V = np.array([[-1.0], [1.0]])
    assert max_f_direction(np.zeros(1), np.ones(1), V) == pytest.approx(1.0, abs=1e-6)
    assert max_f_direction(np.zeros(1), np.ones(1), V) <= 1.0

    flat = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    c = flat.mean(axis=0)
    assert max_f_direction(c, np.array([0, 0, 1.0]), flat) == 0.0

    tri = flat[:, :2]
    c = tri.mean(axis=0)
    for e in [(1, 0), (-1, 0), (0, 1), (0, -1)]:
        assert max_f_direction(c, np.array(e, dtype=float), tri) == pytest.approx(1 / 3, abs=1e-6)


def test_max_f_respects_cap():
    V = np.array([[-10.0], [10.0]])
    assert max_f_direction(np.zeros(1), np.ones(1), V) == 2.0


def test_max_f_center_infeasible():
    with pytest.raises(CenterInfeasibleError):
        max_f_direction(np.array([3.0]), np.ones(1), np.array([[0.0], [1.0]]))


def test_max_f_matches_direct_lp():
    # oracle: maximize f subject to V^T w = c + f e, w >= 0, sum w = 1
    rng = np.random.default_rng(4)
    for _ in range(10):
        V = rng.standard_normal((15, 3))
        c = V.T @ rng.dirichlet(np.ones(15))
        e = rng.standard_normal(3)
        e /= np.linalg.norm(e)
        m = len(V)
        A_eq = np.vstack([np.hstack([V.T, -e[:, None]]), np.concatenate([np.ones(m), [0.0]])[None, :]])
        b_eq = np.concatenate([c, [1.0]])
        cost = np.zeros(m + 1)
        cost[-1] = -1
        exact = -linprog(cost, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs").fun
        f = max_f_direction(c, e, V)
        assert f <= exact + 1e-8
        assert exact - f <= 1e-6 + 1e-8


def test_dedup_vertices():
    pts = np.array([[0.0, 0.0], [1e-7, 0.0], [1.0, 0.0], [1.0, 5e-7], [2.0, 2.0]])
    assert list(dedup_vertices(pts)) == [0, 2, 4]
    assert list(dedup_vertices(pts, radius=1e-9)) == [0, 1, 2, 3, 4]
    assert len(dedup_vertices(np.zeros((0, 3)))) == 0


def make_two_qubit_decomposition(n_members, seed=0):
    """A fully separable decomposition with many product members around 1/4."""
    rng = np.random.default_rng(seed)
    spec = ClassSpec.fully_product((2, 2))
    states, certs = [], []
    for _ in range(n_members):
        psi, cert = random_class_element(spec, int(rng.integers(1 << 30)))
        states.append(psi.amplitudes)
        certs.append(cert)
    states = np.array(states)
    weights = np.full(n_members, 0.5 / n_members)
    residual = DensityMatrix(np.eye(4) / 4, (2, 2))
    dec = Decomposition(spec, weights, states, certs, 0.5, residual, termination_check(residual))
    return DensityMatrix(dec.reconstruct(), (2, 2)), dec


def test_cross_polytope_two_qubits():
    rho, dec = make_two_qubit_decomposition(150)
    res = cross_polytope_ball(rho, dec)
    assert res.vertex_count == 30
    assert len(res.per_direction) == 30
    assert res.hull_size == 151
    assert res.f_cp == pytest.approx(min(f for _, _, f in res.per_direction))
    assert res.eps_ball == pytest.approx(res.f_cp / np.sqrt(15))
    assert res.f_cp > 0 and res.vertices_ok
    assert res.table().splitlines()[0] == "index sign f"

    # the inscribed ball of the cross polytope lies in the hull
    rng = np.random.default_rng(5)
    V = decomposition_vertices(dec)
    center = matrix_to_coords(rho.matrix)
    for _ in range(20):
        u = rng.standard_normal(15)
        assert membership_lp(center + 0.999 * res.eps_ball * u / np.linalg.norm(u), V).feasible

    # adding vertices can only grow f around a fixed center
    small = Decomposition(dec.spec, dec.weights[:60] * 150 / 60, dec.states[:60], dec.certificates[:60],
                          0.5, dec.residual, dec.termination)
    center_small = matrix_to_coords(small.reconstruct())
    V_small = decomposition_vertices(small)
    for i in range(0, 15, 4):
        e = np.eye(15)[i]
        assert max_f_direction(center_small, e, V_small) <= max_f_direction(center_small, e, V) + 1e-6


def test_cross_polytope_rotations_keep_best():
    rho, dec = make_two_qubit_decomposition(50, seed=1)
    axis = cross_polytope_ball(rho, dec)
    rotated = cross_polytope_ball(rho, dec, rotations=1, rng_seed=3)
    assert rotated.f_cp >= axis.f_cp
    if rotated.rotation is not None:
        Q = rotated.rotation
        assert np.allclose(Q.T @ Q, np.eye(15), atol=1e-10)


def test_cross_polytope_degenerate_hull():
    # a decomposition with no members leaves only the residual as a vertex
    rho = ghz_werner(3, 0.1)
    dec = run(rho, ClassSpec.fully_product((2, 2, 2)))
    res = cross_polytope_ball(rho, dec)
    assert res.f_cp == 0.0 and res.eps_ball == 0.0
    assert res.hull_size == 1


def test_cross_polytope_center_outside():
    rho, dec = make_two_qubit_decomposition(20, seed=2)
    other = DensityMatrix(basis_state(0, (2, 2)).density().matrix * 0.9 + 0.1 * np.eye(4) / 4, (2, 2))
    with pytest.raises(CenterInfeasibleError):
        cross_polytope_ball(other, dec)


def test_eps_ball_formula_example():
    assert 0.1 / np.sqrt(63) == pytest.approx(0.012599, abs=1e-6)


def test_shift_bound_examples():
    assert ghz_werner_shift_bound(0.0) == 0.0
    assert ghz_werner_shift_bound(7e-5) == pytest.approx(7.48e-5, abs=1e-7)
    with pytest.raises(ValueError):
        ghz_werner_shift_bound(-1e-3)


def test_ghz_werner_distance():
    hs2 = lambda a, b: float(np.sum(np.abs(a.matrix - b.matrix) ** 2))
    assert hs2(ghz_werner(3, 0.3), ghz_werner(3, 0.4)) == pytest.approx(0.00875, abs=1e-12)
    rng = np.random.default_rng(6)
    for _ in range(5):
        p, q = rng.uniform(0, 1, 2)
        a, b = ghz_werner(3, p), ghz_werner(3, q)
        assert hs2(a, b) == pytest.approx(7 / 8 * (p - q) ** 2, abs=1e-10)
        # the shift bound inverts that distance
        assert ghz_werner_shift_bound(np.sqrt(hs2(a, b))) == pytest.approx(abs(p - q), abs=1e-10)


def test_be3_has_no_interior_ball():
    # rank seven: the ideal state sits on the boundary of state space
    rho = be3_state()
    assert np.linalg.matrix_rank(rho.matrix, tol=1e-10) == 7
    with pytest.raises(RankDeficientError):
        run(rho, ClassSpec.product_across("2|13", (2, 2, 2)))
