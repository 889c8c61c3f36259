import numpy as np
import pytest

from sloccdecomp.linalg import (
    DensityMatrix,
    InvalidStateError,
    PartyStructure,
    PureState,
    StructureError,
    basis_state,
    matrix_sqrt,
    max_eigenpair,
    normalize_split,
    partial_trace,
    purity,
    schmidt_rank,
    tensor_product,
    validate_density,
)
from sloccdecomp.classes import apply_local_filters, random_invertible_filter
from sloccdecomp.states import ghz_state, ghz_werner, w_state, phi_plus


def random_density(rng, d, rank=None):
    rank = rank or d
    g = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    m = g @ g.conj().T
    return m / np.trace(m).real


def random_pure(rng, dims):
    v = rng.standard_normal(int(np.prod(dims))) + 1j * rng.standard_normal(int(np.prod(dims)))
    return PureState(v / np.linalg.norm(v), dims)


def test_structure():
    s = PartyStructure((2, 3, 2))
    assert s.total_dim == 12
    assert str(s) == "2x3x2"
    assert PartyStructure.parse("2x3x2") == s
    assert PartyStructure.qubits(3).all_qubits
    with pytest.raises(StructureError):
        PartyStructure((2, 1))


def test_tensor_product_examples():
    zero = basis_state(0, (2,))
    out = tensor_product([zero, zero, zero])
    assert np.allclose(out.amplitudes, np.eye(8)[0])
    assert out.structure == PartyStructure.qubits(3)

    plus = PureState(np.array([1, 1]) / np.sqrt(2), (2,))
    out = tensor_product([plus, zero])
    assert np.allclose(out.amplitudes, [1 / np.sqrt(2), 0, 1 / np.sqrt(2), 0])

    assert np.allclose(tensor_product([np.eye(2), np.eye(2)]), np.eye(4))


def test_tensor_product_rejects_mixed_inputs():
    with pytest.raises(ValueError):
        tensor_product([np.eye(2), np.array([1.0, 0.0])])


def test_partial_trace_examples():
    ghz = ghz_state(3).density()
    red = partial_trace(ghz, [1, 2])
    assert np.allclose(red.matrix, np.diag([0.5, 0, 0, 0.5]), atol=1e-15)

    rng = np.random.default_rng(0)
    a, b = random_density(rng, 2), random_density(rng, 3)
    prod = DensityMatrix(np.kron(a, b), (2, 3))
    assert np.allclose(partial_trace(prod, [1]).matrix, a, atol=1e-14)

    mixed = DensityMatrix(np.eye(6) / 6, (2, 3))
    assert np.allclose(partial_trace(mixed, [1]).matrix, np.eye(2) / 2)


def test_partial_trace_errors():
    rho = ghz_werner(3, 0.5)
    with pytest.raises(StructureError):
        partial_trace(rho, [])
    with pytest.raises(StructureError):
        partial_trace(rho, [4])


def test_partial_trace_composes():
    rng = np.random.default_rng(1)
    for _ in range(10):
        rho = DensityMatrix(random_density(rng, 24), (2, 3, 4))
        step = partial_trace(rho, [1, 3])
        twice = partial_trace(step, [1])
        direct = partial_trace(rho, [1])
        assert np.max(np.abs(twice.matrix - direct.matrix)) < 1e-12


def test_partial_trace_against_explicit_sum():
    rng = np.random.default_rng(2)
    rho = random_density(rng, 12)
    t = rho.reshape(2, 3, 2, 2, 3, 2)
    expected = np.einsum("abcdbf->acdf", t).reshape(4, 4)
    got = partial_trace(DensityMatrix(rho, (2, 3, 2)), [1, 3]).matrix
    assert np.allclose(got, expected, atol=1e-14)


def test_complementary_reduced_purities_agree():
    rng = np.random.default_rng(3)
    for dims in [(2, 2), (2, 3, 2), (2, 2, 2, 2)]:
        for _ in range(5):
            psi = random_pure(rng, dims)
            n = len(dims)
            keep = sorted(rng.choice(np.arange(1, n + 1), size=int(rng.integers(1, n)), replace=False))
            rest = [p for p in range(1, n + 1) if p not in keep]
            rho = psi.density()
            assert abs(purity(partial_trace(rho, keep)) - purity(partial_trace(rho, rest))) < 1e-10


def test_max_eigenpair_examples():
    lam, v = max_eigenpair(np.diag([1.0, 2.0, 3.0]))
    assert lam == pytest.approx(3.0)
    assert np.allclose(np.abs(v), [0, 0, 1])

    lam, v = max_eigenpair(np.array([[0, 1], [1, 0]], dtype=complex))
    assert lam == pytest.approx(1.0)
    assert np.allclose(v, np.array([1, 1]) / np.sqrt(2))


def test_max_eigenpair_random():
    rng = np.random.default_rng(4)
    for d in [2, 5, 8, 16]:
        for _ in range(10):
            g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
            H = (g + g.conj().T) / 2
            lam, v = max_eigenpair(H)
            assert lam == pytest.approx(np.linalg.eigvals(H).real.max(), abs=1e-10)
            assert np.linalg.norm(H @ v - lam * v) <= 1e-10
            assert abs(np.linalg.norm(v) - 1) < 1e-12


def test_max_eigenpair_rejects_non_hermitian():
    with pytest.raises(ValueError):
        max_eigenpair(np.array([[0, 1], [0, 0]], dtype=complex))


def test_matrix_sqrt_examples():
    assert np.allclose(matrix_sqrt(np.eye(4) / 4), np.eye(4) / 2)
    P = np.outer([1, 1j], [1, -1j]) / 2
    assert np.allclose(matrix_sqrt(P), P, atol=1e-12)
    assert np.allclose(matrix_sqrt(np.diag([0.25, 0.75])), np.diag([0.5, np.sqrt(0.75)]))


def test_matrix_sqrt_squares_back():
    rng = np.random.default_rng(5)
    for d in [2, 4, 8]:
        for rank in [1, d // 2, d]:
            rho = random_density(rng, d, rank)
            s = matrix_sqrt(rho)
            assert np.max(np.abs(s @ s - rho)) < 1e-10
            assert np.linalg.eigvalsh(s)[0] >= -1e-12


def test_matrix_sqrt_rejects_negative():
    with pytest.raises(InvalidStateError):
        matrix_sqrt(np.diag([1.1, -0.1]))


def test_purity_examples():
    assert purity(np.eye(8) / 8) == pytest.approx(1 / 8)
    assert purity(ghz_state(3).density()) == pytest.approx(1.0)
    # p^2 + (1 - p^2)/8 at p = 1/2
    assert purity(ghz_werner(3, 0.5)) == pytest.approx(0.34375, abs=1e-15)
    for p in np.linspace(0, 1, 11):
        assert purity(ghz_werner(3, p)) == pytest.approx(p ** 2 + (1 - p ** 2) / 8, abs=1e-14)


def test_schmidt_rank_examples():
    w4 = w_state(4)
    assert schmidt_rank(w4, "13|24") == 2
    pp = tensor_product([phi_plus(), phi_plus()])
    assert schmidt_rank(pp, "13|24") == 4
    prod = tensor_product([basis_state(1, (2,)), basis_state(0, (3,)), basis_state(2, (3,))])
    for split in ["1|23", "12|3", "13|2"]:
        assert schmidt_rank(prod, split) == 1


def test_schmidt_rank_rejects_trivial_split():
    with pytest.raises(StructureError):
        schmidt_rank(ghz_state(3), ((1, 2, 3), ()))


def test_schmidt_rank_filter_invariance():
    rng = np.random.default_rng(6)
    for seed in [ghz_state(3), w_state(3), w_state(4)]:
        dims = seed.structure.local_dims
        ranks = {s: schmidt_rank(seed, normalize_split(s, len(dims))) for s in [(1,), (2,), (1, 2)]}
        for _ in range(5):
            filters = [random_invertible_filter(rng, d) for d in dims]
            v = apply_local_filters(seed.amplitudes, filters, dims)
            psi = PureState(v / np.linalg.norm(v), dims)
            for s, r in ranks.items():
                assert schmidt_rank(psi, normalize_split(s, len(dims))) == r


def test_validate_density_examples():
    rho = ghz_werner(3, 0.3)
    out = validate_density(rho.matrix, (2, 2, 2))
    assert np.array_equal(out.matrix, rho.matrix)

    m = np.diag([0.5, 0.5 + 1e-12])
    out = validate_density(m, (2,))
    assert np.trace(out.matrix).real == pytest.approx(1.0, abs=1e-15)

    with pytest.raises(InvalidStateError):
        validate_density(np.diag([1.001, -0.001]), (2,))


def test_validate_density_errors():
    with pytest.raises(InvalidStateError):
        validate_density(np.diag([0.6, 0.6]), (2,))
    with pytest.raises(InvalidStateError):
        validate_density(np.array([[0.5, 0.1], [0.3, 0.5]]), (2,))
    with pytest.raises(StructureError):
        validate_density(np.eye(4) / 4, (2, 3))


def test_normalize_split_forms():
    assert normalize_split("13|24", 4) == ((1, 3), (2, 4))
    assert normalize_split("24|13", 4) == ((1, 3), (2, 4))
    assert normalize_split((3,), 3) == ((1, 2), (3,))
    assert normalize_split(((2,), (1, 3)), 3) == ((1, 3), (2,))
    with pytest.raises(StructureError):
        normalize_split("12|2", 3)
