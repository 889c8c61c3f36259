import copy
from functools import partial

import numpy as np
import pytest

from sloccdecomp.classes import ClassSpec, random_class_element
from sloccdecomp.decomposer import (
    BIPARTITE_PURITY,
    MULTIQUBIT_PURITY,
    Decomposition,
    DecomposerOptions,
    NegativeResidualError,
    RankDeficientError,
    Stalled,
    bipartite_purity_bound,
    multiqubit_purity_bound,
    optimal_epsilon,
    run,
    subtract,
    termination_check,
    threshold_scan,
    uncapped_epsilon,
    verify_decomposition,
)
from sloccdecomp.linalg import DensityMatrix, PureState, StructureError, basis_state, purity
from sloccdecomp.states import ghz_state, ghz_werner, phi_plus, white_noise_mixture

FS3 = ClassSpec.fully_product((2, 2, 2))


@pytest.fixture(scope="module")
def ghz_015():
    rho = ghz_werner(3, 0.15)
    return rho, run(rho, FS3)


def random_separable(rng, n_terms, dims=(2, 2)):
    spec = ClassSpec.fully_product(dims)
    w = rng.dirichlet(np.ones(n_terms))
    mat = 0
    for i, wi in enumerate(w):
        psi, _ = random_class_element(spec, int(rng.integers(1 << 30)))
        mat = mat + wi * np.outer(psi.amplitudes, psi.amplitudes.conj())
    return DensityMatrix(mat, dims)


def test_purity_bounds():
    assert bipartite_purity_bound(2, 2) == pytest.approx(1 / 3)
    assert bipartite_purity_bound(2, 3) == pytest.approx(1 / 5)
    assert bipartite_purity_bound(4, 2) == pytest.approx(1 / 7)
    assert bipartite_purity_bound(3, 3) == pytest.approx(0.125, abs=1e-12)
    assert multiqubit_purity_bound(3) == pytest.approx(19 / 136, abs=1e-15)
    assert multiqubit_purity_bound(4) == pytest.approx(53 / 816, abs=1e-15)
    for n in range(3, 8):
        # never weaker than the maximally mixed point and tighter than the trivial 1
        assert 1 / 2 ** n < multiqubit_purity_bound(n) < 1
    with pytest.raises(ValueError):
        multiqubit_purity_bound(2)


def test_termination_check_examples():
    term = termination_check(DensityMatrix(np.eye(8) / 8, (2, 2, 2)))
    assert term.rule == MULTIQUBIT_PURITY
    assert term.satisfied

    # p^2 + (1 - p^2)/8 = 0.13375 <= 19/136
    assert termination_check(ghz_werner(3, 0.1)).rule == MULTIQUBIT_PURITY
    assert termination_check(ghz_werner(3, 0.5)) is None

    # two-qubit Werner state at p = 1/3 sits exactly on the ball
    term = termination_check(white_noise_mixture(phi_plus(), 1 / 3))
    assert term.rule == BIPARTITE_PURITY
    assert termination_check(white_noise_mixture(phi_plus(), 0.34)) is None


def test_termination_check_groupings():
    rho = ghz_werner(3, 0.3)  # purity 0.20375: above 19/136 and 1/7
    assert termination_check(rho, "12|3") is None
    rho = ghz_werner(3, 0.2)  # purity 0.16
    assert termination_check(rho) is None
    assert termination_check(rho, ["1|23"]) is None
    rho = ghz_werner(3, 0.12)  # 0.1375 < 1/7 and < 19/136: multiqubit is tried first
    assert termination_check(rho, "12|3").rule == MULTIQUBIT_PURITY
    rho = DensityMatrix(np.eye(12) / 12, (2, 3, 2))
    term = termination_check(rho, "12|3")
    assert term.rule == BIPARTITE_PURITY and term.bound_value == pytest.approx(1 / 11)
    assert term.grouping == ((1, 2), (3,))


def test_optimal_epsilon_example():
    rho = DensityMatrix(np.diag([0.75, 0.25]), (2,))
    phi = basis_state(0, (2,))
    assert uncapped_epsilon(0.75, 0.625) == pytest.approx(0.5)
    assert optimal_epsilon(rho, phi) == pytest.approx(0.0025, abs=1e-15)
    assert optimal_epsilon(rho, phi, eps_cap_factor=10) == pytest.approx(0.5)
    # overlap below purity: no subtraction helps
    assert optimal_epsilon(rho, basis_state(1, (2,))) == 0.0
    pure = DensityMatrix(np.diag([1.0, 0.0]), (2,))
    assert optimal_epsilon(pure, phi) == 1.0


def test_uncapped_epsilon_minimizes_purity():
    rng = np.random.default_rng(0)
    grid = np.linspace(0, 0.999, 999001)
    checked = 0
    while checked < 100:
        d = 4
        g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        rho = g @ g.conj().T
        rho /= np.trace(rho).real
        v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        v /= np.linalg.norm(v)
        c = float(np.vdot(v, rho @ v).real)
        P = purity(rho)
        if c <= P:
            continue
        checked += 1
        proj = np.outer(v, v.conj())
        # sample the exact matrix purity to pin the closed form
        for e in grid[::100000]:
            exact = purity((rho - e * proj) / (1 - e))
            assert exact == pytest.approx((P - 2 * e * c + e ** 2) / (1 - e) ** 2, abs=1e-12)
        curve = (P - 2 * grid * c + grid ** 2) / (1 - grid) ** 2
        assert abs(grid[np.argmin(curve)] - uncapped_epsilon(c, P)) <= 1.5e-6


def test_subtract_examples():
    rho = DensityMatrix(np.diag([0.75, 0.25]), (2,))
    out = subtract(rho, basis_state(0, (2,)), 0.5)
    assert np.allclose(out.matrix, np.eye(2) / 2)
    assert subtract(rho, basis_state(0, (2,)), 0.0).matrix == pytest.approx(rho.matrix)
    with pytest.raises(NegativeResidualError):
        subtract(rho, basis_state(0, (2,)), 0.8)
    with pytest.raises(ValueError):
        subtract(rho, basis_state(0, (2,)), 1.0)


def test_subtract_keeps_unit_trace():
    rng = np.random.default_rng(1)
    for _ in range(20):
        rho = random_separable(rng, 6)
        v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        phi = PureState(v / np.linalg.norm(v), (2, 2))
        eps = optimal_epsilon(rho, phi)
        if eps == 0:
            continue
        out = subtract(rho, phi, eps)
        assert np.trace(out.matrix).real == pytest.approx(1.0, abs=1e-12)
        assert purity(out) <= purity(rho) + 1e-12


def test_run_already_inside_ball():
    rho = ghz_werner(3, 0.1)
    dec = run(rho, FS3)
    assert isinstance(dec, Decomposition)
    assert len(dec) == 0 and dec.residual_weight == 1.0
    assert verify_decomposition(rho, dec).passed


def test_run_ghz_fully_separable(ghz_015):
    rho, dec = ghz_015
    assert isinstance(dec, Decomposition)
    report = verify_decomposition(rho, dec)
    assert report.passed, report.lines()
    assert report.reconstruction_error < 1e-8
    assert np.all(dec.weights > 0)
    assert dec.weights.sum() + dec.residual_weight == pytest.approx(1.0, abs=1e-12)


def test_trajectory_purity_is_monotone(ghz_015):
    _, dec = ghz_015
    P = np.array(dec.trajectory.purity + [purity(dec.residual)])
    assert np.all(np.diff(P) <= 1e-12)
    assert np.all(np.array(dec.trajectory.eps) > 0)
    lam_min = np.array(dec.trajectory.lam_min)
    assert np.all(np.array(dec.trajectory.eps) <= 1e-2 * lam_min * (1 + 1e-12))
    lam_max = np.array(dec.trajectory.lam_max + [np.linalg.eigvalsh(dec.residual.matrix)[-1]])
    assert np.all(np.diff(lam_max) <= 1e-8)


def test_weights_follow_product_rule(ghz_015):
    _, dec = ghz_015
    eps = np.array(dec.trajectory.eps)
    q = np.concatenate([[1.0], np.cumprod(1 - eps)[:-1]])
    assert np.allclose(dec.weights, eps * q, atol=1e-15)
    assert dec.residual_weight == pytest.approx(np.prod(1 - eps), abs=1e-12)


def test_run_is_deterministic(ghz_015):
    rho, dec = ghz_015
    again = run(rho, FS3)
    assert np.array_equal(dec.weights, again.weights)
    assert np.array_equal(dec.states, again.states)


def test_run_two_qubit_separable_mixtures():
    rng = np.random.default_rng(2)
    spec = ClassSpec.fully_product((2, 2))
    for _ in range(5):
        rho = random_separable(rng, 3)
        rho = DensityMatrix(0.7 * rho.matrix + 0.3 * np.eye(4) / 4, (2, 2))
        dec = run(rho, spec)
        assert isinstance(dec, Decomposition)
        assert verify_decomposition(rho, dec).passed


def test_entangled_werner_never_certifies():
    spec = ClassSpec.fully_product((2, 2))
    for p in [0.34, 0.36, 0.5, 0.9]:
        out = run(white_noise_mixture(phi_plus(), p), spec, DecomposerOptions(eps_min_progress=10))
        assert isinstance(out, Stalled)
        assert out.witness.value_on_input < 0


def test_near_pure_ghz_stalls_with_witness():
    rho = ghz_werner(3, 0.999)
    out = run(rho, FS3, DecomposerOptions(eps_min_progress=10))
    assert isinstance(out, Stalled)
    assert out.reason == "gate"
    assert not out.certified
    w = out.witness
    assert w.alpha == pytest.approx(0.5, abs=1e-3)
    assert np.allclose(w.operator, w.alpha * np.eye(8) - out.state.rho_k.matrix)
    assert w.value_on_rho < 0
    assert w.value_on_input < 0


def test_max_iters_stall():
    out = run(ghz_werner(3, 0.18), FS3, DecomposerOptions(max_iters=5))
    assert isinstance(out, Stalled) and out.reason == "max-iters"
    assert out.state.k == 5
    assert len(out.state.history) == 5


def test_rank_deficient_input_rejected():
    with pytest.raises(RankDeficientError):
        run(ghz_state(3).density(), FS3)
    with pytest.raises(RankDeficientError):
        run(ghz_werner(3, 1.0), FS3)


def test_structure_mismatch_rejected():
    with pytest.raises(StructureError):
        run(white_noise_mixture(phi_plus(), 0.2), FS3)
    with pytest.raises(ValueError):
        DecomposerOptions(overlap_target="cube").overlap_power


def test_audit_detects_corruption(ghz_015):
    rho, dec = ghz_015
    bad = copy.deepcopy(dec)
    bad.weights[0] += 1e-3
    report = verify_decomposition(rho, bad)
    assert not report.reconstruction_ok and not report.passed

    bad = copy.deepcopy(dec)
    bad.residual = ghz_werner(3, 0.5)
    report = verify_decomposition(rho, bad)
    assert not report.termination_ok

    bad = copy.deepcopy(dec)
    bad.states[3] = ghz_state(3).amplitudes
    report = verify_decomposition(rho, bad)
    assert 3 in report.invalid_certificates

    bad = copy.deepcopy(dec)
    bad.termination = type(dec.termination)(BIPARTITE_PURITY, 0.1, 1 / 7, ((1, 2), (3,)))
    assert not verify_decomposition(rho, bad).termination_ok
    assert all(line.split()[1] in ("PASS", "FAIL") for line in report.lines())


def test_threshold_scan_two_qubits_respects_entanglement():
    fam = lambda p: white_noise_mixture(phi_plus(), p)
    spec = ClassSpec.fully_product((2, 2))
    res = threshold_scan(fam, spec, 0.2, 0.6, tol_p=1e-3, opts=DecomposerOptions(eps_min_progress=10))
    # separable exactly up to 1/3, and the purity ball reaches that point
    assert res.certified <= 1 / 3 + 1e-12
    assert res.certified >= 1 / 3 - 1e-3
    assert res.width <= 1e-3
    assert all(ok == (p <= 1 / 3 + 1e-12) for p, ok, _, _ in res.probes)


def test_threshold_scan_parallel_matches_serial():
    fam = partial(ghz_werner, 3)
    opts = DecomposerOptions(eps_min_progress=10)
    serial = threshold_scan(fam, FS3, 0.10, 0.18, tol_p=0.02, opts=opts)
    parallel = threshold_scan(fam, FS3, 0.10, 0.18, tol_p=0.02, opts=opts, jobs=2)
    assert serial.certified == parallel.certified
    assert serial.bracket == parallel.bracket
