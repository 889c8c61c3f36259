"""Iterative convex decomposition into class states.

Each iteration finds a class state ``phi`` with large overlap with (a power
of) the current residual ``rho_k``, removes it with the weight that lowers
the purity most (capped at a fraction of the smallest eigenvalue),

    rho_{k+1} = (rho_k - eps |phi><phi|) / (1 - eps),

and stops once a purity bound certifies the residual as separable. The
input is then ``sum_i p_i |phi_i><phi_i| + q_n rho_n`` with
``p_i = eps_i q_{i-1}`` and ``q_i = prod_{j<=i} (1 - eps_j)``.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .classes import ClassCertificate, ClassKind, ClassSpec, Split, verify_certificate
from .linalg import (
    DEFAULT_TOL,
    DensityMatrix,
    InvalidStateError,
    PureState,
    StructureError,
    Tolerances,
    normalize_split,
    purity,
    split_label,
    validate_density,
)
from .overlap import OverlapOptions, maximize_overlap

logger = logging.getLogger(__name__)

BIPARTITE_PURITY = "bipartite-purity"
MULTIQUBIT_PURITY = "multiqubit-purity"
TOL_RECONSTRUCT = 1e-8
MAX_HALVINGS = 60


class RankDeficientError(InvalidStateError):
    """The input state has a (numerical) kernel; subtraction cannot stay PSD."""


class NegativeResidualError(InvalidStateError):
    """A subtraction produced an eigenvalue below ``-tol_psd``."""


class ThresholdScanError(RuntimeError):
    """The scan could not certify its starting parameter."""


# -- purity bounds --------------------------------------------------------------------


def bipartite_purity_bound(dim_a: int, dim_b: int) -> float:
    """Separability ball of an N x M system: tr(rho^2) <= 1/(NM - 1)."""
    return 1.0 / (dim_a * dim_b - 1)


def multiqubit_purity_bound(n_qubits: int) -> float:
    """Full-separability bound 1/(2^N - alpha^2) for N >= 3 qubits."""
    if n_qubits < 3:
        raise ValueError("the multiqubit bound needs at least three qubits")
    alpha2 = 2.0 ** n_qubits / (8.5 * 3.0 ** (n_qubits - 3) + 1)
    return 1.0 / (2.0 ** n_qubits - alpha2)


@dataclass(frozen=True)
class TerminationCertificate:
    rule: str
    purity_value: float
    bound_value: float
    grouping: Optional[Split] = None

    @property
    def satisfied(self) -> bool:
        return self.purity_value <= self.bound_value

    def describe(self) -> str:
        extra = f" grouping={split_label(self.grouping)}" if self.grouping else ""
        return f"{self.rule} purity={self.purity_value:.17g} bound={self.bound_value:.17g}{extra}"


def termination_groupings(spec: ClassSpec) -> list[Split]:
    """Bipartitions whose separability implies membership in the class hull.

    Fully separable states lie in every hull, so a two-party structure
    always admits its natural split; split kinds add their own splits.
    """
    n = spec.structure.n_parties
    out = []
    if n == 2:
        out.append(normalize_split((1,), 2))
    if spec.kind in (ClassKind.PRODUCT_ACROSS_SPLIT, ClassKind.BISEPARABLE_MIXTURE):
        out.extend(s for s in spec.splits if s not in out)
    return out


def multiqubit_rule_applies(structure) -> bool:
    return structure.all_qubits and structure.n_parties >= 3


def termination_check(rho, grouping=None) -> Optional[TerminationCertificate]:
    """First satisfied purity certificate for ``rho``, or None.

    The multiqubit rule is tried when every party is a qubit and there are
    at least three parties. The bipartite rule is tried on ``grouping`` (one
    split, or a ``list`` of splits); without one it is only used for
    two-party structures, where it certifies full separability.
    """
    structure = rho.structure
    P = purity(rho)
    if multiqubit_rule_applies(structure):
        bound = multiqubit_purity_bound(structure.n_parties)
        if P <= bound:
            return TerminationCertificate(MULTIQUBIT_PURITY, P, bound)
    n = structure.n_parties
    if grouping is None:
        groups = [normalize_split((1,), 2)] if n == 2 else []
    elif isinstance(grouping, list):
        groups = [normalize_split(g, n) for g in grouping]
    else:
        groups = [normalize_split(grouping, n)]
    for g in groups:
        bound = bipartite_purity_bound(structure.block_dim(g[0]), structure.block_dim(g[1]))
        if P <= bound:
            return TerminationCertificate(BIPARTITE_PURITY, P, bound, g)
    return None


# -- single-step operations --------------------------------------------------------------


def uncapped_epsilon(c: float, rho_purity: float) -> float:
    """Weight minimizing the purity of the residual: (c - tr rho^2)/(1 - c)."""
    return (c - rho_purity) / (1.0 - c)


def optimal_epsilon(rho_k, phi_k: PureState, eps_cap_factor: float = 1e-2) -> float:
    """Purity-optimal subtraction weight capped at ``eps_cap_factor * lambda_min``.

    Returns 0 when no subtraction lowers the purity and 1 when ``rho_k`` is
    the pure state ``phi_k`` itself.
    """
    mat = rho_k.matrix if isinstance(rho_k, DensityMatrix) else np.asarray(rho_k)
    phi = phi_k.amplitudes if isinstance(phi_k, PureState) else np.asarray(phi_k)
    c = float(np.vdot(phi, mat @ phi).real)
    lam_min = float(np.linalg.eigvalsh(mat)[0])
    return _capped_epsilon(c, purity(mat), lam_min, eps_cap_factor)


def _capped_epsilon(c: float, P: float, lam_min: float, cap_factor: float) -> float:
    if 1.0 - c <= 1e-12:
        return 1.0
    eps = uncapped_epsilon(c, P)
    if eps <= 0:
        return 0.0
    return min(eps, cap_factor * lam_min)


def subtract(rho_k, phi_k: PureState, epsilon: float, tol: Tolerances = DEFAULT_TOL) -> DensityMatrix:
    """Residual ``(rho_k - eps |phi><phi|)/(1 - eps)``, revalidated.

    Raises
    ------
    NegativeResidualError
        If the residual has an eigenvalue below ``-tol.psd``; shrink ``eps``.
    """
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must lie in [0, 1)")
    rho_k = rho_k if isinstance(rho_k, DensityMatrix) else validate_density(rho_k, phi_k.structure, tol)
    new = _subtract_array(rho_k.matrix, phi_k.amplitudes, epsilon)
    lam = float(np.linalg.eigvalsh(new)[0])
    if lam < -tol.psd:
        raise NegativeResidualError(f"residual eigenvalue {lam:.3e} below -tol_psd")
    return DensityMatrix(new, rho_k.structure, lam)


def _subtract_array(mat: np.ndarray, phi: np.ndarray, eps: float) -> np.ndarray:
    new = (mat - eps * np.outer(phi, phi.conj())) / (1.0 - eps)
    return (new + new.conj().T) / 2


# -- result types --------------------------------------------------------------------------


@dataclass
class DecomposerOptions:
    max_iters: int = 20000
    eps_cap_factor: float = 1e-2
    overlap_target: Union[str, float] = "sqrt"
    restarts: int = 5
    max_sweeps: int = 20
    rng_seed: int = 0
    eps_min_progress: int = 50
    stall_rel_purity: float = 1e-10
    min_members: int = 0
    log_every: int = 100
    tol: Tolerances = field(default_factory=Tolerances)

    @property
    def overlap_power(self) -> float:
        target = self.overlap_target
        if isinstance(target, str):
            powers = {"sqrt": 0.5, "rho": 1.0}
            if target not in powers:
                raise ValueError(f"overlap_target must be 'sqrt', 'rho' or a power, got {target!r}")
            return powers[target]
        power = float(target)
        if not 0 < power <= 1:
            raise ValueError("overlap_target power must lie in (0, 1]")
        return power


@dataclass
class Trajectory:
    """Per accepted step: purity and extreme eigenvalues before the step,
    the subtracted weight and the overlap of the class state with rho_k."""

    purity: list = field(default_factory=list)
    lam_max: list = field(default_factory=list)
    lam_min: list = field(default_factory=list)
    eps: list = field(default_factory=list)
    overlap: list = field(default_factory=list)

    def append(self, P, lam_max, lam_min, eps, c):
        self.purity.append(P)
        self.lam_max.append(lam_max)
        self.lam_min.append(lam_min)
        self.eps.append(eps)
        self.overlap.append(c)


@dataclass
class IterationState:
    rho_k: DensityMatrix
    k: int
    q_k: float
    history: list
    trajectory: Trajectory


@dataclass(eq=False)
class Decomposition:
    """``rho = sum_i weights[i] |states[i]><states[i]| + residual_weight * residual``."""

    spec: ClassSpec
    weights: np.ndarray
    states: np.ndarray
    certificates: list
    residual_weight: float
    residual: DensityMatrix
    termination: TerminationCertificate
    trajectory: Trajectory = field(default_factory=Trajectory)
    iterations: int = 0

    def __len__(self):
        return len(self.weights)

    @property
    def structure(self):
        return self.spec.structure

    @property
    def members(self) -> list[tuple[float, PureState, ClassCertificate]]:
        return [(float(p), PureState(v, self.structure), cert)
                for p, v, cert in zip(self.weights, self.states, self.certificates)]

    def reconstruct(self) -> np.ndarray:
        mixed = np.einsum("i,ij,ik->jk", self.weights, self.states, self.states.conj()) \
            if len(self.weights) else 0.0
        return mixed + self.residual_weight * self.residual.matrix


@dataclass
class WitnessCandidate:
    """``W = alpha 1 - rho_k`` with ``alpha`` the best overlap found.

    Since ``alpha`` is a heuristic lower bound on the supremum over the
    class, this is evidence of non-membership, not a proof.
    """

    alpha: float
    operator: np.ndarray
    value_on_rho: float
    value_on_input: float


@dataclass
class Stalled:
    reason: str
    witness: WitnessCandidate
    state: IterationState
    message: str = ""

    @property
    def certified(self) -> bool:
        return False


# -- main loop -------------------------------------------------------------------------------


def _check_run_inputs(rho, spec: ClassSpec, tol: Tolerances) -> DensityMatrix:
    if not isinstance(rho, DensityMatrix):
        rho = validate_density(rho, spec.structure, tol)
    if rho.structure != spec.structure:
        raise StructureError(f"state dims {rho.structure} differ from class dims {spec.structure}")
    if not termination_groupings(spec) and not multiqubit_rule_applies(spec.structure):
        raise ValueError(f"no purity bound certifies membership for dims {spec.structure}")
    return rho


def run(rho, spec: ClassSpec, opts: Optional[DecomposerOptions] = None) -> Union[Decomposition, Stalled]:
    """Decompose ``rho`` into states of ``spec``.

    Returns a :class:`Decomposition` when a purity bound certifies the
    residual, otherwise a :class:`Stalled` record carrying a witness
    candidate. A stall is inconclusive, never a proof of non-membership.

    Raises
    ------
    RankDeficientError
        If the smallest eigenvalue of ``rho`` is not above ``tol.psd``.
    """
    opts = opts or DecomposerOptions()
    tol = opts.tol
    power = opts.overlap_power
    rho = _check_run_inputs(rho, spec, tol)
    groupings = termination_groupings(spec)
    structure = spec.structure

    mat = rho.matrix.copy()
    evals, evecs = np.linalg.eigh(mat)
    if evals[0] <= tol.psd:
        raise RankDeficientError(
            f"input is rank deficient (min eigenvalue {evals[0]:.3e}); "
            "subtracted class states cannot avoid its kernel")

    rng = np.random.default_rng(opts.rng_seed)
    ov_opts = OverlapOptions(restarts=opts.restarts, max_sweeps=opts.max_sweeps, rng_seed=rng)
    weights, states, certs = [], [], []
    traj = Trajectory()
    q = 1.0
    P = purity(mat)
    warm = {} if spec.kind is ClassKind.BISEPARABLE_MIXTURE else None
    fails = 0
    slow = 0
    alpha = -np.inf
    t0 = time.perf_counter()

    def finish(term):
        return Decomposition(spec, np.asarray(weights, dtype=float),
                             np.asarray(states, dtype=complex).reshape(len(states), structure.total_dim),
                             certs, q, DensityMatrix(mat, structure, float(evals[0])), term, traj, k)

    def stalled(reason, message):
        op = alpha * np.eye(structure.total_dim) - mat
        w = WitnessCandidate(float(alpha), op, float(np.trace(mat @ op).real),
                             float(np.trace(rho.matrix @ op).real))
        history = [(e, PureState(v, structure), cert, c)
                   for e, v, cert, c in zip(traj.eps, states, certs, traj.overlap)]
        it = IterationState(DensityMatrix(mat, structure, float(evals[0])), k, q, history, traj)
        logger.info("stalled (%s) after %d iterations: %s", reason, k, message)
        return Stalled(reason, w, it, message)

    k = 0
    if opts.min_members <= 0:
        term = termination_check(DensityMatrix(mat, structure), groupings)
        if term is not None:
            return finish(term)

    for k in range(1, opts.max_iters + 1):
        lam_min, lam_max = float(evals[0]), float(evals[-1])
        if power == 1.0:
            target = mat
        else:
            target = (evecs * np.clip(evals, 0.0, None) ** power) @ evecs.conj().T
        res = maximize_overlap(spec, target, ov_opts, warm)
        phi = res.state.amplitudes
        c = float(np.vdot(phi, mat @ phi).real)
        if c <= P and power != 1.0:
            # the witness needs the best overlap with rho_k itself
            retry = maximize_overlap(spec, mat, ov_opts, _warm_from(res, spec, warm))
            c_retry = float(np.vdot(retry.state.amplitudes, mat @ retry.state.amplitudes).real)
            if c_retry > c:
                res, phi, c = retry, retry.state.amplitudes, c_retry
        if spec.kind is ClassKind.BISEPARABLE_MIXTURE:
            warm[res.certificate.split] = res.certificate
        else:
            warm = res.certificate

        eps = _capped_epsilon(c, P, lam_min, opts.eps_cap_factor) if c > P else 0.0
        if eps <= 0.0:
            fails += 1
            alpha = max(alpha, c)
            if fails >= opts.eps_min_progress:
                return stalled("gate", f"best overlap {alpha:.6g} <= purity {P:.6g}")
            continue
        fails = 0
        alpha = -np.inf

        for _ in range(MAX_HALVINGS + 1):
            new = _subtract_array(mat, phi, eps)
            new_evals, new_evecs = np.linalg.eigh(new)
            P_new = purity(new)
            if new_evals[0] >= -tol.psd and P_new <= P + 1e-12:
                break
            eps /= 2
        else:
            raise NegativeResidualError("could not keep the residual PSD by halving epsilon")

        traj.append(P, lam_max, lam_min, eps, c)
        weights.append(eps * q)
        states.append(phi)
        certs.append(res.certificate)
        q *= 1.0 - eps
        slow = slow + 1 if (P - P_new) < opts.stall_rel_purity * P else 0
        mat, evals, evecs, P = new, new_evals, new_evecs, P_new
        if opts.log_every and k % opts.log_every == 0:
            logger.info("iter %d purity %.10f overlap %.6f eps %.3e members %d (%.1fs)",
                        k, P, c, eps, len(weights), time.perf_counter() - t0)
        if len(weights) >= opts.min_members:
            term = termination_check(DensityMatrix(mat, structure), groupings)
            if term is not None:
                logger.info("certified after %d iterations with %d members", k, len(weights))
                return finish(term)
        if slow >= opts.eps_min_progress:
            alpha = c
            return stalled("no-progress", f"relative purity decrease below {opts.stall_rel_purity:g}")
    alpha = max(alpha, c)
    return stalled("max-iters", f"no certificate within {opts.max_iters} iterations")


def _warm_from(res, spec, warm):
    if spec.kind is ClassKind.BISEPARABLE_MIXTURE:
        return {**(warm or {}), res.certificate.split: res.certificate}
    return res.certificate


# -- audit ---------------------------------------------------------------------------------


@dataclass
class AuditReport:
    reconstruction_error: float
    weight_sum_error: float
    negative_weights: int
    invalid_certificates: list
    termination_rule_applicable: bool
    termination_purity: float
    termination_bound: float
    tol_reconstruct: float = TOL_RECONSTRUCT

    @property
    def reconstruction_ok(self) -> bool:
        return self.reconstruction_error <= self.tol_reconstruct and self.negative_weights == 0 \
            and self.weight_sum_error <= 1e-10

    @property
    def certificates_ok(self) -> bool:
        return not self.invalid_certificates

    @property
    def termination_ok(self) -> bool:
        return self.termination_rule_applicable and self.termination_purity <= self.termination_bound

    @property
    def passed(self) -> bool:
        return self.reconstruction_ok and self.certificates_ok and self.termination_ok

    def lines(self) -> list[str]:
        return [
            f"reconstruction {'PASS' if self.reconstruction_ok else 'FAIL'} "
            f"max_error={self.reconstruction_error:.3e} tol={self.tol_reconstruct:.1e} "
            f"weight_sum_error={self.weight_sum_error:.3e} negative_weights={self.negative_weights}",
            f"certificates {'PASS' if self.certificates_ok else 'FAIL'} "
            f"invalid={len(self.invalid_certificates)}",
            f"termination {'PASS' if self.termination_ok else 'FAIL'} "
            f"applicable={self.termination_rule_applicable} purity={self.termination_purity:.17g} "
            f"bound={self.termination_bound:.17g} slack={self.termination_bound - self.termination_purity:.3e}",
        ]


def verify_decomposition(rho, dec: Decomposition, tol_reconstruct: float = TOL_RECONSTRUCT) -> AuditReport:
    """Independent audit: reconstruction, certificates and termination bound."""
    mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    structure = dec.structure
    err = float(np.max(np.abs(dec.reconstruct() - mat))) if mat.shape == dec.residual.matrix.shape \
        else float("inf")
    wsum = abs(float(np.sum(dec.weights)) + dec.residual_weight - 1.0)
    negative = int(np.sum(dec.weights < 0)) + int(dec.residual_weight < 0)
    invalid = []
    for i, (v, cert) in enumerate(zip(dec.states, dec.certificates)):
        psi = PureState(v, structure)
        norm_ok = abs(np.linalg.norm(v) - 1) <= 1e-9
        if not (norm_ok and _certificate_matches_class(cert, dec.spec)
                and verify_certificate(psi, cert)):
            invalid.append(i)

    term = dec.termination
    P = purity(dec.residual)
    applicable = False
    bound = -np.inf
    if term.rule == MULTIQUBIT_PURITY and multiqubit_rule_applies(structure):
        applicable, bound = True, multiqubit_purity_bound(structure.n_parties)
    elif term.rule == BIPARTITE_PURITY and term.grouping is not None:
        g = normalize_split(term.grouping, structure.n_parties)
        if g in termination_groupings(dec.spec):
            applicable = True
            bound = bipartite_purity_bound(structure.block_dim(g[0]), structure.block_dim(g[1]))
    res_min = float(np.linalg.eigvalsh(dec.residual.matrix)[0])
    res_trace = float(np.trace(dec.residual.matrix).real)
    if res_min < -DEFAULT_TOL.psd or abs(res_trace - 1) > DEFAULT_TOL.trace:
        applicable = False
    return AuditReport(err, wsum, negative, invalid, applicable, P, bound, tol_reconstruct)


def _certificate_matches_class(cert: ClassCertificate, spec: ClassSpec) -> bool:
    if cert.kind is not spec.kind:
        return False
    if spec.kind is ClassKind.SLOCC_ORBIT:
        return cert.seed is not None and np.allclose(cert.seed, spec.seed.amplitudes, atol=1e-12)
    if spec.kind is ClassKind.FULLY_PRODUCT:
        return True
    return tuple(cert.blocks) in [tuple(s) for s in spec.splits]


# -- threshold scan ------------------------------------------------------------------------


@dataclass
class ThresholdResult:
    certified: float
    bracket: tuple[float, float]
    probes: list

    @property
    def width(self) -> float:
        return abs(self.bracket[1] - self.bracket[0])


def _probe(family, spec, p, opts) -> tuple[float, bool, int, int]:
    out = run(family(p), spec, opts)
    if isinstance(out, Decomposition):
        return p, True, len(out), out.iterations
    return p, False, len(out.state.history), out.state.k


def _speculative_points(lo, hi, depth):
    """Midpoints of a bisection tree of ``depth`` levels below (lo, hi)."""
    points = []
    level = [(lo, hi)]
    for _ in range(depth):
        nxt = []
        for a, b in level:
            m = (a + b) / 2
            points.append(m)
            nxt.extend([(a, m), (m, b)])
        level = nxt
    return points


def threshold_scan(family: Callable[[float], DensityMatrix], spec: ClassSpec, p_lo: float, p_hi: float,
                   tol_p: float = 1e-3, opts: Optional[DecomposerOptions] = None,
                   jobs: int = 1) -> ThresholdResult:
    """Bisection for the largest certifiable parameter.

    ``p_lo`` is the end expected to certify and ``p_hi`` the other end of the
    search; ``p_hi`` may be smaller than ``p_lo`` (e.g. temperature scans).
    Successes move the certified end, failures the other one. Failures are
    inconclusive, so only the certified side is reported.

    With ``jobs > 1`` the next levels of the bisection tree are probed
    speculatively in worker processes; the walk through the tree is the same
    as the serial one, so both return the same threshold.
    """
    opts = opts or DecomposerOptions()
    probes = []
    first = _probe(family, spec, p_lo, opts)
    probes.append(first)
    if not first[1]:
        raise ThresholdScanError(f"no certificate at the starting parameter {p_lo}")
    lo, hi = p_lo, p_hi
    depth = max(1, int(np.floor(np.log2(jobs + 1))))
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        while abs(hi - lo) > tol_p:
            levels = max(1, min(depth, int(np.ceil(np.log2(abs(hi - lo) / tol_p)))))
            points = _speculative_points(lo, hi, levels)
            if pool is None:
                results = {}
                # serial: only evaluate the path actually taken
                a, b = lo, hi
                for _ in range(levels):
                    m = (a + b) / 2
                    results[m] = _probe(family, spec, m, opts)
                    a, b = (m, b) if results[m][1] else (a, m)
            else:
                futures = {m: pool.submit(_probe, family, spec, m, opts) for m in points}
                results = {m: f.result() for m, f in futures.items()}
            for _ in range(levels):
                m = (lo + hi) / 2
                r = results[m]
                probes.append(r)
                logger.info("probe p=%.6g certified=%s members=%d", m, r[1], r[2])
                lo, hi = (m, hi) if r[1] else (lo, m)
                if abs(hi - lo) <= tol_p:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    return ThresholdResult(lo, (lo, hi), probes)
