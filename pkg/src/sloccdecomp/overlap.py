"""Maximize <phi|M|phi> over phi in a class of pure states.

Product classes use alternating maximization: each block vector is replaced
by the top eigenvector of M contracted with the other blocks' current
vectors. SLOCC orbits use a local-filter iteration: for one party at a time
the filter A maximizing the quadratic form <a|D - F C~|a> (``a`` = A
flattened row-major) is found from a hermitian eigenproblem and applied as
``A~ + lambda_max * 1`` to keep it invertible.

All restarts of one call are advanced together as a batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .classes import (
    TOL_INV,
    ClassCertificate,
    ClassKind,
    ClassSpec,
    apply_local_filters,
    assemble_blocks,
    random_invertible_filter,
    random_unit_vector,
)
from .linalg import (
    TOL_HERM,
    PureState,
    StructureError,
    check_hermitian,
    fix_phase,
    permute_operator,
)

logger = logging.getLogger(__name__)

TOL_FILTER = 1e-8
TOL_GAIN = 1e-12
TOL_NORM_FLOOR = 1e-12
MONOTONE_SLACK = 1e-12


class FilterAnnihilationError(RuntimeError):
    """A local filter mapped the state (numerically) to zero."""


class OverlapOptimizationError(RuntimeError):
    """No restart produced a usable class state."""


@dataclass
class OverlapOptions:
    restarts: int = 50
    max_sweeps: int = 200
    tol_filter: float = TOL_FILTER
    tol_gain: float = TOL_GAIN
    rng_seed: object = 0


@dataclass
class FilterStepWorkspace:
    """Matrices of one local-filter step for ``party``.

    ``C`` is the reduced state of the iterate in the index convention
    ``C[h, j] = sum_xi conj(c[h, xi]) c[j, xi]`` so that
    ``<phi|A^dag A|phi> = sum_{l,h,j} conj(a[l,h]) a[l,j] C[h,j]``.
    """

    party: int
    C: np.ndarray
    C_tilde: np.ndarray
    D: np.ndarray
    F_prev: float
    a_max: np.ndarray
    lambda_max: float

    @property
    def K(self) -> np.ndarray:
        return self.D - self.F_prev * self.C_tilde


@dataclass
class OverlapResult:
    state: PureState
    overlap: float
    certificate: ClassCertificate
    sweeps_used: int
    converged: bool


# -- tensor plumbing ----------------------------------------------------------------


def _front_tensors(M: np.ndarray, dims: Sequence[int], blocks) -> list[np.ndarray]:
    """For each block, ``M`` reshaped to (D_b, rest, D_b, rest).

    ``rest`` runs over the other blocks in block order, matching the batched
    kron of the other block vectors.
    """
    order = [p - 1 for b in blocks for p in b]
    Mp = permute_operator(M, dims, order)
    bdims = [int(np.prod([dims[p - 1] for p in b])) for b in blocks]
    k = len(blocks)
    T = Mp.reshape(tuple(bdims) * 2)
    out = []
    for b in range(k):
        others = [j for j in range(k) if j != b]
        axes = [b] + others + [k + b] + [k + j for j in others]
        rest = int(np.prod([bdims[j] for j in others])) if others else 1
        out.append(np.ascontiguousarray(T.transpose(axes).reshape(bdims[b], rest, bdims[b], rest)))
    return out


def _party_front(psi: np.ndarray, dims: Sequence[int], k: int) -> np.ndarray:
    """Batch of states (B, d) -> coefficient matrices (B, d_k, rest)."""
    B = psi.shape[0]
    t = psi.reshape((B,) + tuple(dims))
    return np.moveaxis(t, 1 + k, 1).reshape(B, dims[k], -1)


def _party_back(c: np.ndarray, dims: Sequence[int], k: int) -> np.ndarray:
    B = c.shape[0]
    others = [dims[j] for j in range(len(dims)) if j != k]
    t = c.reshape((B, dims[k]) + tuple(others))
    return np.moveaxis(t, 1, 1 + k).reshape(B, -1)


def _batch_overlap(psi: np.ndarray, M: np.ndarray) -> np.ndarray:
    return np.einsum("bi,ij,bj->b", psi.conj(), M, psi).real


def _batch_kron(vectors: list[np.ndarray]) -> np.ndarray:
    B = vectors[0].shape[0] if vectors else 1
    out = np.ones((B, 1), dtype=complex)
    for v in vectors:
        out = (out[:, :, None] * v[:, None, :]).reshape(B, -1)
    return out


def _batch_fix_phase(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=1)
    top = vecs[np.arange(vecs.shape[0]), idx]
    mag = np.abs(top)
    phase = np.where(mag > 0, mag / np.where(mag > 0, top, 1), 1)
    return vecs * phase[:, None]


# -- local filter step ----------------------------------------------------------------


def _sandwich(R: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """out[z, h, l, j, m] = sum_xy conj(left[z, l, x]) R[h, x, j, y] right[z, m, y]."""
    dh, rx, dj, ry = R.shape
    B, dm, _ = right.shape
    tmp = (R.reshape(dh * rx * dj, ry) @ right.reshape(B * dm, ry).T).reshape(dh, rx, dj, B, dm)
    return np.einsum("zlx,hxjzm->zhljm", left.conj(), tmp)


def _filter_matrices(c: np.ndarray, R: np.ndarray, F: np.ndarray):
    """Batched D, C and C~ for coefficient matrices ``c`` (B, d, rest)."""
    B, d, _ = c.shape
    D = _sandwich(R, c, c).reshape(B, d * d, d * d)
    C = np.einsum("bhx,bjx->bhj", c.conj(), c)
    Ct = np.einsum("lm,bhj->blhmj", np.eye(d), C).reshape(B, d * d, d * d)
    return C, Ct, D


def _top_filters(K: np.ndarray, d: int):
    """Top eigenpair of each K and the reshaped filter A~.

    The phase of the eigenvector is chosen so that tr(A~) is real and
    nonnegative; then A~ + lambda*1 raises the quadratic form by at least
    lambda (largest-component phase fixing is the fallback when the trace
    vanishes).
    """
    K = (K + np.conj(np.swapaxes(K, 1, 2))) / 2
    w, v = np.linalg.eigh(K)
    lam = w[:, -1]
    a = _batch_fix_phase(v[:, :, -1])
    At = a.reshape(-1, d, d)
    tr = np.trace(At, axis1=1, axis2=2)
    mag = np.abs(tr)
    use = mag > 1e-12
    phase = np.where(use, np.conj(tr) / np.where(use, mag, 1), 1)
    a = a * phase[:, None]
    return lam, a, a.reshape(-1, d, d)


def build_filter_matrices(phi: PureState, M, party: int, tol: float = TOL_HERM) -> FilterStepWorkspace:
    """D, C~ and F for a local-filter step on ``party`` (1-based)."""
    M = check_hermitian(np.asarray(M, dtype=complex), tol)
    dims = phi.structure.local_dims
    if not 1 <= party <= len(dims):
        raise StructureError(f"party {party} out of range 1..{len(dims)}")
    k = party - 1
    R = _front_tensors(M, dims, [(p,) for p in range(1, len(dims) + 1)])[k]
    psi = phi.amplitudes[None, :]
    F = _batch_overlap(psi, M)
    c = _party_front(psi, dims, k)
    C, Ct, D = _filter_matrices(c, R, F)
    lam, a, _ = _top_filters(D - F[:, None, None] * Ct, dims[k])
    return FilterStepWorkspace(party, C[0], Ct[0], D[0], float(F[0]), a[0], float(lam[0]))


def filter_step(phi: PureState, M, party: int) -> tuple[np.ndarray, float]:
    """Regularized filter ``A~ + lambda_max * 1`` for ``party``, and lambda_max.

    Returns the identity when lambda_max is zero up to roundoff (no local gain
    available).
    """
    ws = build_filter_matrices(phi, M, party)
    d = phi.structure.local_dims[party - 1]
    if ws.lambda_max <= TOL_GAIN:
        return np.eye(d, dtype=complex), ws.lambda_max
    return ws.a_max.reshape(d, d) + ws.lambda_max * np.eye(d), ws.lambda_max


def apply_filter(phi: PureState, A, party: int) -> PureState:
    """Normalized ``(1 x A on party)|phi>``."""
    dims = phi.structure.local_dims
    if not 1 <= party <= len(dims):
        raise StructureError(f"party {party} out of range 1..{len(dims)}")
    k = party - 1
    A = np.asarray(A, dtype=complex)
    if A.shape != (dims[k], dims[k]):
        raise StructureError(f"filter shape {A.shape} does not match local dimension {dims[k]}")
    c = _party_front(phi.amplitudes[None, :], dims, k)
    out = _party_back(A[None] @ c, dims, k)[0]
    norm = np.linalg.norm(out)
    if norm < TOL_NORM_FLOOR:
        raise FilterAnnihilationError("filter annihilated the state")
    return PureState(out / norm, phi.structure)


# -- SLOCC orbit ---------------------------------------------------------------------


def _unit_frobenius(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=(1, 2))[:, None, None]


def _run_slocc_batch(M, dims, seed, filters, opts: OverlapOptions):
    """Advance a batch of filter sets; returns (filters, sweeps, converged)."""
    n = len(dims)
    B = filters[0].shape[0]
    R = _front_tensors(M, dims, [(p,) for p in range(1, n + 1)])
    psi = np.stack([apply_local_filters(seed, [f[b] for f in filters], dims) for b in range(B)])
    psi /= np.linalg.norm(psi, axis=1)[:, None]
    F = _batch_overlap(psi, M)
    active = np.ones(B, dtype=bool)
    sweeps = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    for _ in range(opts.max_sweeps):
        lam_sweep = np.zeros(B)
        for k in range(n):
            d = dims[k]
            c = _party_front(psi, dims, k)
            _, Ct, D = _filter_matrices(c, R[k], F)
            lam, _, At = _top_filters(D - F[:, None, None] * Ct, d)
            step = active & (lam > 0)
            if not step.any():
                continue
            A = At + lam[:, None, None] * np.eye(d)
            acc = _unit_frobenius(A @ filters[k])
            ok = step & (np.abs(np.linalg.det(acc)) > TOL_INV)
            new_c = A @ c
            norms = np.linalg.norm(new_c.reshape(B, -1), axis=1)
            ok &= norms > TOL_NORM_FLOOR
            if not ok.any():
                continue
            new_psi = _party_back(new_c / np.where(ok, norms, 1)[:, None, None], dims, k)
            new_F = _batch_overlap(new_psi, M)
            # the quadratic-form gain is >= lambda > 0 in exact arithmetic; guard against rounding
            ok &= new_F >= F - MONOTONE_SLACK
            psi = np.where(ok[:, None], new_psi, psi)
            F = np.where(ok, new_F, F)
            filters[k] = np.where(ok[:, None, None], acc, filters[k])
            lam_sweep = np.maximum(lam_sweep, np.where(active, lam, 0.0))
        sweeps[active] += 1
        done = active & (lam_sweep <= opts.tol_filter)
        converged |= done
        active &= ~done
        if not active.any():
            break
    return filters, sweeps, converged


def maximize_overlap_slocc(spec: ClassSpec, M, opts: Optional[OverlapOptions] = None,
                           warm_start: Optional[ClassCertificate] = None) -> OverlapResult:
    """Best overlap of M with the SLOCC orbit of ``spec.seed``.

    Starts from random invertible filters (plus ``warm_start`` as restart 0
    when given) and sweeps the parties round-robin until lambda_max <=
    ``opts.tol_filter`` over a whole sweep or ``opts.max_sweeps`` is hit.
    """
    if spec.kind is not ClassKind.SLOCC_ORBIT:
        raise ValueError("maximize_overlap_slocc needs a SloccOrbit class")
    opts = opts or OverlapOptions()
    M = check_hermitian(np.asarray(M, dtype=complex))
    dims = spec.structure.local_dims
    seed = spec.seed.amplitudes
    rng = np.random.default_rng(opts.rng_seed)
    starts = []
    if warm_start is not None:
        starts.append([np.asarray(f, dtype=complex) for f in warm_start.filters])
    while len(starts) < max(opts.restarts, 1):
        starts.append([random_invertible_filter(rng, d) for d in dims])
    filters = [np.stack([_unit_frobenius(s[k][None])[0] for s in starts]) for k in range(len(dims))]
    filters, sweeps, converged = _run_slocc_batch(M, dims, seed, filters, opts)

    best = None
    for b in range(len(starts)):
        cert = ClassCertificate(ClassKind.SLOCC_ORBIT, spec.structure, seed=seed.copy(),
                                filters=[f[b].copy() for f in filters])
        vec = cert.reconstruct()
        if not np.all(np.isfinite(vec)) or np.linalg.norm(vec) < TOL_NORM_FLOOR:
            continue
        val = float(np.vdot(vec, M @ vec).real)
        if best is None or val > best[0]:
            best = (val, b, cert, vec)
    if best is None:
        raise OverlapOptimizationError("all restarts were annihilated")
    val, b, cert, vec = best
    return OverlapResult(PureState(vec, spec.structure), val, cert, int(sweeps[b]), bool(converged[b]))


# -- product classes ----------------------------------------------------------------------


def _run_product_batch(M, dims, blocks, vectors, opts: OverlapOptions):
    T = _front_tensors(M, dims, blocks)
    k = len(blocks)
    B = vectors[0].shape[0]
    F = np.full(B, -np.inf)
    active = np.ones(B, dtype=bool)
    sweeps = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    for _ in range(opts.max_sweeps):
        F_start = F.copy()
        for b in range(k):
            w = _batch_kron([vectors[j] for j in range(k) if j != b])
            X = _sandwich(T[b], w[:, None, :], w[:, None, :])[:, :, 0, :, 0]
            X = (X + np.conj(np.swapaxes(X, 1, 2))) / 2
            evals, evecs = np.linalg.eigh(X)
            new = _batch_fix_phase(evecs[:, :, -1])
            vectors[b] = np.where(active[:, None], new, vectors[b])
            F = np.where(active, evals[:, -1], F)
        sweeps[active] += 1
        done = active & (F - F_start <= opts.tol_gain)
        converged |= done
        active &= ~done
        if not active.any():
            break
    return vectors, F, sweeps, converged


def maximize_overlap_product(spec: ClassSpec, M, opts: Optional[OverlapOptions] = None,
                             warm_start: Optional[ClassCertificate] = None,
                             split=None) -> OverlapResult:
    """Alternating eigenvector maximization over product states.

    For ``BiseparableMixture`` pass the ``split`` to optimize across; use
    :func:`maximize_overlap` to search all splits.
    """
    if spec.kind is ClassKind.SLOCC_ORBIT:
        raise ValueError("maximize_overlap_product needs a product class")
    if spec.kind is ClassKind.BISEPARABLE_MIXTURE and split is None:
        raise ValueError("a split is required for BiseparableMixture")
    opts = opts or OverlapOptions()
    M = check_hermitian(np.asarray(M, dtype=complex))
    structure = spec.structure
    dims = structure.local_dims
    blocks = spec.blocks(split)
    bdims = [structure.block_dim(b) for b in blocks]
    rng = np.random.default_rng(opts.rng_seed)
    starts = []
    if warm_start is not None and tuple(warm_start.blocks) == tuple(blocks):
        starts.append([np.asarray(f, dtype=complex) for f in warm_start.factors])
    while len(starts) < max(opts.restarts, 1):
        starts.append([random_unit_vector(rng, d) for d in bdims])
    vectors = [np.stack([s[j] for s in starts]) for j in range(len(blocks))]
    vectors, F, sweeps, converged = _run_product_batch(M, dims, blocks, vectors, opts)
    b = int(np.argmax(F))
    factors = [fix_phase(v[b].copy()) for v in vectors]
    cert = ClassCertificate(spec.kind, structure, blocks=tuple(blocks), factors=factors)
    vec = assemble_blocks(factors, blocks, dims)
    vec = vec / np.linalg.norm(vec)
    val = float(np.vdot(vec, M @ vec).real)
    return OverlapResult(PureState(vec, structure), val, cert, int(sweeps[b]), bool(converged[b]))


def maximize_overlap(spec: ClassSpec, M, opts: Optional[OverlapOptions] = None,
                     warm_start=None) -> OverlapResult:
    """Dispatch on the class kind.

    For ``BiseparableMixture`` every split is optimized and the best result
    kept (earliest split on ties). ``warm_start`` is a certificate, or for
    mixtures a mapping from split to certificate.
    """
    if spec.kind is ClassKind.SLOCC_ORBIT:
        return maximize_overlap_slocc(spec, M, opts, warm_start)
    if spec.kind is not ClassKind.BISEPARABLE_MIXTURE:
        return maximize_overlap_product(spec, M, opts, warm_start)
    warm = warm_start or {}
    best = None
    for split in spec.splits:
        res = maximize_overlap_product(spec, M, opts, warm.get(split), split=split)
        if best is None or res.overlap > best.overlap:
            best = res
    return best
