"""Dense hermitian linear algebra and multiparty tensor helpers.

Party indices are 1-based in every public function. The computational basis
is big-endian in the party index: party 1 is the most significant digit, so
``|001>`` has amplitude index 1 for three qubits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

TOL_HERM = 1e-9
TOL_TRACE = 1e-9
TOL_PSD = 1e-9
TOL_EIG = 1e-10
TOL_RANK = 1e-8


class StructureError(ValueError):
    """Party structure or party index is inconsistent with the data."""


class InvalidStateError(ValueError):
    """Matrix or vector violates a density-matrix / pure-state invariant."""


@dataclass(frozen=True)
class Tolerances:
    herm: float = TOL_HERM
    trace: float = TOL_TRACE
    psd: float = TOL_PSD
    eig: float = TOL_EIG
    rank: float = TOL_RANK

    def __post_init__(self):
        for name in ("herm", "trace", "psd", "eig", "rank"):
            if not getattr(self, name) > 0:
                raise ValueError(f"tolerance {name!r} must be positive")


DEFAULT_TOL = Tolerances()


@dataclass(frozen=True)
class PartyStructure:
    """Ordered local dimensions of a multiparty Hilbert space."""

    local_dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.local_dims)
        if not dims:
            raise StructureError("at least one party is required")
        if any(d < 2 for d in dims):
            raise StructureError(f"local dimensions must be >= 2, got {dims}")
        object.__setattr__(self, "local_dims", dims)

    @classmethod
    def qubits(cls, n: int) -> "PartyStructure":
        return cls((2,) * n)

    @classmethod
    def parse(cls, text: str) -> "PartyStructure":
        """Parse ``"2x2x2"`` (or whitespace separated ``"2 2 2"``)."""
        parts = text.replace("x", " ").split()
        try:
            return cls(tuple(int(p) for p in parts))
        except ValueError as exc:
            raise StructureError(f"cannot parse dimensions {text!r}") from exc

    @property
    def n_parties(self) -> int:
        return len(self.local_dims)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.local_dims))

    @property
    def all_qubits(self) -> bool:
        return all(d == 2 for d in self.local_dims)

    def concat(self, other: "PartyStructure") -> "PartyStructure":
        return PartyStructure(self.local_dims + other.local_dims)

    def subsystem(self, parties: Iterable[int]) -> "PartyStructure":
        return PartyStructure(tuple(self.local_dims[p - 1] for p in parties))

    def block_dim(self, parties: Iterable[int]) -> int:
        return int(np.prod([self.local_dims[p - 1] for p in parties]))

    def __str__(self):
        return "x".join(str(d) for d in self.local_dims)


def _as_structure(dims) -> PartyStructure:
    if isinstance(dims, PartyStructure):
        return dims
    if isinstance(dims, str):
        return PartyStructure.parse(dims)
    return PartyStructure(tuple(dims))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, PSD matrix tagged with its party structure.

    Instances are normally produced by :func:`validate_density`; the
    constructor itself only checks the shape.
    """

    matrix: np.ndarray
    structure: PartyStructure
    min_eigenvalue: float = field(default=float("nan"))

    def __post_init__(self):
        object.__setattr__(self, "structure", _as_structure(self.structure))
        m = np.asarray(self.matrix, dtype=complex)
        d = self.structure.total_dim
        if m.shape != (d, d):
            raise StructureError(f"matrix shape {m.shape} does not match dims {self.structure}")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.structure.total_dim

    @property
    def dims(self) -> tuple[int, ...]:
        return self.structure.local_dims

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


@dataclass(frozen=True, eq=False)
class PureState:
    """Unit-norm state vector tagged with its party structure."""

    amplitudes: np.ndarray
    structure: PartyStructure

    def __post_init__(self):
        object.__setattr__(self, "structure", _as_structure(self.structure))
        v = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if v.shape[0] != self.structure.total_dim:
            raise StructureError(f"vector length {v.shape[0]} does not match dims {self.structure}")
        object.__setattr__(self, "amplitudes", v)

    @classmethod
    def from_vector(cls, vec, dims, tol_norm: float = 1e-9) -> "PureState":
        """Build a state, normalizing ``vec``; a zero vector is rejected."""
        v = np.asarray(vec, dtype=complex).reshape(-1)
        norm = np.linalg.norm(v)
        if norm < tol_norm:
            raise InvalidStateError("cannot normalize a zero vector")
        return cls(v / norm, _as_structure(dims))

    @property
    def dim(self) -> int:
        return self.structure.total_dim

    def projector(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())

    def density(self) -> DensityMatrix:
        return DensityMatrix(self.projector(), self.structure, 0.0)

    def __array__(self, dtype=None, copy=None):
        return self.amplitudes if dtype is None else self.amplitudes.astype(dtype)


def basis_state(index: int, dims) -> PureState:
    structure = _as_structure(dims)
    v = np.zeros(structure.total_dim, dtype=complex)
    v[index] = 1.0
    return PureState(v, structure)


# -- tensor structure ---------------------------------------------------------


def tensor_product(items: Sequence):
    """Kronecker product in party order.

    ``items`` are all vectors (``PureState`` or 1-D arrays) or all matrices
    (``DensityMatrix`` or 2-D arrays). Typed inputs give a typed result with
    the concatenated party structure.
    """
    items = list(items)
    if not items:
        raise ValueError("tensor_product needs at least one factor")
    arrays = [np.asarray(x.amplitudes if isinstance(x, PureState)
                         else x.matrix if isinstance(x, DensityMatrix) else x)
              for x in items]
    ndims = {a.ndim for a in arrays}
    if ndims not in ({1}, {2}):
        raise ValueError("tensor_product inputs must be all vectors or all matrices")
    out = reduce(np.kron, arrays)
    if all(isinstance(x, PureState) for x in items):
        dims = reduce(PartyStructure.concat, [x.structure for x in items])
        return PureState(out, dims)
    if all(isinstance(x, DensityMatrix) for x in items):
        dims = reduce(PartyStructure.concat, [x.structure for x in items])
        return DensityMatrix(out, dims)
    return out


def _check_parties(parties: Iterable[int], n: int) -> tuple[int, ...]:
    out = tuple(sorted({int(p) for p in parties}))
    if any(p < 1 or p > n for p in out):
        raise StructureError(f"party indices {out} out of range 1..{n}")
    return out


def normalize_split(split, n: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Canonical bipartition ``(A, B)`` with 1-based sorted parties.

    Accepts a string such as ``"13|24"``, a pair ``(A, B)`` or just the
    parties of ``A``. The block containing party 1 comes first.
    """
    if isinstance(split, str):
        left, sep, right = split.partition("|")
        if not sep:
            raise StructureError(f"split {split!r} needs a '|' separator")
        a = [int(ch) for ch in left.strip()]
        b = [int(ch) for ch in right.strip()]
    else:
        split = list(split)
        if len(split) == 2 and all(not np.isscalar(s) for s in split):
            a, b = list(split[0]), list(split[1])
        else:
            a = [int(s) for s in split]
            b = [p for p in range(1, n + 1) if p not in a]
    a = _check_parties(a, n)
    b = _check_parties(b, n)
    if not a or not b:
        raise StructureError("split must be nontrivial")
    if set(a) & set(b) or len(a) + len(b) != n:
        raise StructureError(f"split {a}|{b} is not a bipartition of {n} parties")
    return (a, b) if 1 in a else (b, a)


def split_label(split) -> str:
    a, b = split
    return "".join(map(str, a)) + "|" + "".join(map(str, b))


def permute_vector(vec: np.ndarray, dims: Sequence[int], order: Sequence[int]) -> np.ndarray:
    """Reorder the tensor factors of ``vec``; ``order`` holds 0-based parties."""
    t = np.asarray(vec).reshape(tuple(dims))
    return np.transpose(t, order).reshape(-1)


def permute_operator(mat: np.ndarray, dims: Sequence[int], order: Sequence[int]) -> np.ndarray:
    n = len(dims)
    t = np.asarray(mat).reshape(tuple(dims) * 2)
    axes = list(order) + [n + o for o in order]
    d = int(np.prod(dims))
    return np.transpose(t, axes).reshape(d, d)


def _ptrace_array(mat: np.ndarray, dims: Sequence[int], keep0: Sequence[int]) -> np.ndarray:
    n = len(dims)
    t = np.asarray(mat).reshape(tuple(dims) * 2)
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows = list(letters[:n])
    cols = list(letters[n:2 * n])
    for k in range(n):
        if k not in keep0:
            cols[k] = rows[k]
    out = "".join(rows[k] for k in keep0) + "".join(cols[k] for k in keep0)
    dk = int(np.prod([dims[k] for k in keep0]))
    return np.einsum("".join(rows) + "".join(cols) + "->" + out, t).reshape(dk, dk)


def partial_trace(rho, keep: Iterable[int], dims=None):
    """Reduced state on the parties in ``keep`` (1-based).

    ``rho`` may be a ``DensityMatrix`` or a raw matrix together with ``dims``.
    """
    if isinstance(rho, DensityMatrix):
        structure = rho.structure
        mat = rho.matrix
    else:
        if dims is None:
            raise StructureError("dims are required for a raw matrix")
        structure = _as_structure(dims)
        mat = np.asarray(rho)
    keep = list(keep)
    if not keep:
        raise StructureError("keep set must be nonempty")
    kept = _check_parties(keep, structure.n_parties)
    red = _ptrace_array(mat, structure.local_dims, [p - 1 for p in kept])
    if isinstance(rho, DensityMatrix):
        return DensityMatrix(red, structure.subsystem(kept))
    return red


# -- spectral helpers -----------------------------------------------------------


def check_hermitian(mat: np.ndarray, tol: float = TOL_HERM) -> np.ndarray:
    mat = np.asarray(mat)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InvalidStateError(f"expected a square matrix, got shape {mat.shape}")
    dev = np.max(np.abs(mat - mat.conj().T)) if mat.size else 0.0
    if dev > tol:
        raise InvalidStateError(f"matrix is not hermitian (deviation {dev:.3e})")
    return mat


def fix_phase(vec: np.ndarray) -> np.ndarray:
    """Rotate the global phase so the largest-magnitude entry is real positive."""
    k = int(np.argmax(np.abs(vec)))
    a = vec[k]
    if a == 0:
        return vec
    return vec * (abs(a) / a)


def max_eigenpair(H, tol: float = TOL_HERM) -> tuple[float, np.ndarray]:
    """Largest eigenvalue of a hermitian matrix and its unit eigenvector."""
    H = check_hermitian(np.asarray(H, dtype=complex), tol)
    w, v = np.linalg.eigh(H)
    return float(w[-1]), fix_phase(v[:, -1])


def matrix_sqrt(rho, tol_psd: float = TOL_PSD) -> np.ndarray:
    """Hermitian PSD square root; eigenvalues in ``[-tol_psd, 0)`` are clipped."""
    return matrix_power(rho, 0.5, tol_psd)


def matrix_power(rho, power: float, tol_psd: float = TOL_PSD) -> np.ndarray:
    mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    w, v = np.linalg.eigh(mat)
    if w[0] < -tol_psd:
        raise InvalidStateError(f"matrix has eigenvalue {w[0]:.3e} below -tol_psd")
    w = np.clip(w, 0.0, None) ** power
    return (v * w) @ v.conj().T


def purity(rho) -> float:
    mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    return float(np.sum(mat.real ** 2 + mat.imag ** 2))


def schmidt_coefficients(psi: PureState, split) -> np.ndarray:
    structure = psi.structure
    a, b = normalize_split(split, structure.n_parties)
    order = [p - 1 for p in a + b]
    vec = permute_vector(psi.amplitudes, structure.local_dims, order)
    mat = vec.reshape(structure.block_dim(a), structure.block_dim(b))
    return np.linalg.svd(mat, compute_uv=False)


def schmidt_rank(psi: PureState, split, tol_rank: float = TOL_RANK) -> int:
    """Number of Schmidt coefficients above ``tol_rank`` across ``split``."""
    return int(np.sum(schmidt_coefficients(psi, split) > tol_rank))


def validate_density(M, dims, tol: Tolerances = DEFAULT_TOL) -> DensityMatrix:
    """Check and clean a candidate density matrix.

    The matrix is hermitized, its trace renormalized when within
    ``tol.trace`` of one, and its minimal eigenvalue recorded.

    Raises
    ------
    InvalidStateError
        On non-hermiticity above ``tol.herm``, trace deviation above
        ``tol.trace`` or an eigenvalue below ``-tol.psd``.
    """
    structure = _as_structure(dims)
    M = np.asarray(M.matrix if isinstance(M, DensityMatrix) else M, dtype=complex)
    d = structure.total_dim
    if M.shape != (d, d):
        raise StructureError(f"matrix shape {M.shape} does not match dims {structure}")
    check_hermitian(M, tol.herm)
    M = (M + M.conj().T) / 2
    tr = float(np.trace(M).real)
    if abs(tr - 1.0) > tol.trace:
        raise InvalidStateError(f"trace {tr!r} deviates from 1 by more than {tol.trace:g}")
    if tr != 1.0:
        M = M / tr
    lam_min = float(np.linalg.eigvalsh(M)[0])
    if lam_min < -tol.psd:
        raise InvalidStateError(f"minimal eigenvalue {lam_min:.3e} below -{tol.psd:g}")
    return DensityMatrix(M, structure, lam_min)


def hs_distance(a, b) -> float:
    """Hilbert-Schmidt distance sqrt(tr[(A-B)^2]) of hermitian matrices."""
    a = a.matrix if isinstance(a, DensityMatrix) else np.asarray(a)
    b = b.matrix if isinstance(b, DensityMatrix) else np.asarray(b)
    return float(np.sqrt(purity(a - b)))
