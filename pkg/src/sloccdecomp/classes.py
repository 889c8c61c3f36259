"""Target classes of pure states and membership certificates.

A class is either the set of fully product states, the states that are
product across one bipartition, mixtures over several bipartitions, or the
SLOCC orbit ``N (A_1 x ... x A_n)|seed>`` of a seed state under invertible
local filters.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .linalg import (
    PartyStructure,
    PureState,
    StructureError,
    normalize_split,
    permute_vector,
    split_label,
    _as_structure,
)

TOL_INV = 1e-10
TOL_CERT = 1e-8


class ClassKind(str, enum.Enum):
    FULLY_PRODUCT = "fully-product"
    PRODUCT_ACROSS_SPLIT = "product-across-split"
    BISEPARABLE_MIXTURE = "biseparable-mixture"
    SLOCC_ORBIT = "slocc-orbit"


Split = tuple[tuple[int, ...], tuple[int, ...]]


@dataclass(frozen=True, eq=False)
class ClassSpec:
    """Declarative description of a class of pure states.

    Use the named constructors rather than the raw initializer.
    """

    kind: ClassKind
    structure: PartyStructure
    splits: tuple[Split, ...] = ()
    seed: Optional[PureState] = None
    name: Optional[str] = None

    def __post_init__(self):
        n = self.structure.n_parties
        object.__setattr__(self, "splits", tuple(normalize_split(s, n) for s in self.splits))
        if self.kind is ClassKind.PRODUCT_ACROSS_SPLIT and len(self.splits) != 1:
            raise StructureError("ProductAcrossSplit needs exactly one split")
        if self.kind is ClassKind.BISEPARABLE_MIXTURE and not self.splits:
            raise StructureError("BiseparableMixture needs at least one split")
        if self.kind is ClassKind.SLOCC_ORBIT:
            if self.seed is None:
                raise StructureError("SloccOrbit needs a seed state")
            if self.seed.structure != self.structure:
                raise StructureError("seed structure does not match the class structure")
            if abs(np.linalg.norm(self.seed.amplitudes) - 1) > 1e-9:
                raise StructureError("seed state is not normalized")

    @classmethod
    def fully_product(cls, dims) -> "ClassSpec":
        return cls(ClassKind.FULLY_PRODUCT, _as_structure(dims))

    @classmethod
    def product_across(cls, split, dims) -> "ClassSpec":
        return cls(ClassKind.PRODUCT_ACROSS_SPLIT, _as_structure(dims), (split,))

    @classmethod
    def biseparable(cls, dims, splits=None) -> "ClassSpec":
        """Mixtures of states product across any of ``splits``.

        The default is every single-party-versus-rest split.
        """
        structure = _as_structure(dims)
        if splits is None:
            splits = [(p,) for p in range(1, structure.n_parties + 1)]
        return cls(ClassKind.BISEPARABLE_MIXTURE, structure, tuple(splits))

    @classmethod
    def slocc_orbit(cls, seed: PureState, name: Optional[str] = None) -> "ClassSpec":
        return cls(ClassKind.SLOCC_ORBIT, seed.structure, (), seed, name)

    @property
    def is_product_kind(self) -> bool:
        return self.kind is not ClassKind.SLOCC_ORBIT

    def blocks(self, split: Optional[Split] = None) -> tuple[tuple[int, ...], ...]:
        """Party blocks that are individually optimized for product kinds."""
        if self.kind is ClassKind.FULLY_PRODUCT:
            return tuple((p,) for p in range(1, self.structure.n_parties + 1))
        if split is None:
            split = self.splits[0]
        return tuple(split)

    def to_text(self) -> str:
        from .io import format_class_spec

        return format_class_spec(self)

    def __repr__(self):
        try:
            return f"ClassSpec({self.to_text()!r})"
        except ValueError:
            return f"ClassSpec(kind={self.kind.value}, dims={self.structure})"


@dataclass(eq=False)
class ClassCertificate:
    """Evidence that a pure state belongs to a class.

    Product kinds store one normalized factor per block (``blocks`` lists the
    parties of each block); SLOCC orbits store the seed and one accumulated
    filter per party.
    """

    kind: ClassKind
    structure: PartyStructure
    blocks: tuple[tuple[int, ...], ...] = ()
    factors: list = field(default_factory=list)
    seed: Optional[np.ndarray] = None
    filters: list = field(default_factory=list)

    @property
    def split(self) -> Optional[Split]:
        if self.kind in (ClassKind.PRODUCT_ACROSS_SPLIT, ClassKind.BISEPARABLE_MIXTURE):
            return self.blocks[0], self.blocks[1]
        return None

    def reconstruct(self) -> np.ndarray:
        """Normalized state vector rebuilt from the stored evidence."""
        if self.kind is ClassKind.SLOCC_ORBIT:
            vec = apply_local_filters(self.seed, self.filters, self.structure.local_dims)
        else:
            vec = assemble_blocks(self.factors, self.blocks, self.structure.local_dims)
        norm = np.linalg.norm(vec)
        if norm == 0:
            return vec
        return vec / norm

    def describe(self) -> str:
        if self.kind is ClassKind.SLOCC_ORBIT:
            return "slocc-orbit"
        if self.kind is ClassKind.FULLY_PRODUCT:
            return "fully-product"
        return f"{self.kind.value} {split_label(self.split)}"


def assemble_blocks(factors: Sequence[np.ndarray], blocks, dims: Sequence[int]) -> np.ndarray:
    """Tensor the block factors and restore the natural party order."""
    vec = np.ones(1, dtype=complex)
    for f in factors:
        vec = np.kron(vec, np.asarray(f, dtype=complex))
    order = [p - 1 for b in blocks for p in b]
    if order == sorted(order):
        return vec
    permuted_dims = [dims[k] for k in order]
    inverse = np.argsort(order)
    return permute_vector(vec, permuted_dims, inverse)


def apply_local_filters(seed: np.ndarray, filters: Sequence[np.ndarray], dims: Sequence[int]) -> np.ndarray:
    """Unnormalized ``(A_1 x ... x A_n)|seed>``."""
    t = np.asarray(seed, dtype=complex).reshape(tuple(dims))
    for k, a in enumerate(filters):
        t = np.moveaxis(np.tensordot(a, t, axes=([1], [k])), 0, k)
    return t.reshape(-1)


def seed_state(spec: ClassSpec) -> PureState:
    """Canonical representative: the seed for orbits, ``|0...0>`` otherwise."""
    if spec.kind is ClassKind.SLOCC_ORBIT:
        return spec.seed
    v = np.zeros(spec.structure.total_dim, dtype=complex)
    v[0] = 1.0
    return PureState(v, spec.structure)


def random_unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def random_invertible_filter(rng: np.random.Generator, dim: int, tol_inv: float = TOL_INV) -> np.ndarray:
    """Complex Gaussian matrix, unit Frobenius norm, resampled until invertible."""
    while True:
        a = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
        a /= np.linalg.norm(a)
        if abs(np.linalg.det(a)) > tol_inv:
            return a


def random_class_element(spec: ClassSpec, rng_seed=0, split: Optional[Split] = None):
    """Random member of the class together with its certificate.

    Deterministic for a given integer ``rng_seed``. A ``Generator`` is also
    accepted and advanced in place.
    """
    rng = np.random.default_rng(rng_seed)
    structure = spec.structure
    dims = structure.local_dims
    if spec.kind is ClassKind.SLOCC_ORBIT:
        filters = [random_invertible_filter(rng, d) for d in dims]
        cert = ClassCertificate(spec.kind, structure, seed=spec.seed.amplitudes.copy(), filters=filters)
    else:
        if spec.kind is ClassKind.BISEPARABLE_MIXTURE and split is None:
            split = spec.splits[int(rng.integers(len(spec.splits)))]
        blocks = spec.blocks(split)
        factors = [random_unit_vector(rng, structure.block_dim(b)) for b in blocks]
        cert = ClassCertificate(spec.kind, structure, blocks=blocks, factors=factors)
    return PureState(cert.reconstruct(), structure), cert


def _phase_aligned_distance(a: np.ndarray, b: np.ndarray) -> float:
    overlap = np.vdot(a, b)
    phase = overlap / abs(overlap) if abs(overlap) > 0 else 1.0
    return float(np.max(np.abs(a * phase - b)))


def verify_certificate(psi: PureState, cert: ClassCertificate, tol: float = TOL_CERT,
                       tol_inv: float = TOL_INV) -> bool:
    """True iff the certificate rebuilds ``psi`` up to global phase.

    For SLOCC orbits every stored filter must also be invertible, judged by
    ``|det|`` of the filter scaled to unit Frobenius norm.
    """
    if psi.structure != cert.structure:
        raise StructureError("certificate and state have different party structures")
    dims = cert.structure.local_dims
    if cert.kind is ClassKind.SLOCC_ORBIT:
        if cert.seed is None or len(cert.filters) != len(dims):
            return False
        for a, d in zip(cert.filters, dims):
            a = np.asarray(a)
            if a.shape != (d, d):
                return False
            norm = np.linalg.norm(a)
            if norm == 0 or abs(np.linalg.det(a / norm)) <= tol_inv:
                return False
    else:
        if len(cert.factors) != len(cert.blocks):
            return False
        covered = sorted(p for b in cert.blocks for p in b)
        if covered != list(range(1, len(dims) + 1)):
            return False
        for f, b in zip(cert.factors, cert.blocks):
            if np.asarray(f).shape != (cert.structure.block_dim(b),):
                return False
        if cert.kind is ClassKind.FULLY_PRODUCT and any(len(b) != 1 for b in cert.blocks):
            return False
        if cert.kind is not ClassKind.FULLY_PRODUCT and len(cert.blocks) != 2:
            return False
    vec = cert.reconstruct()
    if not np.all(np.isfinite(vec)) or np.linalg.norm(vec) == 0:
        return False
    return _phase_aligned_distance(vec, psi.amplitudes) <= tol
