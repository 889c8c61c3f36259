"""Example states and one-parameter families.

Amplitudes use the big-endian convention (party 1 most significant).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .linalg import (
    DensityMatrix,
    PartyStructure,
    PureState,
    StructureError,
    normalize_split,
    validate_density,
)

BE3_A = 0.3460

PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def ghz_state(n: int) -> PureState:
    v = np.zeros(2 ** n, dtype=complex)
    v[0] = v[-1] = 1 / np.sqrt(2)
    return PureState(v, PartyStructure.qubits(n))


def w_state(n: int) -> PureState:
    v = np.zeros(2 ** n, dtype=complex)
    for k in range(n):
        v[1 << k] = 1 / np.sqrt(n)
    return PureState(v, PartyStructure.qubits(n))


def phi_plus() -> PureState:
    return PureState(np.array([1, 0, 0, 1]) / np.sqrt(2), (2, 2))


def _check_p(p: float) -> float:
    p = float(p)
    if not 0 <= p <= 1:
        raise ValueError(f"mixing parameter p={p} outside [0, 1]")
    return p


def white_noise_mixture(psi_or_rho, p: float) -> DensityMatrix:
    """``p * rho + (1 - p) * 1/d``."""
    p = _check_p(p)
    if isinstance(psi_or_rho, PureState):
        mat, structure = psi_or_rho.projector(), psi_or_rho.structure
    else:
        mat, structure = psi_or_rho.matrix, psi_or_rho.structure
    d = structure.total_dim
    return validate_density(p * mat + (1 - p) / d * np.eye(d), structure)


def ghz_werner(n: int, p: float) -> DensityMatrix:
    if n < 2:
        raise ValueError("GHZ states need at least two qubits")
    return white_noise_mixture(ghz_state(n), p)


def w_werner(n: int, p: float) -> DensityMatrix:
    if n not in (3, 4):
        raise ValueError("W-Werner states are defined for 3 or 4 qubits")
    return white_noise_mixture(w_state(n), p)


def upb_vectors() -> list[np.ndarray]:
    """The five product vectors of the 3x3 tiles unextendible product basis."""
    e = np.eye(3)
    m01 = (e[0] - e[1]) / np.sqrt(2)
    m12 = (e[1] - e[2]) / np.sqrt(2)
    s = (e[0] + e[1] + e[2]) / np.sqrt(3)
    return [np.kron(e[0], m01), np.kron(m01, e[2]), np.kron(e[2], m12), np.kron(m12, e[0]), np.kron(s, s)]


def upb_bound_entangled() -> DensityMatrix:
    proj = sum(np.outer(v, v.conj()) for v in upb_vectors())
    return validate_density((np.eye(9) - proj) / 4, (3, 3))


def upb_state(p: float) -> DensityMatrix:
    return white_noise_mixture(upb_bound_entangled(), p)


def be3_state(p: float = 1.0, a: float = BE3_A) -> DensityMatrix:
    """Rank-seven three-qubit bound entangled state, optionally with white noise."""
    ghz = ghz_state(3).projector()
    diag = np.zeros(8)
    diag[[1, 2, 4]] = a
    diag[[3, 5, 6]] = 1 / a
    mat = (2 * ghz + np.diag(diag)) / (2 + 3 * (a + 1 / a))
    rho = validate_density(mat, PartyStructure.qubits(3))
    return rho if p == 1 else white_noise_mixture(rho, p)


def _embed(op: np.ndarray, site: int, n: int) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for k in range(n):
        out = np.kron(out, op if k == site else np.eye(2))
    return out


def heisenberg_hamiltonian(n: int = 3) -> np.ndarray:
    """Sum over all pairs i<j of sigma^i . sigma^j."""
    d = 2 ** n
    H = np.zeros((d, d), dtype=complex)
    for i in range(n):
        for j in range(i + 1, n):
            for s in PAULI.values():
                H += _embed(s, i, n) @ _embed(s, j, n)
    return H


def heisenberg_thermal(T: float, n: int = 3) -> DensityMatrix:
    if not T > 0:
        raise ValueError("temperature must be positive")
    w, v = np.linalg.eigh(heisenberg_hamiltonian(n))
    boltz = np.exp(-(w - w[0]) / T)
    mat = (v * (boltz / boltz.sum())) @ v.conj().T
    return validate_density(mat, PartyStructure.qubits(n))


def partial_transpose(rho, split) -> np.ndarray:
    """Transpose the parties of the first block of ``split``.

    ``split`` may be any form accepted by :func:`normalize_split` or a plain
    collection of party indices to transpose.
    """
    structure = rho.structure
    n = structure.n_parties
    if isinstance(split, str) or (len(split) == 2 and not np.isscalar(split[0])):
        parties = normalize_split(split, n)[0]
    else:
        parties = tuple(sorted(int(p) for p in split))
        if any(p < 1 or p > n for p in parties):
            raise StructureError(f"party indices {parties} out of range 1..{n}")
    dims = structure.local_dims
    t = rho.matrix.reshape(dims * 2)
    axes = list(range(2 * n))
    for p in parties:
        axes[p - 1], axes[n + p - 1] = axes[n + p - 1], axes[p - 1]
    d = structure.total_dim
    return t.transpose(axes).reshape(d, d)


def min_pt_eigenvalue(rho, split) -> float:
    return float(np.linalg.eigvalsh(partial_transpose(rho, split))[0])


# -- families -----------------------------------------------------------------------------

FAMILIES = ("ghz-werner", "w-werner", "upb", "be3", "heisenberg")


@dataclass(frozen=True)
class FamilySpec:
    """A named state family at one parameter value (``p``, or ``T``)."""

    family: str
    parameter: Optional[float] = None
    n: Optional[int] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "heisenberg":
            if self.parameter is not None and not self.parameter > 0:
                raise ValueError("temperature must be positive")
        elif self.parameter is not None:
            _check_p(self.parameter)

    @property
    def parameter_name(self) -> str:
        return "T" if self.family == "heisenberg" else "p"

    def build(self) -> DensityMatrix:
        return self(self.parameter)

    def with_parameter(self, value: float) -> "FamilySpec":
        return replace(self, parameter=float(value))

    def __call__(self, value: Optional[float] = None) -> DensityMatrix:
        f = self.family
        if value is None:
            if f == "be3":
                value = 1.0
            else:
                raise ValueError(f"family {f!r} needs a {self.parameter_name} value")
        if f == "ghz-werner":
            return ghz_werner(self.n or 3, value)
        if f == "w-werner":
            return w_werner(self.n or 3, value)
        if f == "upb":
            return upb_state(value)
        if f == "be3":
            return be3_state(value)
        return heisenberg_thermal(value, self.n or 3)

    def to_text(self) -> str:
        args = []
        if self.n is not None:
            args.append(f"n={self.n}")
        if self.parameter is not None:
            args.append(f"{self.parameter_name}={self.parameter:g}")
        return self.family + (":" + ",".join(args) if args else "")


def parse_family(text: str) -> FamilySpec:
    """Parse ``ghz-werner:n=3,p=0.4``, ``upb:p=0.8``, ``be3``, ``heisenberg:T=5.62``."""
    name, _, rest = text.strip().partition(":")
    kwargs = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"malformed family argument {item!r} in {text!r}")
        kwargs[key.strip()] = val.strip()
    unknown = set(kwargs) - {"n", "p", "T"}
    if unknown:
        raise ValueError(f"unknown family arguments {sorted(unknown)} in {text!r}")
    n = int(kwargs["n"]) if "n" in kwargs else None
    if name == "heisenberg":
        if "p" in kwargs:
            raise ValueError("the heisenberg family is parametrized by T")
        value = float(kwargs["T"]) if "T" in kwargs else None
    else:
        if "T" in kwargs:
            raise ValueError(f"family {name!r} is parametrized by p")
        value = float(kwargs["p"]) if "p" in kwargs else None
    if name in ("upb", "be3") and n is not None:
        raise ValueError(f"family {name!r} has a fixed size")
    return FamilySpec(name, value, n)
