"""Text encodings and file formats.

Class specs are encoded as ``<kind>@<dims>``, e.g. ``fully-separable@2x2x2``,
``product:12|3@2x2x2``, ``bisep:1|23,2|13,3|12@2x2x2``, ``w-class@2x2x2``,
``ghz-class@2x2x2x2`` or ``slocc:seed.vec@2x2x2``. The ``@dims`` part may be
left out when the dimensions come from the state.

Matrix files are line oriented::

    dims: 2 2 2
    0 0 0.5 0
    0 1 0 0
    ...

with all d^2 entries in row-major order and 17 significant digits. Pure
state files use the same layout with one ``index re im`` line per
amplitude. Decomposition files are JSON documents.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .classes import ClassCertificate, ClassKind, ClassSpec
from .decomposer import Decomposition, TerminationCertificate, Trajectory
from .linalg import (
    DEFAULT_TOL,
    DensityMatrix,
    PartyStructure,
    PureState,
    StructureError,
    Tolerances,
    _as_structure,
    split_label,
    validate_density,
)

DECOMPOSITION_FORMAT = "sloccdecomp-decomposition/1"
TOL_CONJ = 1e-12
DIGEST_ROUND = 12

NAMED_SEEDS = ("w-class", "ghz-class")


class FileFormatError(ValueError):
    """A file does not follow the expected layout."""


# -- class specs ------------------------------------------------------------------------


def format_class_spec(spec: ClassSpec, with_dims: bool = True) -> str:
    if spec.kind is ClassKind.FULLY_PRODUCT:
        body = "fully-separable"
    elif spec.kind is ClassKind.PRODUCT_ACROSS_SPLIT:
        body = "product:" + split_label(spec.splits[0])
    elif spec.kind is ClassKind.BISEPARABLE_MIXTURE:
        body = "bisep:" + ",".join(split_label(s) for s in spec.splits)
    else:
        body = spec.name or "slocc:inline"
    return f"{body}@{spec.structure}" if with_dims else body


def _named_seed(name: str, structure: PartyStructure) -> PureState:
    from .states import ghz_state, w_state

    if not structure.all_qubits or structure.n_parties < 3:
        raise StructureError(f"{name} needs three or more qubits, got dims {structure}")
    n = structure.n_parties
    return w_state(n) if name == "w-class" else ghz_state(n)


def parse_class_spec(text: str, dims=None, seed: Optional[PureState] = None) -> ClassSpec:
    """Parse the canonical class encoding.

    ``dims`` is used when the text has no ``@dims`` part. ``seed`` overrides
    the state file of a ``slocc:`` class (used when the seed travels inside
    a decomposition file).
    """
    body, at, dim_text = text.strip().partition("@")
    if at:
        structure = PartyStructure.parse(dim_text)
        if dims is not None and _as_structure(dims) != structure:
            raise StructureError(f"class dims {structure} differ from state dims {_as_structure(dims)}")
    elif dims is not None:
        structure = _as_structure(dims)
    else:
        raise ValueError(f"class spec {text!r} needs '@dims' when no state fixes them")
    kind, _, arg = body.partition(":")
    if kind in ("fully-separable", "fully-product") and not arg:
        return ClassSpec.fully_product(structure)
    if kind == "product" and arg:
        return ClassSpec.product_across(arg, structure)
    if kind in ("bisep", "biseparable"):
        splits = [s for s in arg.split(",") if s.strip()] if arg else None
        return ClassSpec.biseparable(structure, splits)
    if kind in NAMED_SEEDS and not arg:
        return ClassSpec.slocc_orbit(_named_seed(kind, structure), name=kind)
    if kind == "slocc" and arg:
        if seed is None:
            seed = read_vector(arg)
        if seed.structure != structure:
            raise StructureError(f"seed dims {seed.structure} differ from class dims {structure}")
        return ClassSpec.slocc_orbit(seed, name=body)
    raise ValueError(f"unrecognized class spec {text!r}")


# -- atomic writes -----------------------------------------------------------------------


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temporary file next to ``path`` and rename it."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- matrix and vector files ----------------------------------------------------------------


def _num(x: float) -> str:
    return format(float(x), ".17g")


def format_matrix(rho) -> str:
    mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    structure = rho.structure if isinstance(rho, DensityMatrix) else None
    if structure is None:
        raise ValueError("format_matrix needs a DensityMatrix")
    lines = ["dims: " + " ".join(map(str, structure.local_dims))]
    d = mat.shape[0]
    for r in range(d):
        for c in range(d):
            z = mat[r, c]
            lines.append(f"{r} {c} {_num(z.real)} {_num(z.imag)}")
    return "\n".join(lines) + "\n"


def _parse_dims_line(line: str, path) -> PartyStructure:
    key, _, rest = line.partition(":")
    if key.strip() != "dims":
        raise FileFormatError(f"{path}: first line must be 'dims: d1 d2 ...'")
    try:
        return PartyStructure(tuple(int(t) for t in rest.split()))
    except ValueError as exc:
        raise FileFormatError(f"{path}: bad dims line {line!r}") from exc


def parse_matrix(text: str, source="<string>", tol: Tolerances = DEFAULT_TOL) -> DensityMatrix:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise FileFormatError(f"{source}: empty matrix file")
    structure = _parse_dims_line(lines[0], source)
    d = structure.total_dim
    if len(lines) - 1 != d * d:
        raise FileFormatError(f"{source}: expected {d * d} entries, found {len(lines) - 1}")
    mat = np.zeros((d, d), dtype=complex)
    seen = np.zeros((d, d), dtype=bool)
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 4:
            raise FileFormatError(f"{source}: malformed entry line {ln!r}")
        try:
            r, c = int(parts[0]), int(parts[1])
            z = complex(float(parts[2]), float(parts[3]))
        except ValueError as exc:
            raise FileFormatError(f"{source}: malformed entry line {ln!r}") from exc
        if not (0 <= r < d and 0 <= c < d) or seen[r, c]:
            raise FileFormatError(f"{source}: bad or repeated index ({r}, {c})")
        mat[r, c] = z
        seen[r, c] = True
    asym = float(np.max(np.abs(mat - mat.conj().T)))
    if asym > TOL_CONJ:
        raise FileFormatError(f"{source}: conjugate entries disagree by {asym:.3e}")
    return validate_density(mat, structure, tol)


def write_matrix(path, rho) -> None:
    atomic_write_text(path, format_matrix(rho))


def read_matrix(path, tol: Tolerances = DEFAULT_TOL) -> DensityMatrix:
    return parse_matrix(Path(path).read_text(encoding="utf-8"), path, tol)


def write_vector(path, psi: PureState) -> None:
    lines = ["dims: " + " ".join(map(str, psi.structure.local_dims))]
    lines += [f"{i} {_num(z.real)} {_num(z.imag)}" for i, z in enumerate(psi.amplitudes)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_vector(path) -> PureState:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise FileFormatError(f"{path}: empty vector file")
    structure = _parse_dims_line(lines[0], path)
    d = structure.total_dim
    if len(lines) - 1 != d:
        raise FileFormatError(f"{path}: expected {d} amplitudes, found {len(lines) - 1}")
    vec = np.zeros(d, dtype=complex)
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 3:
            raise FileFormatError(f"{path}: malformed amplitude line {ln!r}")
        vec[int(parts[0])] = complex(float(parts[1]), float(parts[2]))
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise FileFormatError(f"{path}: zero vector")
    return PureState(vec / norm, structure)


def state_digest(rho) -> str:
    """SHA-256 of the matrix entries rounded to 1e-12."""
    mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    rounded = np.round(np.stack([mat.real, mat.imag]), DIGEST_ROUND) + 0.0
    return hashlib.sha256(np.ascontiguousarray(rounded, dtype="<f8").tobytes()).hexdigest()


# -- decomposition files ---------------------------------------------------------------------


def _cvec(v) -> list:
    return [[float(z.real), float(z.imag)] for z in np.asarray(v, dtype=complex).ravel()]


def _from_cvec(items, shape=None) -> np.ndarray:
    arr = np.asarray(items, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise FileFormatError("complex arrays must be lists of [re, im] pairs")
    # assign parts separately so signed zeros survive a round trip
    out = np.empty(len(arr), dtype=complex)
    out.real, out.imag = arr[:, 0], arr[:, 1]
    return out.reshape(shape) if shape is not None else out


def _cert_to_dict(cert: ClassCertificate) -> dict:
    if cert.kind is ClassKind.SLOCC_ORBIT:
        return {"kind": cert.kind.value,
                "filters": [_cvec(f) for f in cert.filters]}
    return {"kind": cert.kind.value,
            "blocks": [list(b) for b in cert.blocks],
            "factors": [_cvec(f) for f in cert.factors]}


def _cert_from_dict(data: dict, structure: PartyStructure, seed) -> ClassCertificate:
    kind = ClassKind(data["kind"])
    if kind is ClassKind.SLOCC_ORBIT:
        filters = [_from_cvec(f, (d, d)) for f, d in zip(data["filters"], structure.local_dims)]
        return ClassCertificate(kind, structure, seed=None if seed is None else seed.copy(), filters=filters)
    blocks = tuple(tuple(int(p) for p in b) for b in data["blocks"])
    return ClassCertificate(kind, structure, blocks=blocks, factors=[_from_cvec(f) for f in data["factors"]])


def decomposition_to_dict(dec: Decomposition, rho=None, rng_seed=0,
                          tol: Tolerances = DEFAULT_TOL, extra: Optional[dict] = None) -> dict:
    spec = dec.spec
    structure = spec.structure
    header = {
        "format": DECOMPOSITION_FORMAT,
        "class": format_class_spec(spec),
        "dims": list(structure.local_dims),
        "state_digest": state_digest(rho) if rho is not None else None,
        "rng_seed": rng_seed,
        "tolerances": {k: getattr(tol, k) for k in ("herm", "trace", "psd", "eig", "rank")},
    }
    if spec.kind is ClassKind.SLOCC_ORBIT:
        header["seed"] = _cvec(spec.seed.amplitudes)
    if extra:
        header.update(extra)
    members = [{"p": float(p), "amplitudes": _cvec(v), "certificate": _cert_to_dict(c)}
               for p, v, c in zip(dec.weights, dec.states, dec.certificates)]
    term = dec.termination
    return {
        **header,
        "iterations": int(dec.iterations),
        "members": members,
        "residual_weight": float(dec.residual_weight),
        "residual": _cvec(dec.residual.matrix),
        "termination": {
            "rule": term.rule,
            "purity": float(term.purity_value),
            "bound": float(term.bound_value),
            "grouping": split_label(term.grouping) if term.grouping else None,
        },
        "trajectory": {
            "purity": [float(x) for x in dec.trajectory.purity],
            "lam_max": [float(x) for x in dec.trajectory.lam_max],
            "lam_min": [float(x) for x in dec.trajectory.lam_min],
            "eps": [float(x) for x in dec.trajectory.eps],
            "overlap": [float(x) for x in dec.trajectory.overlap],
        },
    }


def decomposition_from_dict(data: dict) -> tuple[Decomposition, dict]:
    """Rebuild a Decomposition; returns it with the header fields."""
    if data.get("format") != DECOMPOSITION_FORMAT:
        raise FileFormatError(f"unsupported decomposition format {data.get('format')!r}")
    try:
        structure = PartyStructure(tuple(int(d) for d in data["dims"]))
        seed = None
        if "seed" in data:
            seed = PureState(_from_cvec(data["seed"]), structure)
        spec = parse_class_spec(data["class"], structure, seed=seed)
        d = structure.total_dim
        seed_amp = spec.seed.amplitudes if spec.kind is ClassKind.SLOCC_ORBIT else None
        weights = np.array([m["p"] for m in data["members"]], dtype=float)
        states = np.array([_from_cvec(m["amplitudes"]) for m in data["members"]],
                          dtype=complex).reshape(len(weights), d)
        certs = [_cert_from_dict(m["certificate"], structure, seed_amp) for m in data["members"]]
        residual_mat = _from_cvec(data["residual"], (d, d))
        residual = DensityMatrix(residual_mat, structure, float(np.linalg.eigvalsh(residual_mat)[0]))
        t = data["termination"]
        term = TerminationCertificate(t["rule"], float(t["purity"]), float(t["bound"]),
                                      t["grouping"] and _split_from_label(t["grouping"], structure))
        traj = Trajectory(**{k: list(v) for k, v in data.get("trajectory", {}).items()})
    except (KeyError, TypeError, IndexError) as exc:
        raise FileFormatError(f"malformed decomposition document: {exc!r}") from exc
    dec = Decomposition(spec, weights, states, certs, float(data["residual_weight"]), residual, term,
                        traj, int(data.get("iterations", len(weights))))
    header = {k: v for k, v in data.items() if k not in ("members", "residual", "trajectory")}
    return dec, header


def _split_from_label(label: str, structure: PartyStructure):
    from .linalg import normalize_split

    return normalize_split(label, structure.n_parties)


def write_decomposition(path, dec: Decomposition, rho=None, rng_seed=0,
                        tol: Tolerances = DEFAULT_TOL, extra: Optional[dict] = None) -> None:
    doc = decomposition_to_dict(dec, rho, rng_seed, tol, extra)
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def read_decomposition(path) -> tuple[Decomposition, dict]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: not a JSON document ({exc})") from exc
    return decomposition_from_dict(data)
