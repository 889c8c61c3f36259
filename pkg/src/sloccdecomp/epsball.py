"""Robustness of a decomposition: an inscribed cross polytope.

A trace-one hermitian d x d matrix is mapped to a real vector of length
d^2 - 1: the first d - 1 diagonal entries, then the real and imaginary
parts of the upper-triangle entries in row-major order. Around the vector
of ``rho`` a symmetric cross polytope with vertices ``rho +- f e_i`` is
grown as far as every vertex stays in the convex hull of the decomposition
members (and the residual state). Its inscribed ball has radius
``f_cp / sqrt(d^2 - 1)``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import cKDTree
from scipy.stats import ortho_group

from .linalg import DensityMatrix, PartyStructure, _as_structure

logger = logging.getLogger(__name__)

TOL_LP = 1e-9
TOL_F = 1e-6
TOL_DEDUP = 1e-6
F_START = 1e-4
F_CAP = 2.0
LP_FEAS_TOL = 1e-10
_TIGHT = {"primal_feasibility_tolerance": LP_FEAS_TOL, "dual_feasibility_tolerance": LP_FEAS_TOL}
# HiGHS occasionally stalls or ends in an unknown state at tight
# tolerances; fall back to the other algorithm and then to its defaults
LP_ATTEMPTS = (
    ("highs-ds", {**_TIGHT, "time_limit": 5.0}),
    ("highs-ipm", {**_TIGHT, "time_limit": 30.0}),
    ("highs", {"time_limit": 120.0}),
)


class LPSolverError(RuntimeError):
    """The LP solver failed numerically (distinct from infeasibility)."""


class CenterInfeasibleError(RuntimeError):
    """The center state is not in the hull of the vertices."""


@dataclass(frozen=True, eq=False)
class OperatorVector:
    coords: np.ndarray
    structure: PartyStructure

    def __post_init__(self):
        object.__setattr__(self, "structure", _as_structure(self.structure))
        coords = np.asarray(self.coords, dtype=float)
        d = self.structure.total_dim
        if coords.shape != (d * d - 1,):
            raise ValueError(f"expected {d * d - 1} coordinates for dims {self.structure}, got {coords.shape}")
        object.__setattr__(self, "coords", coords)

    def __len__(self):
        return len(self.coords)


def _upper(d: int):
    return np.triu_indices(d, 1)


def matrix_to_coords(mat: np.ndarray) -> np.ndarray:
    """Coordinates of one matrix, or of a stack of matrices (..., d, d)."""
    mat = np.asarray(mat)
    d = mat.shape[-1]
    iu = _upper(d)
    diag = np.diagonal(mat, axis1=-2, axis2=-1).real[..., : d - 1]
    off = mat[..., iu[0], iu[1]]
    pairs = np.stack([off.real, off.imag], axis=-1).reshape(off.shape[:-1] + (-1,))
    return np.concatenate([diag, pairs], axis=-1)


def coords_to_matrix(coords: np.ndarray, d: int) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    mat = np.zeros((d, d), dtype=complex)
    diag = coords[: d - 1]
    mat[np.arange(d - 1), np.arange(d - 1)] = diag
    mat[d - 1, d - 1] = 1.0 - diag.sum()
    iu = _upper(d)
    pairs = coords[d - 1:].reshape(-1, 2)
    mat[iu] = pairs[:, 0] + 1j * pairs[:, 1]
    mat[(iu[1], iu[0])] = pairs[:, 0] - 1j * pairs[:, 1]
    return mat


def rho_to_vec(rho) -> OperatorVector:
    return OperatorVector(matrix_to_coords(rho.matrix), rho.structure)


def vec_to_rho(vec: OperatorVector) -> DensityMatrix:
    """Matrix of ``vec``. The result is trace one and hermitian but need not be PSD."""
    mat = coords_to_matrix(vec.coords, vec.structure.total_dim)
    return DensityMatrix(mat, vec.structure)


def pure_coords(states: np.ndarray) -> np.ndarray:
    """Coordinates of the projectors onto the rows of ``states``."""
    states = np.asarray(states, dtype=complex)
    d = states.shape[1]
    iu = _upper(d)
    diag = (np.abs(states) ** 2)[:, : d - 1]
    off = states[:, iu[0]] * states[:, iu[1]].conj()
    pairs = np.stack([off.real, off.imag], axis=-1).reshape(len(states), -1)
    return np.concatenate([diag, pairs], axis=1)


# -- linear program --------------------------------------------------------------------


@dataclass
class LPResult:
    feasible: bool
    weights: Optional[np.ndarray] = None
    max_violation: float = float("nan")


def _coords(x) -> np.ndarray:
    return x.coords if isinstance(x, OperatorVector) else np.asarray(x, dtype=float)


def _vertex_matrix(vertices) -> np.ndarray:
    if isinstance(vertices, np.ndarray) and vertices.ndim == 2:
        return vertices.astype(float, copy=False)
    return np.array([_coords(v) for v in vertices], dtype=float)


def _polish(V: np.ndarray, t: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Refine LP weights on their support.

    Simplex solutions carry errors of the order of the solver tolerance
    (mostly in sum(w)). Re-solving the equalities on the support by least
    squares removes them when the refined weights stay nonnegative;
    otherwise the clipped, renormalized weights are used.
    """
    w = np.clip(x, 0.0, None)
    w /= w.sum()
    support = np.flatnonzero(w > 1e-14)
    A = np.vstack([V[support].T, np.ones(len(support))])
    b = np.concatenate([t, [1.0]])
    ws = np.linalg.lstsq(A, b, rcond=None)[0]
    if ws.min() < 0:
        return w
    refined = np.zeros_like(w)
    refined[support] = ws
    if np.max(np.abs(V.T @ refined - t)) < np.max(np.abs(V.T @ w - t)):
        return refined
    return w


def membership_lp(target, vertices, tol_lp: float = TOL_LP) -> LPResult:
    """Is ``target`` a convex combination of ``vertices``?

    Decides whether ``w >= 0``, ``sum w = 1`` and ``|V^T w - target| <= tol_lp``
    coordinatewise has a solution. ``vertices`` is a sequence of
    OperatorVectors or an (m, n) array of coordinates.

    The LP minimizes the largest coordinate violation ``s`` (always feasible
    and bounded); the answer is read off the violation of the returned
    weights, recomputed after projecting them back to the simplex, so a
    "feasible" verdict always comes with weights that satisfy the slabs.

    Raises
    ------
    LPSolverError
        If every solver attempt stops without an optimal solution.
    """
    V = _vertex_matrix(vertices)
    t = _coords(target)
    if V.ndim != 2 or V.shape[0] == 0:
        raise ValueError("membership_lp needs a nonempty vertex list")
    if V.shape[1] != t.shape[0]:
        raise ValueError(f"vertex length {V.shape[1]} differs from target length {t.shape[0]}")
    m, n = V.shape
    ones = np.ones((n, 1))
    A_ub = np.block([[V.T, -ones], [-V.T, -ones]])
    b_ub = np.concatenate([t, -t])
    cost = np.zeros(m + 1)
    cost[-1] = 1.0
    A_eq = np.concatenate([np.ones(m), [0.0]])[None, :]
    res = None
    for method, options in LP_ATTEMPTS:
        res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=(0, None),
                      method=method, options=options)
        if res.status == 0 and res.x is not None:
            break
        logger.debug("linprog %s stopped with status %d, retrying", method, res.status)
    else:
        raise LPSolverError(f"LP solver stopped with status {res.status}: {res.message}")
    w = _polish(V, t, res.x[:m])
    viol = float(np.max(np.abs(V.T @ w - t)))
    # the solver itself works to LP_FEAS_TOL, so allow that on top of the slab
    if viol > tol_lp + LP_FEAS_TOL:
        return LPResult(False, None, viol)
    return LPResult(True, w, viol)


def max_f_direction(center, direction, vertices, tol_f: float = TOL_F, tol_lp: float = TOL_LP,
                    f_start: float = F_START, f_cap: float = F_CAP) -> float:
    """Largest certified f with ``center + f * direction`` in the hull.

    The upper end is found by doubling from ``f_start`` (capped at
    ``f_cap``), then the bracket is bisected to width ``tol_f``. The
    returned value is the feasible end of the bracket.

    Raises
    ------
    CenterInfeasibleError
        If ``center`` itself is outside the hull.
    """
    V = _vertex_matrix(vertices)
    c = _coords(center)
    e = _coords(direction)
    if not membership_lp(c, V, tol_lp).feasible:
        raise CenterInfeasibleError("the center is not in the convex hull of the vertices")

    def feasible(f):
        return membership_lp(c + f * e, V, tol_lp).feasible

    lo, hi = 0.0, f_start
    while feasible(hi):
        lo = hi
        if hi >= f_cap:
            return f_cap
        hi = min(2 * hi, f_cap)
    while hi - lo > tol_f:
        mid = (lo + hi) / 2
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


# -- cross polytope ----------------------------------------------------------------------


@dataclass
class EpsBallResult:
    """``per_direction`` holds ``(index, sign, f)`` for each signed axis."""

    f_cp: float
    eps_ball: float
    per_direction: list
    vertex_count: int
    hull_size: int = 0
    vertices_ok: bool = False
    rotation: Optional[np.ndarray] = field(default=None, repr=False)

    def table(self) -> str:
        lines = ["index sign f"]
        lines += [f"{i} {'+' if s > 0 else '-'} {f:.9g}" for i, s, f in self.per_direction]
        return "\n".join(lines)


def dedup_vertices(points: np.ndarray, radius: float = TOL_DEDUP) -> np.ndarray:
    """Indices of points kept after dropping any within ``radius`` of an earlier kept one."""
    if len(points) == 0:
        return np.zeros(0, dtype=int)
    tree = cKDTree(points)
    removed = np.zeros(len(points), dtype=bool)
    keep = []
    for i in range(len(points)):
        if removed[i]:
            continue
        keep.append(i)
        for j in tree.query_ball_point(points[i], radius):
            if j > i:
                removed[j] = True
    return np.asarray(keep, dtype=int)


def decomposition_vertices(dec, dedup_radius: float = TOL_DEDUP) -> np.ndarray:
    """Member projectors (deduplicated) plus the residual state, as coordinates."""
    pts = pure_coords(dec.states) if len(dec.states) else np.zeros((0, dec.structure.total_dim ** 2 - 1))
    pts = pts[dedup_vertices(pts, dedup_radius)]
    residual = matrix_to_coords(dec.residual.matrix)
    return np.vstack([pts, residual[None, :]])


def _direction_task(args):
    center, direction, V, tol_f, tol_lp = args
    return max_f_direction(center, direction, V, tol_f, tol_lp)


def _scan_axes(center, basis, V, tol_f, tol_lp, jobs):
    tasks = [(center, s * basis[:, i], V, tol_f, tol_lp)
             for i in range(basis.shape[1]) for s in (1, -1)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            fs = list(pool.map(_direction_task, tasks, chunksize=4))
    else:
        fs = []
        for k, t in enumerate(tasks):
            fs.append(_direction_task(t))
            logger.debug("direction %d/%d f=%.6g", k + 1, len(tasks), fs[-1])
    labels = [(i, s) for i in range(basis.shape[1]) for s in (1, -1)]
    return [(i, s, float(f)) for (i, s), f in zip(labels, fs)]


def cross_polytope_ball(rho, dec, tol_f: float = TOL_F, tol_lp: float = TOL_LP, rotations: int = 0,
                        rng_seed=0, jobs: int = 1, dedup_radius: float = TOL_DEDUP) -> EpsBallResult:
    """Inscribed cross polytope of the decomposition hull around ``rho``.

    With ``rotations > 0`` the axis-aligned basis is compared with that many
    random orthonormal bases and the largest ``f_cp`` is kept.
    """
    center = matrix_to_coords(rho.matrix)
    V = decomposition_vertices(dec, dedup_radius)
    n = center.shape[0]
    if not membership_lp(center, V, tol_lp).feasible:
        raise CenterInfeasibleError("rho is not in the convex hull of the decomposition")
    rng = np.random.default_rng(rng_seed)
    bases = [None] + [ortho_group.rvs(n, random_state=rng) for _ in range(rotations)]
    best = None
    for Q in bases:
        basis = np.eye(n) if Q is None else Q
        per = _scan_axes(center, basis, V, tol_f, tol_lp, jobs)
        f_cp = min(f for _, _, f in per)
        if best is None or f_cp > best[0]:
            best = (f_cp, per, Q)
    f_cp, per, Q = best
    basis = np.eye(n) if Q is None else Q
    ok = all(membership_lp(center + s * f_cp * basis[:, i], V, tol_lp).feasible
             for i in range(n) for s in (1, -1))
    return EpsBallResult(f_cp, f_cp / np.sqrt(n), per, 2 * n, len(V), ok, Q)


def ghz_werner_shift_bound(eps_ball: float) -> float:
    """Shift in p of the three-qubit GHZ white-noise family covered by a ball of radius ``eps_ball``.

    The Hilbert-Schmidt distance between the family at p and p + delta is
    sqrt(7/8) * delta.
    """
    if eps_ball < 0:
        raise ValueError("eps_ball must be nonnegative")
    return float(np.sqrt(8 / 7) * eps_ball)
