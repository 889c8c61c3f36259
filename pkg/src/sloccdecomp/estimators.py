"""Estimator-style wrappers around the decomposer and the eps-ball analysis.

The estimators follow the scikit-learn conventions: constructor arguments
are stored unchanged, ``fit`` returns ``self`` and fitted results end in an
underscore.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .classes import ClassSpec
from .decomposer import Decomposition, DecomposerOptions, run, verify_decomposition
from .epsball import coords_to_matrix, cross_polytope_ball, ghz_werner_shift_bound, matrix_to_coords
from .linalg import DEFAULT_TOL, DensityMatrix, PartyStructure, StructureError, _as_structure, validate_density


def check_density_matrices(X, dims=None, tol=DEFAULT_TOL) -> list[DensityMatrix]:
    """Coerce ``X`` to a list of validated density matrices.

    ``X`` may be a DensityMatrix, a list of them, a (d, d) array or an
    (m, d, d) array. Plain arrays need ``dims``; without it a d = 2^n
    matrix is read as n qubits.
    """
    if isinstance(X, DensityMatrix):
        return [X]
    if isinstance(X, (list, tuple)) and X and all(isinstance(x, DensityMatrix) for x in X):
        return list(X)
    arr = np.asarray(X, dtype=complex)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValueError(f"expected a (d, d) or (m, d, d) array, got shape {arr.shape}")
    d = arr.shape[1]
    if dims is None:
        n = int(round(np.log2(d))) if d > 1 else 0
        if n < 1 or 2 ** n != d:
            raise StructureError(f"cannot infer dims for d={d}; pass dims")
        structure = PartyStructure.qubits(n)
    else:
        structure = _as_structure(dims)
    return [validate_density(m, structure, tol) for m in arr]


def _check_spec(class_spec, structure: PartyStructure) -> ClassSpec:
    if isinstance(class_spec, ClassSpec):
        spec = class_spec
    elif isinstance(class_spec, str):
        from .io import parse_class_spec

        spec = parse_class_spec(class_spec, structure)
    else:
        raise TypeError("class_spec must be a ClassSpec or its text encoding")
    if spec.structure != structure:
        raise StructureError(f"class dims {spec.structure} differ from state dims {structure}")
    return spec


class ConvexDecomposer(BaseEstimator):
    """Certify membership of a mixed state in the convex hull of a class.

    Parameters
    ----------
    class_spec : ClassSpec or str
        Target class, e.g. ``"fully-separable"`` or ``"w-class@2x2x2"``.
    dims : tuple of int, optional
        Local dimensions for plain-array inputs.

    The remaining parameters mirror :class:`DecomposerOptions`.

    Attributes
    ----------
    result_ : Decomposition or Stalled
    certified_ : bool
    audit_ : AuditReport or None
    n_members_ : int
    """

    def __init__(self, class_spec="fully-separable", dims=None, max_iters=20000, eps_cap_factor=1e-2,
                 overlap_target="sqrt", restarts=5, max_sweeps=20, rng_seed=0, eps_min_progress=50,
                 min_members=0):
        self.class_spec = class_spec
        self.dims = dims
        self.max_iters = max_iters
        self.eps_cap_factor = eps_cap_factor
        self.overlap_target = overlap_target
        self.restarts = restarts
        self.max_sweeps = max_sweeps
        self.rng_seed = rng_seed
        self.eps_min_progress = eps_min_progress
        self.min_members = min_members

    def _options(self) -> DecomposerOptions:
        return DecomposerOptions(max_iters=self.max_iters, eps_cap_factor=self.eps_cap_factor,
                                 overlap_target=self.overlap_target, restarts=self.restarts,
                                 max_sweeps=self.max_sweeps, rng_seed=self.rng_seed,
                                 eps_min_progress=self.eps_min_progress, min_members=self.min_members)

    def _run_one(self, rho: DensityMatrix):
        spec = _check_spec(self.class_spec, rho.structure)
        return spec, run(rho, spec, self._options())

    def fit(self, X, y=None):
        states = check_density_matrices(X, self.dims)
        if len(states) != 1:
            raise ValueError("fit takes a single state; use predict for several")
        rho = states[0]
        self.spec_, self.result_ = self._run_one(rho)
        self.certified_ = isinstance(self.result_, Decomposition)
        self.audit_ = verify_decomposition(rho, self.result_) if self.certified_ else None
        self.n_members_ = len(self.result_) if self.certified_ else len(self.result_.state.history)
        self.state_ = rho
        return self

    @property
    def decomposition_(self) -> Optional[Decomposition]:
        check_is_fitted(self, "result_")
        return self.result_ if self.certified_ else None

    def predict(self, X) -> np.ndarray:
        """True for each state whose membership gets certified (False is inconclusive)."""
        states = check_density_matrices(X, self.dims)
        return np.array([isinstance(self._run_one(rho)[1], Decomposition) for rho in states])


class OperatorVectorizer(TransformerMixin, BaseEstimator):
    """Map trace-one hermitian matrices to real coordinate vectors and back."""

    def fit(self, X, y=None):
        arr = np.asarray(X.matrix if isinstance(X, DensityMatrix) else X)
        self.dim_ = arr.shape[-1]
        self.n_features_out_ = self.dim_ ** 2 - 1
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "dim_")
        arr = np.asarray(X.matrix if isinstance(X, DensityMatrix) else X)
        single = arr.ndim == 2
        arr = arr[None] if single else arr
        if arr.shape[-2:] != (self.dim_, self.dim_):
            raise ValueError(f"expected {self.dim_}x{self.dim_} matrices, got {arr.shape[-2:]}")
        out = matrix_to_coords(arr)
        return out[0] if single else out

    def inverse_transform(self, Y) -> np.ndarray:
        check_is_fitted(self, "dim_")
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            return coords_to_matrix(Y, self.dim_)
        return np.stack([coords_to_matrix(y, self.dim_) for y in Y])


class CrossPolytopeBall(BaseEstimator):
    """Inscribed cross polytope of a decomposition around its state.

    ``fit(rho, decomposition)`` sets ``result_``, ``f_cp_``, ``eps_ball_``
    and ``shift_bound_`` (the latter only meaningful for the three-qubit
    GHZ white-noise family).
    """

    def __init__(self, tol_f=1e-6, tol_lp=1e-9, rotations=0, rng_seed=0, jobs=1):
        self.tol_f = tol_f
        self.tol_lp = tol_lp
        self.rotations = rotations
        self.rng_seed = rng_seed
        self.jobs = jobs

    def fit(self, X, decomposition=None):
        if decomposition is None:
            if not isinstance(X, ConvexDecomposer):
                raise ValueError("pass a decomposition, or a fitted ConvexDecomposer as X")
            rho, decomposition = X.state_, X.decomposition_
            if decomposition is None:
                raise ValueError("the decomposer did not certify its state")
        else:
            rho = X if isinstance(X, DensityMatrix) else \
                check_density_matrices(X, decomposition.structure.local_dims)[0]
        self.result_ = cross_polytope_ball(rho, decomposition, self.tol_f, self.tol_lp, self.rotations,
                                           self.rng_seed, self.jobs)
        self.f_cp_ = self.result_.f_cp
        self.eps_ball_ = self.result_.eps_ball
        self.shift_bound_ = ghz_werner_shift_bound(self.eps_ball_)
        return self
