"""Certify that a multipartite mixed state lies in the convex hull of a class
of pure states, by iterative subtraction of class states until a purity
bound applies to the residual."""

from .classes import (
    ClassCertificate,
    ClassKind,
    ClassSpec,
    random_class_element,
    seed_state,
    verify_certificate,
)
from .decomposer import (
    Decomposition,
    DecomposerOptions,
    Stalled,
    TerminationCertificate,
    WitnessCandidate,
    bipartite_purity_bound,
    multiqubit_purity_bound,
    optimal_epsilon,
    run,
    subtract,
    termination_check,
    threshold_scan,
    verify_decomposition,
)
from .epsball import (
    EpsBallResult,
    OperatorVector,
    cross_polytope_ball,
    ghz_werner_shift_bound,
    max_f_direction,
    membership_lp,
    rho_to_vec,
    vec_to_rho,
)
from .estimators import ConvexDecomposer, CrossPolytopeBall, OperatorVectorizer
from .io import parse_class_spec, read_decomposition, read_matrix, write_decomposition, write_matrix
from .linalg import (
    DensityMatrix,
    InvalidStateError,
    PartyStructure,
    PureState,
    StructureError,
    Tolerances,
    matrix_sqrt,
    max_eigenpair,
    partial_trace,
    purity,
    schmidt_rank,
    tensor_product,
    validate_density,
)
from .overlap import (
    OverlapOptions,
    apply_filter,
    build_filter_matrices,
    filter_step,
    maximize_overlap,
    maximize_overlap_product,
    maximize_overlap_slocc,
)
from .states import (
    be3_state,
    ghz_state,
    ghz_werner,
    heisenberg_thermal,
    parse_family,
    partial_transpose,
    upb_state,
    w_state,
    w_werner,
)

__version__ = "0.1.0"
