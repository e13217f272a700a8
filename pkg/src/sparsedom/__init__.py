"""Sparse domination of discretized singular integral operators.

The package builds, for a kernel operator discretized on a uniform grid,
a sparse family of dilated cubes with disjoint witness sets and an
empirical constant such that the associated sparse averaging operator
dominates the operator pointwise on the window.  A verification suite
checks sparsity, domination, norm ratios, and weak-type threshold
profiles on concrete inputs.
"""

from .errors import (
    AlignmentError,
    ConfigError,
    DegenerateInputError,
    DensityError,
    LeafCubeError,
    NumericError,
    ParameterError,
    SparsedomError,
    UndefinedRatioError,
    ValidationError,
)
from .grid import (
    CellSet,
    Cube,
    Grid,
    GridFunction,
    YoungFunction,
    avg_p,
    cube_integral,
    dilate,
    dyadic_children,
    orlicz_avg,
)
from .maximal import (
    CubeSweepPolicy,
    grand_truncated,
    hl_maximal,
    oscillation,
    sharp_truncated,
)
from .operators import (
    HormanderEstimate,
    Kernel,
    ModulationFamily,
    RestrictedTransform,
    apply_restricted,
    dini_constant,
    dini_profile,
    hormander_constant,
    kernel_names,
    make_kernel,
    maximally_modulated,
    transpose_kernel,
)
from .sparse import (
    ConstantLedger,
    DominationResult,
    ExceptionalSet,
    NodeRecord,
    PipelineConfig,
    SparseEntry,
    SparseFamily,
    build_sparse_domination,
    constant_from_records,
    exceptional_set,
    local_cz_decomposition,
    local_sparse_family,
    partition_cover,
    support_box,
)
from .verify import (
    DominationReport,
    ProbeResult,
    SparsityReport,
    audit_coefficients,
    check_domination,
    check_sparsity,
    sharp_vs_maximal,
    sparse_lp_ratio,
    sparse_operator,
    t1_testing_probe,
    wq_profile,
)

__version__ = "0.1.0"
