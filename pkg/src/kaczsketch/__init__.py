"""Sketch-accelerated Kaczmarz solvers for consistent overdetermined systems."""

from ._backend import DEFAULT as BACKEND
from .linalg import (
    frobenius_norm_sq,
    load_matrix_market,
    residual,
    row_norms_squared,
    smallest_nonzero_singular_value,
)
from .sketch import (
    CountSketchCS,
    CountSketchG,
    RowSampleQ,
    SketchedSystem,
    apply_count_sketch,
    apply_row_sample,
    apply_sketch,
    build_classic_count_sketch,
    build_count_sketch,
    build_row_sample,
    embedding_distortion,
    sketch_from_record,
)
from .solvers import (
    TAGS,
    BlockSampler,
    RunTrace,
    SolverConfig,
    StepsizePolicy,
    StoppingRule,
    adaptive_Lk,
    constant_alpha,
    kaczmarz_update,
    mwrk_select_row,
    rabk_direction,
    solve,
)

__version__ = "0.1.0"
