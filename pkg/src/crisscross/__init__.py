"""Laplace eigenvalues with quadratic and cubic Lagrange elements on
criss-cross meshes, via the mixed divergence formulation."""

from .mesh import (
    MeshError,
    MeshStats,
    QuadMesh,
    TriMesh,
    build_lshape_grid,
    build_rect_grid,
    criss_cross,
    mesh_stats,
    perturb_quad_grid,
    single_quad_mesh,
    write_mesh_text,
)
from .refelem import QuadRule, ShapeTable, lagrange_shape, physical_grads, quad_rule
from .fespace import (
    DofMap,
    WhBasis,
    boundary_dofs,
    build_scalar_space,
    build_vector_space,
    build_wh_space,
)
from .assembly import (
    SparseMatrix,
    assemble_div_coupling,
    assemble_divdiv,
    assemble_scalar_mass,
    assemble_scalar_stiffness,
    assemble_vector_mass,
    l2_project_wh,
    write_matrix_market,
)
from .eigsolve import (
    SolverError,
    Spectrum,
    dense_gevp,
    filter_nonzero,
    shift_invert_lanczos,
    solve_fem1,
    solve_fem2,
    solve_primal,
)
from .audit import (
    ComplexReport,
    SpuriousReport,
    dim_sigma,
    exactness_check,
    spurious_scan,
    square_exact_spectrum,
    wh_local_audit,
)

__version__ = "0.1.0"
