"""Element-loop assembly of the mass, stiffness, div-div, and divergence
coupling forms into sparse matrices."""

from __future__ import annotations

import numpy as np
import scipy.io
import scipy.sparse as sp

from .fespace import DiscSpace, DofMap, WhBasis, build_disc_space
from .mesh import TriMesh
from .refelem import QuadRule, tabulate_shapes

__all__ = [
    "SparseMatrix",
    "assemble_scalar_mass",
    "assemble_scalar_stiffness",
    "assemble_vector_mass",
    "assemble_divdiv",
    "assemble_div_coupling",
    "assemble_wh_mass",
    "l2_project_wh",
    "write_matrix_market",
]


class SparseMatrix:
    """Sparse matrix assembled from triplets and finalized to CSR.

    Duplicate entries are summed on finalize; finalized storage has sorted
    column indices per row.  A matrix flagged symmetric is checked against
    its transpose on finalize.
    """

    def __init__(self, n_rows: int, n_cols: int, symmetric: bool = False):
        self.n_rows = n_rows
        self.n_cols = n_cols
        self.symmetric = symmetric
        self._rows = []
        self._cols = []
        self._data = []
        self._csr = None

    def add_triplets(self, rows, cols, data) -> None:
        if self._csr is not None:
            raise RuntimeError("matrix already finalized")
        self._rows.append(np.asarray(rows, dtype=np.int64).ravel())
        self._cols.append(np.asarray(cols, dtype=np.int64).ravel())
        self._data.append(np.asarray(data, dtype=float).ravel())

    def finalize(self) -> "SparseMatrix":
        if self._csr is None:
            if self._rows:
                rows = np.concatenate(self._rows)
                cols = np.concatenate(self._cols)
                data = np.concatenate(self._data)
            else:
                rows = cols = np.empty(0, dtype=np.int64)
                data = np.empty(0)
            coo = sp.coo_matrix((data, (rows, cols)),
                                shape=(self.n_rows, self.n_cols))
            csr = coo.tocsr()
            csr.sum_duplicates()
            csr.sort_indices()
            self._csr = csr
            self._rows = self._cols = self._data = None
            if self.symmetric:
                self._check_symmetry()
        return self

    def _check_symmetry(self) -> None:
        diff = (self._csr - self._csr.T).tocoo()
        scale = max(np.abs(self._csr.data).max(initial=0.0), 1e-300)
        if diff.nnz and np.abs(diff.data).max() > 1e-12 * scale:
            raise ValueError("matrix flagged symmetric is not symmetric")

    @classmethod
    def from_csr(cls, csr: sp.spmatrix, symmetric: bool = False) -> "SparseMatrix":
        out = cls(csr.shape[0], csr.shape[1], symmetric=symmetric)
        csr = csr.tocsr()
        csr.sum_duplicates()
        csr.sort_indices()
        out._csr = csr
        out._rows = out._cols = out._data = None
        if symmetric:
            out._check_symmetry()
        return out

    @property
    def csr(self) -> sp.csr_matrix:
        if self._csr is None:
            raise RuntimeError("matrix not finalized")
        return self._csr

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def __matmul__(self, other):
        return self.csr @ other


def _geometry(tmesh: TriMesh):
    """Per-triangle areas and inverse Jacobians of the affine maps."""
    p = tmesh.tri_coords()
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # (T, 2, 2)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0] = J[:, 1, 1]
    Jinv[:, 0, 1] = -J[:, 0, 1]
    Jinv[:, 1, 0] = -J[:, 1, 0]
    Jinv[:, 1, 1] = J[:, 0, 0]
    Jinv /= det[:, None, None]
    return 0.5 * det, Jinv


def _physical_gradients(tmesh: TriMesh, degree: int, rule: QuadRule):
    """Shape values (P, n) and physical gradients (T, P, n, 2) at rule points."""
    vals, ref_grads = tabulate_shapes(degree, rule.points)
    _, Jinv = _geometry(tmesh)
    grads = np.einsum("qne,ted->tqnd", ref_grads, Jinv)
    return vals, grads


def _require_exactness(rule: QuadRule, needed: int) -> None:
    if rule.exactness_degree < needed:
        raise ValueError(
            f"quadrature of exactness {rule.exactness_degree} is too weak; "
            f"this form needs degree {needed}"
        )


def _scatter(element: np.ndarray, row_dofs: np.ndarray, col_dofs: np.ndarray,
             n_rows: int, n_cols: int, symmetric: bool) -> SparseMatrix:
    T, nr, nc = element.shape
    rows = np.repeat(row_dofs, nc, axis=1).ravel()
    cols = np.tile(col_dofs, (1, nr)).ravel()
    mat = SparseMatrix(n_rows, n_cols, symmetric=symmetric)
    mat.add_triplets(rows, cols, element.ravel())
    return mat.finalize()


def assemble_scalar_mass(space: DofMap, tmesh: TriMesh, rule: QuadRule) -> SparseMatrix:
    """L2 mass matrix of the scalar Lagrange space."""
    _require_exactness(rule, 2 * space.degree)
    area, _ = _geometry(tmesh)
    vals, _ = tabulate_shapes(space.degree, rule.points)
    element = np.einsum("q,t,qi,qj->tij", rule.weights, area, vals, vals)
    return _scatter(element, space.cell_dofs, space.cell_dofs,
                    space.n_dofs, space.n_dofs, symmetric=True)


def assemble_scalar_stiffness(space: DofMap, tmesh: TriMesh,
                              rule: QuadRule) -> SparseMatrix:
    """Dirichlet-form stiffness matrix (grad u, grad v) of the scalar space."""
    _require_exactness(rule, 2 * (space.degree - 1))
    area, _ = _geometry(tmesh)
    _, grads = _physical_gradients(tmesh, space.degree, rule)
    element = np.einsum("q,t,tqid,tqjd->tij", rule.weights, area, grads, grads)
    return _scatter(element, space.cell_dofs, space.cell_dofs,
                    space.n_dofs, space.n_dofs, symmetric=True)


def _vector_div_table(tmesh: TriMesh, degree: int, rule: QuadRule):
    """Divergence of the interleaved vector basis at rule points, (T, P, 2n)."""
    _, grads = _physical_gradients(tmesh, degree, rule)
    T, P, n, _ = grads.shape
    return grads.reshape(T, P, 2 * n)


def assemble_vector_mass(space: DofMap, tmesh: TriMesh, rule: QuadRule) -> SparseMatrix:
    """L2 mass matrix of the vector space; SPD, block of the scalar mass."""
    if space.kind != "vector2":
        raise ValueError("expected a vector dof map")
    _require_exactness(rule, 2 * space.degree)
    area, _ = _geometry(tmesh)
    vals, _ = tabulate_shapes(space.degree, rule.points)
    scalar_el = np.einsum("q,t,qi,qj->tij", rule.weights, area, vals, vals)
    T, n, _ = scalar_el.shape
    element = np.zeros((T, 2 * n, 2 * n))
    element[:, 0::2, 0::2] = scalar_el
    element[:, 1::2, 1::2] = scalar_el
    return _scatter(element, space.cell_dofs, space.cell_dofs,
                    space.n_dofs, space.n_dofs, symmetric=True)


def assemble_divdiv(space: DofMap, tmesh: TriMesh, rule: QuadRule) -> SparseMatrix:
    """(div u, div v) matrix of the vector space; symmetric positive
    semidefinite with a large kernel of divergence-free fields."""
    if space.kind != "vector2":
        raise ValueError("expected a vector dof map")
    _require_exactness(rule, 2 * (space.degree - 1))
    area, _ = _geometry(tmesh)
    div = _vector_div_table(tmesh, space.degree, rule)
    element = np.einsum("q,t,tqa,tqb->tab", rule.weights, area, div, div)
    return _scatter(element, space.cell_dofs, space.cell_dofs,
                    space.n_dofs, space.n_dofs, symmetric=True)


def _disc_cell_dofs(disc: DiscSpace, n_triangles: int) -> np.ndarray:
    return (np.arange(n_triangles)[:, None] * disc.n_local
            + np.arange(disc.n_local))


def assemble_div_coupling(vspace: DofMap, testspace, tmesh: TriMesh,
                          rule: QuadRule) -> SparseMatrix:
    """Coupling D with D[i, j] = (div phi_j, q_i).

    The test space is either the full discontinuous P_{k-1} space or the
    constrained divergence-image basis (rows compressed through its
    restriction matrix).
    """
    if vspace.kind != "vector2":
        raise ValueError("expected a vector dof map")
    if isinstance(testspace, WhBasis):
        if testspace.degree != vspace.degree:
            raise ValueError("pressure basis degree does not match the vector space")
        disc = build_disc_space(tmesh, testspace.degree - 1)
    elif isinstance(testspace, DiscSpace):
        if testspace.degree != vspace.degree - 1:
            raise ValueError("test space degree must be one below the vector space")
        disc = testspace
    else:
        raise TypeError("testspace must be a WhBasis or DiscSpace")
    _require_exactness(rule, vspace.degree - 1 + disc.degree)

    area, _ = _geometry(tmesh)
    div = _vector_div_table(tmesh, vspace.degree, rule)
    test_vals, _ = tabulate_shapes(disc.degree, rule.points)
    element = np.einsum("q,t,qm,tqa->tma", rule.weights, area, test_vals, div)
    rows = _disc_cell_dofs(disc, tmesh.n_triangles)
    D = _scatter(element, rows, vspace.cell_dofs,
                 disc.n_dofs, vspace.n_dofs, symmetric=False)
    if isinstance(testspace, WhBasis):
        return SparseMatrix.from_csr(testspace.restriction.T @ D.csr)
    return D


def _disc_mass_csr(tmesh: TriMesh, disc: DiscSpace, rule: QuadRule) -> sp.csr_matrix:
    _require_exactness(rule, 2 * disc.degree)
    area, _ = _geometry(tmesh)
    vals, _ = tabulate_shapes(disc.degree, rule.points)
    ref_mass = np.einsum("q,qi,qj->ij", rule.weights, vals, vals)
    element = area[:, None, None] * ref_mass
    dofs = _disc_cell_dofs(disc, tmesh.n_triangles)
    return _scatter(element, dofs, dofs, disc.n_dofs, disc.n_dofs,
                    symmetric=True).csr


def assemble_wh_mass(wh: WhBasis, tmesh: TriMesh, rule: QuadRule) -> SparseMatrix:
    """L2 mass matrix of the divergence-image basis (block diagonal per quad)."""
    disc = build_disc_space(tmesh, wh.degree - 1)
    G = _disc_mass_csr(tmesh, disc, rule)
    return SparseMatrix.from_csr(wh.restriction.T @ G @ wh.restriction,
                                 symmetric=True)


def l2_project_wh(f, wh: WhBasis, tmesh: TriMesh, rule: QuadRule) -> np.ndarray:
    """L2-orthogonal projection of a callable f(x, y) onto the constrained
    space; solves one small Gram system per quad."""
    disc = build_disc_space(tmesh, wh.degree - 1)
    _require_exactness(rule, 2 * disc.degree)
    area, _ = _geometry(tmesh)
    vals, _ = tabulate_shapes(disc.degree, rule.points)
    coords = np.einsum("qj,tjd->tqd", rule.points, tmesh.tri_coords())
    fvals = np.asarray(f(coords[:, :, 0], coords[:, :, 1]), dtype=float)
    b_disc = np.einsum("q,t,tq,qm->tm", rule.weights, area, fvals, vals).ravel()

    b_wh = wh.restriction.T @ b_disc
    gram = (wh.restriction.T @ _disc_mass_csr(tmesh, disc, rule)
            @ wh.restriction).tocsr()
    m = wh.n_local
    blocks = np.stack([gram[q * m:(q + 1) * m, q * m:(q + 1) * m].toarray()
                       for q in range(wh.n_quads)])
    rhs = b_wh.reshape(wh.n_quads, m)
    return np.linalg.solve(blocks, rhs[..., None])[..., 0].ravel()


def write_matrix_market(mat: SparseMatrix, path) -> None:
    """Export in MatrixMarket coordinate format."""
    scipy.io.mmwrite(path, mat.csr.tocoo())
