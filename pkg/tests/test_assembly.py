import math

import numpy as np
import pytest
import scipy.io
from numpy.testing import assert_allclose

from crisscross.assembly import (
    SparseMatrix,
    assemble_div_coupling,
    assemble_divdiv,
    assemble_scalar_mass,
    assemble_scalar_stiffness,
    assemble_vector_mass,
    assemble_wh_mass,
    l2_project_wh,
    write_matrix_market,
)
from crisscross.fespace import (
    build_disc_space,
    build_scalar_space,
    build_vector_space,
    build_wh_space,
    interpolate_vector,
)
from crisscross.mesh import (
    build_rect_grid,
    criss_cross,
    perturb_quad_grid,
    single_quad_mesh,
)
from crisscross.refelem import lagrange_shape, physical_grads, quad_rule, tabulate_shapes

PI = math.pi


def unit_square_tri():
    return criss_cross(single_quad_mesh([(0, 0), (1, 0), (1, 1), (0, 1)]))


def small_perturbed_tri(n=2, seed=3):
    return criss_cross(perturb_quad_grid(
        build_rect_grid(0, 0, PI, PI, n, n), 0.2, seed=seed))


def element_matrix_oracle(tri, k, form):
    """Single-triangle bilinear form through the refelem primitives only."""
    rule = quad_rule(2 * k)
    n = (k + 1) * (k + 2) // 2
    out = np.zeros((n, n))
    d1, d2 = tri[1] - tri[0], tri[2] - tri[0]
    area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
    for p, w in zip(rule.points, rule.weights):
        table = lagrange_shape(k, p)
        if form == "mass":
            out += w * np.outer(table.values, table.values)
        else:
            g = physical_grads(table, tri)
            out += w * (g @ g.T)
    return area * out


# ------------------------------------------------ textbook element kernels


def test_p1_mass_closed_form():
    tri = np.array([[0.2, 0.1], [1.4, 0.3], [0.5, 1.2]])
    d1, d2 = tri[1] - tri[0], tri[2] - tri[0]
    area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
    expected = area / 12.0 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]])
    assert_allclose(element_matrix_oracle(tri, 1, "mass"), expected, rtol=1e-14)


def test_p1_stiffness_closed_form_unit_right_triangle():
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    expected = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])
    assert_allclose(element_matrix_oracle(tri, 1, "stiffness"), expected,
                    atol=1e-15)


# ------------------------------------------------ dense Gram agreement


def dense_gram_oracle(tmesh, dmap, form):
    """Global matrix by a plain per-triangle python loop with a stronger rule.

    Independent of the vectorized scatter path: higher-order quadrature,
    per-pair accumulation into a dense array.
    """
    rule = quad_rule(10)
    vals, ref_grads = tabulate_shapes(dmap.degree, rule.points)
    out = np.zeros((dmap.n_dofs, dmap.n_dofs))
    vector = dmap.kind == "vector2"
    for t in range(tmesh.n_triangles):
        tri = tmesh.tri_coords()[t]
        J = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
        det = np.linalg.det(J)
        area = 0.5 * det
        g = ref_grads @ np.linalg.inv(J)
        dofs = dmap.cell_dofs[t]
        for q, w in enumerate(rule.weights):
            if form == "mass" and not vector:
                local = np.outer(vals[q], vals[q])
            elif form == "stiffness":
                local = g[q] @ g[q].T
            elif form == "mass" and vector:
                n = len(vals[q])
                local = np.zeros((2 * n, 2 * n))
                local[0::2, 0::2] = np.outer(vals[q], vals[q])
                local[1::2, 1::2] = np.outer(vals[q], vals[q])
            elif form == "divdiv":
                div = g[q].reshape(-1)
                local = np.outer(div, div)
            out[np.ix_(dofs, dofs)] += w * area * local
    return out


@pytest.mark.parametrize("k", [1, 2, 3])
def test_scalar_mass_matches_dense_oracle(k):
    tmesh = small_perturbed_tri()
    dmap = build_scalar_space(tmesh, k)
    M = assemble_scalar_mass(dmap, tmesh, quad_rule(2 * k)).toarray()
    assert_allclose(M, dense_gram_oracle(tmesh, dmap, "mass"), atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_stiffness_matches_dense_oracle(k):
    tmesh = small_perturbed_tri()
    dmap = build_scalar_space(tmesh, k)
    K = assemble_scalar_stiffness(dmap, tmesh, quad_rule(2 * k)).toarray()
    assert_allclose(K, dense_gram_oracle(tmesh, dmap, "stiffness"), atol=1e-12)


@pytest.mark.parametrize("k", [2, 3])
def test_vector_mass_and_divdiv_match_dense_oracle(k):
    tmesh = unit_square_tri()
    dmap = build_vector_space(tmesh, k)
    rule = quad_rule(2 * k)
    A = assemble_vector_mass(dmap, tmesh, rule).toarray()
    B = assemble_divdiv(dmap, tmesh, rule).toarray()
    assert_allclose(A, dense_gram_oracle(tmesh, dmap, "mass"), atol=1e-12)
    assert_allclose(B, dense_gram_oracle(tmesh, dmap, "divdiv"), atol=1e-12)


# ------------------------------------------------ structural properties


def test_vector_mass_total_sum_and_spd():
    tmesh = unit_square_tri()
    dmap = build_vector_space(tmesh, 2)
    A = assemble_vector_mass(dmap, tmesh, quad_rule(4))
    # sum_ij (phi_j, phi_i) = int |sum phi|^2 = 2 |Omega| by partition of unity
    assert_allclose(A.toarray().sum(), 2.0, rtol=1e-13)
    assert np.linalg.eigvalsh(A.toarray()).min() > 0


def test_quadrature_too_weak_rejected():
    tmesh = unit_square_tri()
    dmap = build_vector_space(tmesh, 3)
    with pytest.raises(ValueError, match="too weak"):
        assemble_vector_mass(dmap, tmesh, quad_rule(4))


@pytest.mark.parametrize("k", [1, 2, 3])
def test_divdiv_kernel_contains_constants_and_rotation(k):
    tmesh = small_perturbed_tri()
    dmap = build_vector_space(tmesh, k)
    B = assemble_divdiv(dmap, tmesh, quad_rule(2 * k))
    scale = np.abs(B.toarray()).max()
    const = interpolate_vector(tmesh, dmap, lambda x, y: (np.ones_like(x), 0 * y))
    rot = interpolate_vector(tmesh, dmap, lambda x, y: (-y, x))
    assert np.abs(B @ const).max() < 1e-12 * scale
    assert np.abs(B @ rot).max() < 1e-12 * scale


def test_divdiv_energy_of_linear_field():
    tmesh = small_perturbed_tri()
    dmap = build_vector_space(tmesh, 2)
    B = assemble_divdiv(dmap, tmesh, quad_rule(4))
    v = interpolate_vector(tmesh, dmap, lambda x, y: (x, y))  # div = 2
    assert_allclose(v @ (B @ v), 4.0 * PI * PI, rtol=1e-12)


def test_stiffness_row_sums_zero_and_mass_total():
    tmesh = small_perturbed_tri()
    dmap = build_scalar_space(tmesh, 2)
    K = assemble_scalar_stiffness(dmap, tmesh, quad_rule(4))
    M = assemble_scalar_mass(dmap, tmesh, quad_rule(4))
    assert np.abs(np.asarray(K.csr.sum(axis=1))).max() < 1e-11
    assert_allclose(M.toarray().sum(), PI * PI, rtol=1e-13)


# ------------------------------------------------ divergence coupling


def test_coupling_annihilates_constant_fields():
    tmesh = unit_square_tri()
    dmap = build_vector_space(tmesh, 2)
    wh = build_wh_space(tmesh, 2)
    D = assemble_div_coupling(dmap, wh, tmesh, quad_rule(4))
    const = interpolate_vector(tmesh, dmap, lambda x, y: (np.ones_like(x),
                                                          np.ones_like(y)))
    assert np.abs(D @ const).max() < 1e-13


def test_coupling_linear_field_against_indicator():
    # (div (x,0), 1_T) = area of T for each triangle
    tmesh = unit_square_tri()
    dmap = build_vector_space(tmesh, 2)
    disc = build_disc_space(tmesh, 1)
    D = assemble_div_coupling(dmap, disc, tmesh, quad_rule(4))
    v = interpolate_vector(tmesh, dmap, lambda x, y: (x, 0 * y))
    moments = D @ v
    areas = tmesh.tri_areas()
    for t in range(tmesh.n_triangles):
        indicator = np.zeros(disc.n_dofs)
        indicator[disc.cell_dofs(t)] = 1.0  # nodal constants give 1 on T
        assert_allclose(indicator @ moments, areas[t], rtol=1e-13)


@pytest.mark.parametrize("k", [2, 3])
def test_coupling_rank_equals_wh_dimension(k):
    tmesh = small_perturbed_tri()
    dmap = build_vector_space(tmesh, k)
    wh = build_wh_space(tmesh, k)
    disc = build_disc_space(tmesh, k - 1)
    rule = quad_rule(2 * k)
    D_full = assemble_div_coupling(dmap, disc, tmesh, rule).toarray()
    s = np.linalg.svd(D_full, compute_uv=False)
    rank = int(np.count_nonzero(s > 1e-9 * s[0]))
    assert rank == wh.n_dofs
    # and D against the constrained basis has full row rank
    D_wh = assemble_div_coupling(dmap, wh, tmesh, rule).toarray()
    s2 = np.linalg.svd(D_wh, compute_uv=False)
    assert s2[-1] > 1e-9 * s2[0]


def test_divdiv_nullity_matches_complex_dimension():
    tmesh = criss_cross(build_rect_grid(0, 0, PI, PI, 2, 2))
    dmap = build_vector_space(tmesh, 2)
    B = assemble_divdiv(dmap, tmesh, quad_rule(4)).toarray()
    evals = np.linalg.eigvalsh(B)
    nullity = np.count_nonzero(np.abs(evals) <= 1e-9 * evals.max())
    assert nullity == 3 * 9 + 1 * 12 + 0 - 1  # dim Sigma^3 - 1 on the 2x2 grid


# ------------------------------------------------ projection


def test_projection_idempotent_on_members():
    tmesh = small_perturbed_tri()
    wh = build_wh_space(tmesh, 2)
    rule = quad_rule(4)
    rng = np.random.default_rng(12)
    coeffs = rng.standard_normal(wh.n_dofs)
    disc_coeffs = wh.restriction @ coeffs

    # evaluate the member as a callable via nodal data per triangle
    def member(x, y):
        # x, y arrive as (T, P) arrays ordered by triangle
        out = np.zeros_like(x)
        vals, _ = tabulate_shapes(1, rule.points)
        for t in range(tmesh.n_triangles):
            local = disc_coeffs[t * wh.n_disc_local:(t + 1) * wh.n_disc_local]
            out[t] = vals @ local
        return out

    projected = l2_project_wh(member, wh, tmesh, rule)
    assert_allclose(projected, coeffs, atol=1e-11)


def test_projection_reproduces_divergence_of_random_field():
    tmesh = unit_square_tri()
    k = 2
    rule = quad_rule(2 * k)
    vmap = build_vector_space(tmesh, k)
    wh = build_wh_space(tmesh, k)
    rng = np.random.default_rng(5)
    v = rng.standard_normal(vmap.n_dofs)

    # oracle projection through the assembled operators:
    # M p = D v  <=>  p is the L2 projection of div v onto the basis
    D = assemble_div_coupling(vmap, wh, tmesh, rule).toarray()
    M = assemble_wh_mass(wh, tmesh, rule).toarray()
    p = np.linalg.solve(M, D @ v)

    # independent evaluation route: interpolate div v nodally per triangle
    def div_v(x, y):
        out = np.zeros_like(x)
        # x has shape (T, P) with P the rule points of each triangle
        vals_p = rule.points
        for t in range(tmesh.n_triangles):
            tri = tmesh.tri_coords()[t]
            J = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
            _, g = tabulate_shapes(k, vals_p)
            gphys = g @ np.linalg.inv(J)
            local = v[vmap.cell_dofs[t]]
            out[t] = gphys[:, :, 0] @ local[0::2] + gphys[:, :, 1] @ local[1::2]
        return out

    projected = l2_project_wh(div_v, wh, tmesh, rule)
    assert_allclose(projected, p, atol=1e-10)
    # div v lies in the space, so the projection reproduces it pointwise:
    # its disc expansion must satisfy the center constraint exactly
    disc = wh.restriction @ projected
    n = wh.n_disc_local
    for q in range(tmesh.n_quads):
        vals_at_center = [disc[(4 * q + s) * n + 2] for s in range(4)]
        residual = (vals_at_center[0] - vals_at_center[1]
                    + vals_at_center[2] - vals_at_center[3])
        assert abs(residual) < 1e-11


def test_projection_of_checkerboard_misses():
    tmesh = unit_square_tri()
    wh = build_wh_space(tmesh, 2)
    rule = quad_rule(4)

    def checkerboard(x, y):
        # -1 on bottom/top slots, +1 on left/right; triangles are slot-ordered
        signs = np.array([-1.0, 1.0, -1.0, 1.0])
        return np.broadcast_to(signs[:, None], x.shape).copy()

    coeffs = l2_project_wh(checkerboard, wh, tmesh, rule)
    disc = wh.restriction @ coeffs
    # residual norm = L2 distance from the space, strictly positive
    M = assemble_wh_mass(wh, tmesh, rule).toarray()
    norm_proj = math.sqrt(coeffs @ (M @ coeffs))
    norm_cb = 1.0  # |checkerboard| = sqrt(|Q|) = 1 on the unit square
    assert norm_proj < norm_cb - 1e-3


# ------------------------------------------------ SparseMatrix plumbing


def test_sparse_matrix_dedup_and_sort():
    mat = SparseMatrix(3, 3)
    mat.add_triplets([0, 0, 2, 1], [1, 1, 0, 2], [1.0, 2.0, 5.0, -1.0])
    mat.finalize()
    dense = mat.toarray()
    assert dense[0, 1] == 3.0
    assert dense[2, 0] == 5.0
    assert mat.nnz == 3
    csr = mat.csr
    for r in range(3):
        cols = csr.indices[csr.indptr[r]:csr.indptr[r + 1]]
        assert np.all(np.diff(cols) > 0)


def test_sparse_matrix_symmetry_flag():
    good = SparseMatrix(2, 2, symmetric=True)
    good.add_triplets([0, 1, 0, 1], [0, 1, 1, 0], [1.0, 1.0, 0.5, 0.5])
    good.finalize()
    bad = SparseMatrix(2, 2, symmetric=True)
    bad.add_triplets([0, 1], [1, 0], [1.0, 2.0])
    with pytest.raises(ValueError, match="symmetric"):
        bad.finalize()


def test_assembled_matrices_are_symmetric_flagged():
    tmesh = unit_square_tri()
    dmap = build_vector_space(tmesh, 2)
    A = assemble_vector_mass(dmap, tmesh, quad_rule(4))
    assert A.symmetric
    diff = np.abs(A.toarray() - A.toarray().T).max()
    assert diff < 1e-12 * np.abs(A.toarray()).max()


def test_matrix_market_round_trip(tmp_path):
    tmesh = unit_square_tri()
    dmap = build_scalar_space(tmesh, 2)
    M = assemble_scalar_mass(dmap, tmesh, quad_rule(4))
    path = tmp_path / "mass.mtx"
    write_matrix_market(M, path)
    back = scipy.io.mmread(path).tocsr()
    assert_allclose(back.toarray(), M.toarray(), rtol=1e-15)


def test_coupling_rejects_degree_mismatch():
    tmesh = unit_square_tri()
    v3 = build_vector_space(tmesh, 3)
    wh2 = build_wh_space(tmesh, 2)
    with pytest.raises(ValueError, match="degree"):
        assemble_div_coupling(v3, wh2, tmesh, quad_rule(6))
    with pytest.raises(ValueError, match="degree"):
        assemble_div_coupling(v3, build_disc_space(tmesh, 1), tmesh, quad_rule(6))
