"""Mesh, quadrature and shape-function checks against analytic integrals."""

import numpy as np
import pytest

from femop.mesh import (
    DegenerateElementError,
    Mesh,
    build_grid,
    cached_geometry,
    element_geometry,
    gauss_rule,
    interpolate,
    locate_points,
    shape_eval,
    shape_gradients,
    shape_values,
    upsample,
)


class TestGrid:
    def test_node_numbering_row_major_x_fastest(self):
        mesh = build_grid(3, 3)
        assert mesh.n_nodes == 9
        assert mesh.n_elems == 4
        np.testing.assert_allclose(mesh.coords[0], [0.0, 0.0])
        np.testing.assert_allclose(mesh.coords[1], [0.5, 0.0])
        np.testing.assert_allclose(mesh.coords[3], [0.0, 0.5])
        np.testing.assert_allclose(mesh.coords[8], [1.0, 1.0])
        assert mesh.node_id(2, 1) == 5

    def test_connectivity_counterclockwise(self):
        mesh = build_grid(3, 3)
        # Element 0 corners: lower-left 0, then 1, 4, 3.
        np.testing.assert_array_equal(mesh.elems[0], [0, 1, 4, 3])
        np.testing.assert_array_equal(mesh.elems[3], [4, 5, 8, 7])
        # Signed shoelace area must be positive for every element.
        xe = mesh.coords[mesh.elems]
        x, y = xe[..., 0], xe[..., 1]
        area = 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)
        assert np.all(area > 0)

    def test_total_element_area_covers_domain(self):
        mesh = build_grid(7, 5, lx=2.0, ly=3.0)
        geom = element_geometry(mesh)
        np.testing.assert_allclose(geom.detJw.sum(), 2.0 * 3.0, rtol=1e-14)

    def test_boundary_node_sets(self):
        mesh = build_grid(4, 3)
        np.testing.assert_array_equal(mesh.boundary_nodes("left"), [0, 4, 8])
        np.testing.assert_array_equal(mesh.boundary_nodes("right"), [3, 7, 11])
        np.testing.assert_array_equal(mesh.boundary_nodes("bottom"), [0, 1, 2, 3])
        np.testing.assert_array_equal(mesh.boundary_nodes("top"), [8, 9, 10, 11])
        assert len(mesh.all_boundary_nodes()) == 2 * 4 + 2 * 3 - 4

    def test_rejects_bad_sizes(self):
        with pytest.raises(ValueError):
            build_grid(1, 5)
        with pytest.raises(ValueError):
            build_grid(5, 5, lx=-1.0)

    def test_coords_are_immutable(self):
        mesh = build_grid(3, 3)
        with pytest.raises(ValueError):
            mesh.coords[0, 0] = 5.0


class TestQuadrature:
    def test_weights_sum_to_parent_area(self):
        for order in (1, 2, 3):
            rule = gauss_rule(order)
            assert len(rule.weights) == order * order
            np.testing.assert_allclose(rule.weights.sum(), 4.0, rtol=1e-15)

    def test_order_two_points_and_weights(self):
        rule = gauss_rule(2)
        g = 1.0 / np.sqrt(3.0)
        np.testing.assert_allclose(np.sort(np.unique(np.abs(rule.points))), [g])
        np.testing.assert_allclose(rule.weights, np.ones(4))

    def test_polynomial_exactness(self):
        # Order-n Gauss integrates degree 2n-1 exactly per axis.
        rng = np.random.default_rng(0)
        for order in (1, 2, 3):
            deg = 2 * order - 1
            cx = rng.normal(size=deg + 1)
            cy = rng.normal(size=deg + 1)
            rule = gauss_rule(order)
            f = np.polyval(cx, rule.points[:, 0]) * np.polyval(cy, rule.points[:, 1])
            # Exact integral over [-1,1]^2 factorizes per axis.
            exact_x = sum(c / (deg - k + 1) * (1 - (-1) ** (deg - k + 1)) for k, c in enumerate(cx))
            exact_y = sum(c / (deg - k + 1) * (1 - (-1) ** (deg - k + 1)) for k, c in enumerate(cy))
            np.testing.assert_allclose(np.dot(rule.weights, f), exact_x * exact_y, rtol=1e-12)

    def test_unsupported_order(self):
        with pytest.raises(ValueError):
            gauss_rule(4)


class TestShapeFunctions:
    def test_partition_of_unity_and_kronecker(self):
        corners = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
        for a, (xi, eta) in enumerate(corners):
            N = shape_values(xi, eta)
            np.testing.assert_allclose(N, np.eye(4)[a], atol=1e-15)
        rng = np.random.default_rng(1)
        for _ in range(20):
            xi, eta = rng.uniform(-1, 1, size=2)
            assert shape_values(xi, eta).sum() == pytest.approx(1.0)
            np.testing.assert_allclose(shape_gradients(xi, eta).sum(axis=0), 0.0, atol=1e-15)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(2)
        h = 1e-6
        for _ in range(10):
            xi, eta = rng.uniform(-0.9, 0.9, size=2)
            dN = shape_gradients(xi, eta)
            fd_xi = (shape_values(xi + h, eta) - shape_values(xi - h, eta)) / (2 * h)
            fd_eta = (shape_values(xi, eta + h) - shape_values(xi, eta - h)) / (2 * h)
            np.testing.assert_allclose(dN[:, 0], fd_xi, atol=1e-9)
            np.testing.assert_allclose(dN[:, 1], fd_eta, atol=1e-9)

    def test_isoparametric_reproduces_linear_fields(self):
        # x and y themselves must be reproduced exactly by the element map,
        # and the physical gradient of a linear nodal field must be constant.
        mesh = build_grid(4, 4, lx=1.3, ly=0.7)
        rng = np.random.default_rng(3)
        a, b, c = 0.4, -1.2, 2.1
        field = a + b * mesh.coords[:, 0] + c * mesh.coords[:, 1]
        for _ in range(10):
            e = rng.integers(mesh.n_elems)
            xi, eta = rng.uniform(-1, 1, size=2)
            se = shape_eval(mesh, e, xi, eta)
            grad = se.B @ field[mesh.elems[e]]
            np.testing.assert_allclose(grad, [b, c], rtol=1e-12)

    def test_detj_quarter_cell_area_on_rectangles(self):
        mesh = build_grid(5, 3, lx=2.0, ly=1.0)
        se = shape_eval(mesh, 0, 0.3, -0.8)
        hx, hy = 2.0 / 4, 1.0 / 2
        assert se.detJ == pytest.approx(hx * hy / 4.0)

    def test_degenerate_element_raises(self):
        mesh = build_grid(2, 2)
        coords = mesh.coords.copy()
        coords[3] = coords[0]  # collapse the top-left corner onto the origin
        bad = Mesh(nx=2, ny=2, lx=1.0, ly=1.0, coords=coords, elems=mesh.elems.copy())
        with pytest.raises(DegenerateElementError):
            element_geometry(bad)


class TestElementGeometry:
    def test_conductivity_slices_match_sympy_unit_square(self):
        # Independent oracle: exact integration of k N_a B^T B over the parent
        # element mapped to [0, h]^2. For uniform k the summed slice is the
        # classic Laplace stiffness of a square Q4 element, which is
        # mesh-size independent.
        sympy = pytest.importorskip("sympy")
        xi, eta = sympy.symbols("xi eta")
        N = [
            (1 - xi) * (1 - eta) / 4,
            (1 + xi) * (1 - eta) / 4,
            (1 + xi) * (1 + eta) / 4,
            (1 - xi) * (1 + eta) / 4,
        ]
        h = sympy.Rational(1, 3)  # element size of a 4x4-node unit grid
        exact = np.empty((4, 4, 4))
        for a in range(4):
            for i in range(4):
                for j in range(4):
                    gi = [sympy.diff(N[i], xi) * 2 / h, sympy.diff(N[i], eta) * 2 / h]
                    gj = [sympy.diff(N[j], xi) * 2 / h, sympy.diff(N[j], eta) * 2 / h]
                    integrand = N[a] * (gi[0] * gj[0] + gi[1] * gj[1]) * h * h / 4
                    val = sympy.integrate(sympy.integrate(integrand, (xi, -1, 1)), (eta, -1, 1))
                    exact[a, i, j] = float(val)
        mesh = build_grid(4, 4)
        geom = element_geometry(mesh)
        for e in range(mesh.n_elems):
            np.testing.assert_allclose(geom.cond_blocks[e], exact, atol=1e-13)

    def test_uniform_conductivity_gives_classic_q4_stiffness(self):
        # Summing slices with k = 1 must give (1/6) * [[4,-1,-2,-1], ...] on
        # any square element regardless of its size.
        expected = np.array(
            [
                [4, -1, -2, -1],
                [-1, 4, -1, -2],
                [-2, -1, 4, -1],
                [-1, -2, -1, 4],
            ]
        ) / 6.0
        for n in (2, 5, 11):
            geom = element_geometry(build_grid(n, n))
            K_e = geom.cond_blocks.sum(axis=1)
            np.testing.assert_allclose(K_e, np.broadcast_to(expected, K_e.shape), atol=1e-14)

    def test_mass_matrix_exact(self):
        # integral(N_i N_j) over an h x h square: h^2/36 * [[4,2,1,2],...].
        expected = np.array(
            [
                [4, 2, 1, 2],
                [2, 4, 2, 1],
                [1, 2, 4, 2],
                [2, 1, 2, 4],
            ]
        ) / 36.0
        mesh = build_grid(3, 3)  # h = 1/2
        geom = element_geometry(mesh)
        np.testing.assert_allclose(geom.mass[0], expected * 0.25, rtol=1e-14)
        # Row sums integrate N_i over the element; total is the element area.
        np.testing.assert_allclose(geom.mass.sum(), 1.0, rtol=1e-14)

    def test_quadrature_orders_agree_on_stiffness(self):
        # Bilinear-conductivity stiffness entries are degree <= 3 per axis
        # after the Jacobian cancels, so orders 2 and 3 must agree exactly.
        mesh = build_grid(6, 4, lx=1.5, ly=0.5)
        g2 = element_geometry(mesh, order=2)
        g3 = element_geometry(mesh, order=3)
        np.testing.assert_allclose(g2.cond_blocks, g3.cond_blocks, atol=1e-13)
        np.testing.assert_allclose(g2.mass, g3.mass, atol=1e-13)

    def test_cached_geometry_reuses_instance(self):
        mesh = build_grid(3, 3)
        assert cached_geometry(mesh) is cached_geometry(mesh)
        assert cached_geometry(mesh, 3) is not cached_geometry(mesh, 2)


class TestInterpolation:
    def test_locate_points_centers_and_boundaries(self):
        mesh = build_grid(3, 3)
        elem, xi, eta = locate_points(mesh, np.array([[0.25, 0.25], [0.75, 0.75], [1.0, 1.0]]))
        np.testing.assert_array_equal(elem, [0, 3, 3])
        np.testing.assert_allclose(xi, [0.0, 0.0, 1.0])
        np.testing.assert_allclose(eta, [0.0, 0.0, 1.0])

    def test_interpolate_reproduces_bilinear_fields(self):
        mesh = build_grid(9, 7, lx=2.0, ly=1.0)
        x, y = mesh.coords[:, 0], mesh.coords[:, 1]
        field = 1.5 - 0.3 * x + 0.8 * y + 0.25 * x * y
        rng = np.random.default_rng(4)
        pts = rng.uniform([0, 0], [2.0, 1.0], size=(50, 2))
        exact = 1.5 - 0.3 * pts[:, 0] + 0.8 * pts[:, 1] + 0.25 * pts[:, 0] * pts[:, 1]
        np.testing.assert_allclose(interpolate(mesh, field, pts), exact, rtol=1e-12)

    def test_interpolate_at_nodes_is_identity(self):
        mesh = build_grid(5, 5)
        rng = np.random.default_rng(5)
        field = rng.normal(size=mesh.n_nodes)
        np.testing.assert_allclose(interpolate(mesh, field, mesh.coords), field, atol=1e-13)

    def test_interpolate_multicomponent(self):
        mesh = build_grid(4, 4)
        fields = np.column_stack([mesh.coords[:, 0], mesh.coords[:, 1]])
        out = interpolate(mesh, fields, np.array([[0.3, 0.7]]))
        np.testing.assert_allclose(out, [[0.3, 0.7]], rtol=1e-13)

    def test_upsample_preserves_linear_fields(self):
        mesh = build_grid(5, 5)
        field = 2.0 * mesh.coords[:, 0] - mesh.coords[:, 1]
        fine, vals = upsample(mesh, field, 17, 17)
        exact = 2.0 * fine.coords[:, 0] - fine.coords[:, 1]
        np.testing.assert_allclose(vals, exact, rtol=1e-12)
