"""Structured quadrilateral meshes, bilinear shape functions and Gauss quadrature.

Nodes are numbered row-major with x running fastest, so node (i, j) of an
nx-by-ny grid has id ``j * nx + i``. Elements list their four corner nodes
counterclockwise starting from the lower-left corner. All types are frozen
after construction and safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray


class DegenerateElementError(ValueError):
    """Raised when an element's Jacobian determinant is not strictly positive."""


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product Gauss-Legendre rule on the parent square [-1, 1]^2.

    Attributes
    ----------
    points : ndarray, shape (n, 2)
        Evaluation points (xi, eta).
    weights : ndarray, shape (n,)
        Positive weights summing to 4, the parent-square area.
    """

    points: NDArray[np.float64]
    weights: NDArray[np.float64]

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)


@dataclass(frozen=True)
class ShapeEval:
    """Bilinear shape data at one parent-space point of one element.

    Attributes
    ----------
    N : ndarray, shape (4,)
        Shape function values; they sum to 1.
    dN_dxi : ndarray, shape (4, 2)
        Parent-space gradients (dN/dxi, dN/deta) per node.
    B : ndarray, shape (2, 4)
        Physical-space gradient rows (d/dx, d/dy applied to each N_i).
    detJ : float
        Jacobian determinant of the isoparametric map, > 0.
    """

    N: NDArray[np.float64]
    dN_dxi: NDArray[np.float64]
    B: NDArray[np.float64]
    detJ: float


@dataclass(frozen=True)
class Mesh:
    """Structured 2D grid of bilinear quadrilaterals on a rectangle.

    Attributes
    ----------
    nx, ny : int
        Node counts per axis (both >= 2).
    lx, ly : float
        Domain edge lengths; the domain is [0, lx] x [0, ly].
    coords : ndarray, shape (n_nodes, 2)
        Node coordinates, row-major with x fastest.
    elems : ndarray, shape (n_elems, 4)
        Corner node ids per element, counterclockwise.
    """

    nx: int
    ny: int
    lx: float
    ly: float
    coords: NDArray[np.float64]
    elems: NDArray[np.int64]

    def __post_init__(self):
        self.coords.setflags(write=False)
        self.elems.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def n_elems(self) -> int:
        return (self.nx - 1) * (self.ny - 1)

    def node_id(self, i: int, j: int) -> int:
        """Node id of grid position (i, j), x index first."""
        return j * self.nx + i

    def boundary_nodes(self, side: str) -> NDArray[np.int64]:
        """Node ids on one side: 'left', 'right', 'bottom' or 'top'."""
        i = np.arange(self.nx)
        j = np.arange(self.ny)
        if side == "left":
            return j * self.nx
        if side == "right":
            return j * self.nx + (self.nx - 1)
        if side == "bottom":
            return i.astype(np.int64)
        if side == "top":
            return (self.ny - 1) * self.nx + i
        raise ValueError(f"unknown side {side!r}")

    def all_boundary_nodes(self) -> NDArray[np.int64]:
        """Ids of every node on the rectangle boundary, sorted, unique."""
        sides = [self.boundary_nodes(s) for s in ("left", "right", "bottom", "top")]
        return np.unique(np.concatenate(sides))


def build_grid(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0) -> Mesh:
    """Build a uniform structured grid of (nx-1) x (ny-1) quad elements.

    Parameters
    ----------
    nx, ny : int
        Node counts per axis, at least 2.
    lx, ly : float
        Positive domain edge lengths.

    Returns
    -------
    Mesh
        Node (i, j) sits at (i * lx / (nx-1), j * ly / (ny-1)); element
        connectivity is counterclockwise.
    """
    if nx < 2 or ny < 2:
        raise ValueError(f"need at least 2 nodes per axis, got nx={nx}, ny={ny}")
    if lx <= 0 or ly <= 0:
        raise ValueError(f"domain lengths must be positive, got lx={lx}, ly={ly}")
    x = np.linspace(0.0, lx, nx)
    y = np.linspace(0.0, ly, ny)
    xv, yv = np.meshgrid(x, y, indexing="xy")
    coords = np.column_stack([xv.ravel(), yv.ravel()])

    ii, jj = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="xy")
    n0 = (jj * nx + ii).ravel()
    elems = np.column_stack([n0, n0 + 1, n0 + nx + 1, n0 + nx]).astype(np.int64)
    return Mesh(nx=nx, ny=ny, lx=float(lx), ly=float(ly), coords=coords, elems=elems)


def gauss_rule(order: int) -> QuadratureRule:
    """Tensor-product Gauss-Legendre quadrature of the given order per axis.

    order 1 is the midpoint rule (weight 4); order 2 places four points at
    +-1/sqrt(3) with unit weights and integrates bilinear stiffness terms on
    rectangles exactly; order 3 is used as an independent refinement check.
    """
    if order not in (1, 2, 3):
        raise ValueError(f"unsupported quadrature order {order}; choose 1, 2 or 3")
    pts_1d, w_1d = np.polynomial.legendre.leggauss(order)
    xi, eta = np.meshgrid(pts_1d, pts_1d, indexing="xy")
    wx, wy = np.meshgrid(w_1d, w_1d, indexing="xy")
    points = np.column_stack([xi.ravel(), eta.ravel()])
    weights = (wx * wy).ravel()
    return QuadratureRule(points=points, weights=weights)


def shape_values(xi: float, eta: float) -> NDArray[np.float64]:
    """The four bilinear shape functions at parent coordinates (xi, eta)."""
    return 0.25 * np.array(
        [
            (1 - xi) * (1 - eta),
            (1 + xi) * (1 - eta),
            (1 + xi) * (1 + eta),
            (1 - xi) * (1 + eta),
        ]
    )


def shape_gradients(xi: float, eta: float) -> NDArray[np.float64]:
    """Parent-space gradients dN/d(xi, eta), shape (4, 2)."""
    return 0.25 * np.array(
        [
            [-(1 - eta), -(1 - xi)],
            [(1 - eta), -(1 + xi)],
            [(1 + eta), (1 + xi)],
            [-(1 + eta), (1 - xi)],
        ]
    )


def shape_eval(mesh: Mesh, elem: int, xi: float, eta: float) -> ShapeEval:
    """Evaluate shape functions and physical gradients on one element.

    Parameters
    ----------
    mesh : Mesh
    elem : int
        Element id.
    xi, eta : float
        Parent coordinates in [-1, 1].

    Returns
    -------
    ShapeEval
        With B = J^{-1} dN_dxi^T and the Jacobian determinant.

    Raises
    ------
    DegenerateElementError
        If det(J) <= 0 at the requested point.
    """
    if not (-1.0 <= xi <= 1.0 and -1.0 <= eta <= 1.0):
        raise ValueError(f"parent coordinates out of range: ({xi}, {eta})")
    nodes = mesh.elems[elem]
    xe = mesh.coords[nodes]  # (4, 2)
    N = shape_values(xi, eta)
    dN = shape_gradients(xi, eta)  # (4, 2)
    J = dN.T @ xe  # (2, 2), rows d(x,y)/d(xi, eta)
    detJ = float(J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0])
    if detJ <= 0.0:
        raise DegenerateElementError(f"element {elem}: det(J) = {detJ:.3e} at ({xi}, {eta})")
    B = np.linalg.solve(J, dN.T)  # (2, 4)
    return ShapeEval(N=N, dN_dxi=dN, B=B, detJ=detJ)


@dataclass(frozen=True)
class ElementGeometry:
    """Precomputed quadrature data for a whole mesh.

    Everything downstream (assembly, losses, responses) reads from these
    arrays instead of re-evaluating shape functions per element.

    Attributes
    ----------
    quad : QuadratureRule
    N : ndarray, (n_gp, 4)
        Shape values per quadrature point (identical for every element).
    B : ndarray, (n_elems, n_gp, 2, 4)
        Physical gradient rows per element and point.
    detJw : ndarray, (n_elems, n_gp)
        Jacobian determinant times quadrature weight.
    cond_blocks : ndarray, (n_elems, 4, 4, 4)
        cond_blocks[e, a] is the element conductivity-stiffness slice: the
        4x4 matrix multiplying nodal conductivity k_a, so that
        K_e(k_e) = sum_a k_e[a] * cond_blocks[e, a]. Conductivity is
        interpolated inside the element with the same bilinear functions
        as the field itself.
    mass : ndarray, (n_elems, 4, 4)
        Element mass matrices integral(N_i N_j) for nodal source loads.
    """

    quad: QuadratureRule
    N: NDArray[np.float64]
    B: NDArray[np.float64]
    detJw: NDArray[np.float64]
    cond_blocks: NDArray[np.float64]
    mass: NDArray[np.float64]

    def __post_init__(self):
        for arr in (self.N, self.B, self.detJw, self.cond_blocks, self.mass):
            arr.setflags(write=False)


def element_geometry(mesh: Mesh, order: int = 2) -> ElementGeometry:
    """Precompute quadrature-point shape data for every element of a mesh."""
    quad = gauss_rule(order)
    n_gp = len(quad.weights)
    n_el = mesh.n_elems

    N = np.stack([shape_values(xi, eta) for xi, eta in quad.points])  # (g, 4)
    dN = np.stack([shape_gradients(xi, eta) for xi, eta in quad.points])  # (g, 4, 2)

    xe = mesh.coords[mesh.elems]  # (e, 4, 2)
    # J[e, g] = dN[g]^T @ xe[e]
    J = np.einsum("gai,eaj->egij", dN, xe)  # (e, g, 2, 2) rows d(x,y)/d(xi,eta)
    detJ = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(detJ <= 0.0):
        e_bad, g_bad = np.argwhere(detJ <= 0.0)[0]
        raise DegenerateElementError(
            f"element {e_bad}: det(J) = {detJ[e_bad, g_bad]:.3e} at gauss point {g_bad}"
        )
    Jinv = np.linalg.inv(J)
    B = np.einsum("egij,gaj->egia", Jinv, dN)  # (e, g, 2, 4)
    detJw = detJ * quad.weights[None, :]

    # K_e(k) = sum_g detJw (N_g . k_e) B_g^T B_g  =>  slice per conductivity node a
    BtB = np.einsum("egci,egcj->egij", B, B)  # (e, g, 4, 4)
    cond_blocks = np.einsum("eg,ga,egij->eaij", detJw, N, BtB)
    mass = np.einsum("eg,gi,gj->eij", detJw, N, N)
    return ElementGeometry(quad=quad, N=N, B=B, detJw=detJw, cond_blocks=cond_blocks, mass=mass)


# Keyed by (id(mesh), order); the mesh itself is stored alongside so the id
# stays pinned for the life of the cache entry.
_GEOMETRY_CACHE: dict[tuple[int, int], tuple[Mesh, ElementGeometry]] = {}


def cached_geometry(mesh: Mesh, order: int = 2) -> ElementGeometry:
    """Per-mesh memoized element_geometry (meshes are immutable)."""
    key = (id(mesh), order)
    hit = _GEOMETRY_CACHE.get(key)
    if hit is None or hit[0] is not mesh:
        hit = (mesh, element_geometry(mesh, order))
        _GEOMETRY_CACHE[key] = hit
    return hit[1]


def locate_points(mesh: Mesh, points: NDArray[np.float64]):
    """Map physical points to (element id, xi, eta) on a uniform grid.

    Points outside the domain are clamped to the closest element edge.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    hx = mesh.lx / (mesh.nx - 1)
    hy = mesh.ly / (mesh.ny - 1)
    ix = np.clip((pts[:, 0] // hx).astype(int), 0, mesh.nx - 2)
    iy = np.clip((pts[:, 1] // hy).astype(int), 0, mesh.ny - 2)
    elem = iy * (mesh.nx - 1) + ix
    xi = np.clip(2.0 * (pts[:, 0] - ix * hx) / hx - 1.0, -1.0, 1.0)
    eta = np.clip(2.0 * (pts[:, 1] - iy * hy) / hy - 1.0, -1.0, 1.0)
    return elem, xi, eta


def interpolate(mesh: Mesh, nodal: NDArray[np.float64], points: NDArray[np.float64]) -> NDArray[np.float64]:
    """Evaluate a nodal field at arbitrary points via bilinear interpolation.

    Parameters
    ----------
    mesh : Mesh
    nodal : ndarray, shape (n_nodes,) or (n_nodes, k)
        One or several nodal fields.
    points : ndarray, shape (m, 2) or (2,)

    Returns
    -------
    ndarray
        Interpolated values, shape (m,) or (m, k).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    elem, xi, eta = locate_points(mesh, pts)
    # Bilinear shape values per point, vectorized.
    N = 0.25 * np.stack(
        [
            (1 - xi) * (1 - eta),
            (1 + xi) * (1 - eta),
            (1 + xi) * (1 + eta),
            (1 - xi) * (1 + eta),
        ],
        axis=1,
    )  # (m, 4)
    vals = np.asarray(nodal)[mesh.elems[elem]]  # (m, 4) or (m, 4, k)
    if vals.ndim == 2:
        out = np.einsum("ma,ma->m", N, vals)
    else:
        out = np.einsum("ma,mak->mk", N, vals)
    return out


def upsample(mesh: Mesh, nodal: NDArray[np.float64], nx_out: int, ny_out: int):
    """Resample a nodal field onto a finer uniform grid of the same domain.

    Returns the fine mesh and the interpolated field; used for display-style
    exports where a coarse solution is shown on a dense grid.
    """
    fine = build_grid(nx_out, ny_out, mesh.lx, mesh.ly)
    return fine, interpolate(mesh, nodal, fine.coords)
