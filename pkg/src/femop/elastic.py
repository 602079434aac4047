"""Plane-stress linear elasticity on structured quad grids.

Second physics for the training losses and the boundary-condition-parametric
study. Degrees of freedom interleave per node as (u_x, u_y) -> (2n, 2n + 1);
strain uses Voigt order (eps_xx, eps_yy, gamma_xy) with engineering shear.
Young's modulus is a nodal field interpolated bilinearly, so the element
stiffness is linear in the nodal moduli and admits the same per-node slice
decomposition as the thermal kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse
from numpy.typing import NDArray

from femop.mesh import ElementGeometry, Mesh, cached_geometry, shape_gradients, shape_values
from femop.thermal import AssembledSystem, WellPosednessError, scatter_add, solve_reduced


def constitutive_plane_stress(E: float, nu: float) -> NDArray[np.float64]:
    """Plane-stress stiffness C = E/(1-nu^2) [[1, nu, 0], [nu, 1, 0], [0, 0, (1-nu)/2]]."""
    if E <= 0:
        raise ValueError(f"Young's modulus must be positive, got {E}")
    if not 0.0 <= nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {nu}")
    return (
        E
        / (1.0 - nu**2)
        * np.array(
            [
                [1.0, nu, 0.0],
                [nu, 1.0, 0.0],
                [0.0, 0.0, (1.0 - nu) / 2.0],
            ]
        )
    )


def strain_displacement(B: NDArray[np.float64]) -> NDArray[np.float64]:
    """Expand scalar gradient rows (..., 2, 4) to the 3x8 Voigt operator.

    Rows: eps_xx = du_x/dx, eps_yy = du_y/dy, gamma_xy = du_x/dy + du_y/dx,
    columns interleaved (u_x1, u_y1, ..., u_x4, u_y4).
    """
    B = np.asarray(B)
    out = np.zeros(B.shape[:-2] + (3, 8))
    out[..., 0, 0::2] = B[..., 0, :]
    out[..., 1, 1::2] = B[..., 1, :]
    out[..., 2, 0::2] = B[..., 1, :]
    out[..., 2, 1::2] = B[..., 0, :]
    return out


@dataclass(frozen=True)
class ElasticGeometry:
    """Per-mesh elastic quadrature data for a fixed Poisson ratio.

    mod_blocks[e, a] is the 8x8 stiffness slice multiplying nodal modulus
    E_a, so K_e(E_e) = sum_a E_e[a] * mod_blocks[e, a].
    """

    nu: float
    B3: NDArray[np.float64]  # (n_elems, n_gp, 3, 8)
    mod_blocks: NDArray[np.float64]  # (n_elems, 4, 8, 8)

    def __post_init__(self):
        self.B3.setflags(write=False)
        self.mod_blocks.setflags(write=False)


_ELASTIC_CACHE: dict[tuple[int, float, int], tuple[Mesh, ElasticGeometry]] = {}


def elastic_geometry(mesh: Mesh, nu: float, order: int = 2) -> ElasticGeometry:
    geom = cached_geometry(mesh, order)
    B3 = strain_displacement(geom.B)
    C1 = constitutive_plane_stress(1.0, nu)
    # sum_g detJw N_a B3^T C1 B3, the modulus-linear slices.
    CB = np.einsum("rc,egcj->egrj", C1, B3)
    mod_blocks = np.einsum("eg,ga,egri,egrj->eaij", geom.detJw, geom.N, B3, CB, optimize=True)
    return ElasticGeometry(nu=nu, B3=B3, mod_blocks=mod_blocks)


def cached_elastic_geometry(mesh: Mesh, nu: float, order: int = 2) -> ElasticGeometry:
    key = (id(mesh), float(nu), order)
    hit = _ELASTIC_CACHE.get(key)
    if hit is None or hit[0] is not mesh:
        hit = (mesh, elastic_geometry(mesh, nu, order))
        _ELASTIC_CACHE[key] = hit
    return hit[1]


def element_stiffness_elastic(
    Ee: NDArray[np.float64], nu: float, mesh: Mesh, elem: int
) -> NDArray[np.float64]:
    """Single-element 8x8 stiffness for nodal moduli Ee."""
    geom = cached_elastic_geometry(mesh, nu)
    return np.einsum("a,aij->ij", np.asarray(Ee, dtype=float), geom.mod_blocks[elem])


@dataclass(frozen=True)
class ElasticBVP:
    """Plane-stress problem with per-DOF displacement constraints.

    dirichlet_dofs holds global DOF ids (2 * node + component) with their
    prescribed values; at least three constraints are required to pin the
    rigid-body modes. Optional tractions apply a constant (tx, ty) per side.
    """

    mesh: Mesh
    E_nodal: NDArray[np.float64]
    nu: float
    dirichlet_dofs: NDArray[np.int64]
    dirichlet_values: NDArray[np.float64]
    tractions: tuple[tuple[str, tuple[float, float]], ...] = ()

    def __post_init__(self):
        E = np.asarray(self.E_nodal, dtype=float)
        if E.shape != (self.mesh.n_nodes,):
            raise ValueError(f"E_nodal must have shape ({self.mesh.n_nodes},)")
        if not np.all(E > 0):
            raise ValueError("Young's modulus must be strictly positive")
        if not 0.0 <= self.nu < 0.5:
            raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {self.nu}")
        dofs = np.asarray(self.dirichlet_dofs, dtype=np.int64)
        vals = np.asarray(self.dirichlet_values, dtype=float)
        if dofs.shape != vals.shape:
            raise ValueError("dirichlet arrays must have equal length")
        if len(np.unique(dofs)) < 3:
            raise WellPosednessError("need at least 3 constraints to pin rigid-body modes")
        if dofs.min() < 0 or dofs.max() >= 2 * self.mesh.n_nodes:
            raise ValueError("constraint DOF id out of range")
        order = np.argsort(dofs, kind="stable")
        dofs, vals = dofs[order], vals[order]
        dup = dofs[1:] == dofs[:-1]
        if np.any(dup & (vals[1:] != vals[:-1])):
            raise ValueError("conflicting displacement values on the same DOF")
        keep = np.concatenate([[True], ~dup])
        object.__setattr__(self, "E_nodal", E)
        object.__setattr__(self, "dirichlet_dofs", dofs[keep])
        object.__setattr__(self, "dirichlet_values", vals[keep])
        E.setflags(write=False)
        self.dirichlet_dofs.setflags(write=False)
        self.dirichlet_values.setflags(write=False)

    @classmethod
    def stretch_top(
        cls,
        mesh: Mesh,
        E_nodal: NDArray[np.float64],
        nu: float,
        ux: float,
        uy: float,
    ) -> "ElasticBVP":
        """Canonical setup: bottom edge clamped, top edge displaced by (ux, uy)."""
        bottom = mesh.boundary_nodes("bottom")
        top = mesh.boundary_nodes("top")
        dofs = np.concatenate([2 * bottom, 2 * bottom + 1, 2 * top, 2 * top + 1])
        vals = np.concatenate(
            [
                np.zeros(len(bottom)),
                np.zeros(len(bottom)),
                np.full(len(top), float(ux)),
                np.full(len(top), float(uy)),
            ]
        )
        return cls(mesh=mesh, E_nodal=E_nodal, nu=nu, dirichlet_dofs=dofs, dirichlet_values=vals)

    @property
    def n_dofs(self) -> int:
        return 2 * self.mesh.n_nodes

    @property
    def free_dofs(self) -> NDArray[np.int64]:
        return np.setdiff1d(np.arange(self.n_dofs, dtype=np.int64), self.dirichlet_dofs)


def _element_dofs(mesh: Mesh) -> NDArray[np.int64]:
    """(n_elems, 8) interleaved global DOF ids per element."""
    dofs = np.empty((mesh.n_elems, 8), dtype=np.int64)
    dofs[:, 0::2] = 2 * mesh.elems
    dofs[:, 1::2] = 2 * mesh.elems + 1
    return dofs


def traction_load(mesh: Mesh, tractions) -> NDArray[np.float64]:
    """Consistent edge load for constant side tractions (tx, ty)."""
    f = np.zeros(2 * mesh.n_nodes)
    for side, (tx, ty) in tractions:
        ids = mesh.boundary_nodes(side)
        seg = np.linalg.norm(np.diff(mesh.coords[ids], axis=0), axis=1)
        for comp, t in ((0, tx), (1, ty)):
            f[2 * ids[:-1] + comp] += 0.5 * t * seg
            f[2 * ids[1:] + comp] += 0.5 * t * seg
    return f


def assemble_elastic(bvp: ElasticBVP) -> AssembledSystem:
    """Assemble the global system with the free/fixed DOF partition."""
    mesh = bvp.mesh
    geom = cached_elastic_geometry(mesh, bvp.nu)
    Ee = bvp.E_nodal[mesh.elems]  # (E, 4)
    Ke = np.einsum("ea,eaij->eij", Ee, geom.mod_blocks, optimize=True)
    dofs = _element_dofs(mesh)
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    K = scipy.sparse.coo_matrix(
        (Ke.ravel(), (rows, cols)), shape=(bvp.n_dofs, bvp.n_dofs)
    ).tocsr()
    f = traction_load(mesh, bvp.tractions) if bvp.tractions else np.zeros(bvp.n_dofs)
    return AssembledSystem(
        K=K,
        f=f,
        free=bvp.free_dofs,
        fixed=bvp.dirichlet_dofs,
        fixed_values=bvp.dirichlet_values,
    )


def solve_elastic(bvp: ElasticBVP) -> NDArray[np.float64]:
    """Direct banded-Cholesky solve; returns the full 2N displacement vector."""
    return solve_reduced(assemble_elastic(bvp))


def elastic_stiffness_action(
    geom: ElasticGeometry,
    mesh: Mesh,
    E: NDArray[np.float64],
    U: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Matrix-free K(E) U for batched nodal moduli (B, N) and DOFs (B, 2N)."""
    dofs = _element_dofs(mesh)
    Ee = E[:, mesh.elems]  # (B, E, 4)
    Ue = U[:, dofs]  # (B, E, 8)
    re = np.einsum("bea,eaij,bej->bei", Ee, geom.mod_blocks, Ue, optimize=True)
    return scatter_add(dofs, 2 * mesh.n_nodes, re)


_CORNERS = np.array([(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)])


def recover_stress(bvp: ElasticBVP, U: NDArray[np.float64]) -> NDArray[np.float64]:
    """Nodal Voigt stress (sxx, syy, sxy) averaged over adjacent elements."""
    mesh = bvp.mesh
    dNc = np.stack([shape_gradients(xi, eta) for xi, eta in _CORNERS])
    Nc = np.stack([shape_values(xi, eta) for xi, eta in _CORNERS])
    xe = mesh.coords[mesh.elems]
    J = np.einsum("cai,eaj->ecij", dNc, xe)
    Bc = np.einsum("ecij,caj->ecia", np.linalg.inv(J), dNc)  # (E, 4c, 2, 4)
    B3 = strain_displacement(Bc)  # (E, 4c, 3, 8)
    Ue = U[_element_dofs(mesh)]  # (E, 8)
    strain = np.einsum("ecri,ei->ecr", B3, Ue)
    E_at = np.einsum("ca,ea->ec", Nc, bvp.E_nodal[mesh.elems])
    C1 = constitutive_plane_stress(1.0, bvp.nu)
    stress = np.einsum("ec,rs,ecs->ecr", E_at, C1, strain)

    out = np.zeros((mesh.n_nodes, 3))
    count = np.bincount(mesh.elems.ravel(), minlength=mesh.n_nodes)
    for comp in range(3):
        out[:, comp] = np.bincount(
            mesh.elems.ravel(), weights=stress[..., comp].ravel(), minlength=mesh.n_nodes
        )
    return out / count[:, None]
