"""Steady-state heat conduction on structured quad grids.

Assembles and solves K(k) T = f with nodally interpolated conductivity,
linear or temperature-dependent (Newton). The same element kernels double as
the residual engine for network training losses, so the batched actions here
are written matrix-free: gather, einsum over precomputed element slices,
scatter-add.

Sign conventions: the residual is r = K(k) T - f, with f collecting nodal
sources and inward Neumann contributions; prescribed boundary flux q_bar is
the outward normal component, so a positive q_bar removes heat.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from numpy.typing import NDArray

from femop.mesh import ElementGeometry, Mesh, cached_geometry, shape_gradients, shape_values


class WellPosednessError(ValueError):
    """Boundary data does not determine a unique solution."""


class NewtonConvergenceError(RuntimeError):
    """Newton iteration failed; carries the residual-norm history."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class ConductivityLaw:
    """Temperature-dependent conductivity k(T) = m1 + beta * T**m2."""

    m1: float
    m2: float
    beta: float = 1.0

    def k(self, T: NDArray[np.float64]) -> NDArray[np.float64]:
        return self.m1 + self.beta * np.asarray(T) ** self.m2

    def dk_dT(self, T: NDArray[np.float64]) -> NDArray[np.float64]:
        T = np.asarray(T)
        return self.beta * self.m2 * T ** (self.m2 - 1)


@dataclass(frozen=True)
class ThermalBVP:
    """Heat-conduction boundary value problem on a structured grid.

    Attributes
    ----------
    mesh : Mesh
    k_nodal : ndarray (n_nodes,) or None
        Conductivity at the nodes, interpolated bilinearly inside elements.
        Required in linear mode, ignored when ``nonlinear`` is set.
    dirichlet_nodes, dirichlet_values : ndarray
        Prescribed-temperature nodes and their values. Must be non-empty.
    q_source : ndarray (n_nodes,) or None
        Nodal heat source density; None means zero.
    neumann : tuple of (side, q_bar)
        Constant outward boundary flux on whole sides ('left', 'right',
        'bottom', 'top'); sides not listed are flux-free.
    nonlinear : ConductivityLaw or None
        When set, conductivity is k(T) and the problem needs solve_newton.
    """

    mesh: Mesh
    k_nodal: NDArray[np.float64] | None
    dirichlet_nodes: NDArray[np.int64]
    dirichlet_values: NDArray[np.float64]
    q_source: NDArray[np.float64] | None = None
    neumann: tuple[tuple[str, float], ...] = ()
    nonlinear: ConductivityLaw | None = None

    def __post_init__(self):
        n = self.mesh.n_nodes
        nodes = np.asarray(self.dirichlet_nodes, dtype=np.int64)
        values = np.asarray(self.dirichlet_values, dtype=float)
        if nodes.size == 0:
            raise WellPosednessError("at least one Dirichlet node is required")
        if nodes.shape != values.shape:
            raise ValueError("dirichlet_nodes and dirichlet_values must have equal length")
        if nodes.min() < 0 or nodes.max() >= n:
            raise ValueError("Dirichlet node id out of range")
        order = np.argsort(nodes, kind="stable")
        nodes, values = nodes[order], values[order]
        dup = nodes[1:] == nodes[:-1]
        if np.any(dup & (values[1:] != values[:-1])):
            raise ValueError("conflicting Dirichlet values on the same node")
        keep = np.concatenate([[True], ~dup])
        object.__setattr__(self, "dirichlet_nodes", nodes[keep])
        object.__setattr__(self, "dirichlet_values", values[keep])
        if self.nonlinear is None:
            if self.k_nodal is None:
                raise ValueError("linear mode requires k_nodal")
            k = np.asarray(self.k_nodal, dtype=float)
            if k.shape != (n,):
                raise ValueError(f"k_nodal must have shape ({n},)")
            if not np.all(k > 0):
                raise ValueError("conductivity must be strictly positive")
            object.__setattr__(self, "k_nodal", k)
        if self.q_source is not None:
            q = np.asarray(self.q_source, dtype=float)
            if q.shape != (n,):
                raise ValueError(f"q_source must have shape ({n},)")
            object.__setattr__(self, "q_source", q)
        for side, _ in self.neumann:
            if side not in ("left", "right", "bottom", "top"):
                raise ValueError(f"unknown boundary side {side!r}")
        self.dirichlet_nodes.setflags(write=False)
        self.dirichlet_values.setflags(write=False)

    @classmethod
    def with_side_temperatures(
        cls,
        mesh: Mesh,
        k_nodal: NDArray[np.float64] | None = None,
        *,
        left: float | None = None,
        right: float | None = None,
        bottom: float | None = None,
        top: float | None = None,
        q_source: NDArray[np.float64] | None = None,
        neumann: tuple[tuple[str, float], ...] = (),
        nonlinear: ConductivityLaw | None = None,
    ) -> "ThermalBVP":
        """BVP with uniform prescribed temperatures on whole sides."""
        nodes, values = [], []
        for side, value in (("left", left), ("right", right), ("bottom", bottom), ("top", top)):
            if value is not None:
                ids = mesh.boundary_nodes(side)
                nodes.append(ids)
                values.append(np.full(len(ids), float(value)))
        if not nodes:
            raise WellPosednessError("no side temperature given")
        return cls(
            mesh=mesh,
            k_nodal=k_nodal,
            dirichlet_nodes=np.concatenate(nodes),
            dirichlet_values=np.concatenate(values),
            q_source=q_source,
            neumann=neumann,
            nonlinear=nonlinear,
        )

    @property
    def free_nodes(self) -> NDArray[np.int64]:
        return np.setdiff1d(np.arange(self.mesh.n_nodes, dtype=np.int64), self.dirichlet_nodes)


@dataclass(frozen=True)
class AssembledSystem:
    """Sparse global system with its Dirichlet partition.

    K is the full n x n stiffness (no rows eliminated); f the full load
    vector. Solvers reduce to the free block themselves.
    """

    K: scipy.sparse.csr_matrix
    f: NDArray[np.float64]
    free: NDArray[np.int64]
    fixed: NDArray[np.int64]
    fixed_values: NDArray[np.float64]


# -- batched matrix-free element kernels ------------------------------------
#
# All take nodal arrays with a leading batch axis (B, n_nodes) and never build
# a sparse matrix. Scatter uses bincount, which sums in flat index order and
# is therefore deterministic.

_einsum_paths: dict[tuple, list] = {}


def cached_einsum(subscripts: str, *operands: NDArray[np.float64]) -> NDArray[np.float64]:
    """einsum with the contraction path memoized by signature and shapes.

    Training loops evaluate the element kernels thousands of times on
    identical shapes; for these small blocks the greedy path search costs as
    much as the contraction itself.
    """
    key = (subscripts, *(op.shape for op in operands))
    path = _einsum_paths.get(key)
    if path is None:
        path = np.einsum_path(subscripts, *operands, optimize="greedy")[0]
        _einsum_paths[key] = path
    return np.einsum(subscripts, *operands, optimize=path)


def scatter_add(elems: NDArray[np.int64], n_nodes: int, contrib: NDArray[np.float64]) -> NDArray[np.float64]:
    """Sum per-element nodal contributions (B, n_elems, 4) into (B, n_nodes)."""
    B = contrib.shape[0]
    offsets = np.arange(B)[:, None, None] * n_nodes
    flat = (offsets + elems[None, :, :]).ravel()
    out = np.bincount(flat, weights=contrib.ravel(), minlength=B * n_nodes)
    return out.reshape(B, n_nodes)


def stiffness_action(
    geom: ElementGeometry,
    elems: NDArray[np.int64],
    n_nodes: int,
    k: NDArray[np.float64],
    T: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Matrix-free K(k) T for batches of nodal conductivities and fields.

    Because K is linear in k through the per-node slices, this same kernel
    also evaluates the conductivity-direction derivative: the action of
    dr/dk on a nodal vector v is stiffness_action(..., k=v, T=T).
    """
    Ke = element_stiffness_batch(geom, elems, k)
    Te = T[:, elems]
    re = np.matmul(Ke, Te[..., None])[..., 0]
    return scatter_add(elems, n_nodes, re)


def element_stiffness_batch(
    geom: ElementGeometry, elems: NDArray[np.int64], k: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Per-element stiffness K_e = sum_a k_a B_a for batched k: (B, E, 4, 4).

    Written as one stacked matmul over the flattened (i, j) block axis; the
    einsum equivalent spends as long picking a path as contracting.
    """
    E = geom.cond_blocks.shape[0]
    ke = k[:, elems]  # (B, E, 4)
    flat = geom.cond_blocks.reshape(E, 4, 16)
    return np.matmul(ke[:, :, None, :], flat[None])[:, :, 0, :].reshape(*ke.shape[:2], 4, 4)


def conductivity_transpose_action(
    geom: ElementGeometry,
    elems: NDArray[np.int64],
    n_nodes: int,
    T: NDArray[np.float64],
    w: NDArray[np.float64],
) -> NDArray[np.float64]:
    """(dr/dk)^T w: gradient of w . r with respect to nodal conductivity."""
    Te = T[:, elems]
    we = w[:, elems]
    ge = cached_einsum("eaij,bej,bei->bea", geom.cond_blocks, Te, we)
    return scatter_add(elems, n_nodes, ge)


def mass_action(
    geom: ElementGeometry,
    elems: NDArray[np.int64],
    n_nodes: int,
    Q: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Consistent nodal load f_Q = M Q for batched nodal source fields."""
    Qe = Q[:, elems]
    fe = cached_einsum("eij,bej->bei", geom.mass, Qe)
    return scatter_add(elems, n_nodes, fe)


# -- assembly ----------------------------------------------------------------


def neumann_load(mesh: Mesh, neumann: Sequence[tuple[str, float]]) -> NDArray[np.float64]:
    """Integrated boundary-flux load: component i is integral(q_bar N_i) dS.

    Subtracted from f, so positive outward flux lowers the interior field.
    """
    out = np.zeros(mesh.n_nodes)
    for side, q_bar in neumann:
        ids = mesh.boundary_nodes(side)
        seg = np.linalg.norm(np.diff(mesh.coords[ids], axis=0), axis=1)
        # Linear shape functions along each edge: each endpoint gets half.
        out[ids[:-1]] += 0.5 * q_bar * seg
        out[ids[1:]] += 0.5 * q_bar * seg
    return out


def element_residual(
    Te: NDArray[np.float64],
    ke: NDArray[np.float64],
    Qe: NDArray[np.float64],
    N: NDArray[np.float64],
    B: NDArray[np.float64],
    detJw: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Single-element residual sum_g w detJ [B^T (N.k) B T - N (N.Q)].

    Parameters are nodal values (4,) plus quadrature-point shape data for
    this element: N (n_gp, 4), B (n_gp, 2, 4), detJw (n_gp,).
    """
    k_gp = N @ ke  # (g,)
    grad = np.einsum("gci,i->gc", B, Te)
    r = np.einsum("g,g,gc,gci->i", detJw, k_gp, grad, B)
    q_gp = N @ Qe
    r -= np.einsum("g,g,gi->i", detJw, q_gp, N)
    return r


def _uniform_k(bvp: ThermalBVP, T: NDArray[np.float64] | None) -> NDArray[np.float64]:
    if bvp.nonlinear is None:
        return bvp.k_nodal
    if T is None:
        raise ValueError("temperature state required for nonlinear conductivity")
    return bvp.nonlinear.k(T)


def load_vector(bvp: ThermalBVP, geom: ElementGeometry | None = None) -> NDArray[np.float64]:
    """Full load vector f = M Q - integral(q_bar N) dS."""
    geom = geom or cached_geometry(bvp.mesh)
    f = np.zeros(bvp.mesh.n_nodes)
    if bvp.q_source is not None:
        f = mass_action(geom, bvp.mesh.elems, bvp.mesh.n_nodes, bvp.q_source[None, :])[0]
    if bvp.neumann:
        f -= neumann_load(bvp.mesh, bvp.neumann)
    return f


def _assemble_k(mesh: Mesh, geom: ElementGeometry, k: NDArray[np.float64]) -> scipy.sparse.csr_matrix:
    """Sparse K(k) from the precomputed element slices."""
    ke = k[mesh.elems]  # (E, 4)
    Ke = cached_einsum("ea,eaij->eij", ke, geom.cond_blocks)
    rows = np.repeat(mesh.elems, 4, axis=1).ravel()
    cols = np.tile(mesh.elems, (1, 4)).ravel()
    K = scipy.sparse.coo_matrix((Ke.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return K.tocsr()


def assemble(bvp: ThermalBVP) -> AssembledSystem:
    """Assemble the linear system K(k) T = f with its free/fixed partition."""
    if bvp.nonlinear is not None:
        raise ValueError("assemble needs linear mode; nonlinear stiffness depends on T")
    geom = cached_geometry(bvp.mesh)
    K = _assemble_k(bvp.mesh, geom, bvp.k_nodal)
    f = load_vector(bvp, geom)
    return AssembledSystem(
        K=K,
        f=f,
        free=bvp.free_nodes,
        fixed=bvp.dirichlet_nodes,
        fixed_values=bvp.dirichlet_values,
    )


def residual(bvp: ThermalBVP, T: NDArray[np.float64]) -> NDArray[np.float64]:
    """Full residual r = K(k) T - f; free components vanish at the solution."""
    geom = cached_geometry(bvp.mesh)
    k = _uniform_k(bvp, T)
    KT = stiffness_action(geom, bvp.mesh.elems, bvp.mesh.n_nodes, k[None, :], T[None, :])[0]
    return KT - load_vector(bvp, geom)


# -- direct solvers ----------------------------------------------------------


def _banded_cholesky(K_ff: scipy.sparse.csr_matrix):
    """Upper-banded Cholesky factor of an SPD sparse matrix.

    On structured grids the free block keeps a narrow band, so banded
    factorization is the natural direct method and keeps golden runs
    deterministic.
    """
    coo = K_ff.tocoo()
    upper = coo.row <= coo.col
    rows, cols, data = coo.row[upper], coo.col[upper], coo.data[upper]
    bw = int((cols - rows).max()) if rows.size else 0
    ab = np.zeros((bw + 1, K_ff.shape[0]))
    ab[bw + rows - cols, cols] = data
    try:
        return scipy.linalg.cholesky_banded(ab, lower=False)
    except scipy.linalg.LinAlgError as err:
        raise WellPosednessError(f"reduced stiffness is not positive definite: {err}") from err


def solve_reduced(system: AssembledSystem) -> NDArray[np.float64]:
    """Direct solve of an assembled SPD system via banded Cholesky on the
    free block, honoring the fixed values."""
    K, f = system.K, system.f
    free, fixed = system.free, system.fixed
    rhs = f[free] - K[free][:, fixed] @ system.fixed_values
    cb = _banded_cholesky(K[free][:, free].tocsr())
    T = np.empty(K.shape[0])
    T[fixed] = system.fixed_values
    T[free] = scipy.linalg.cho_solve_banded((cb, False), rhs)
    return T


def solve_linear(bvp: ThermalBVP) -> NDArray[np.float64]:
    """Direct solve of the linear problem via banded Cholesky on K_ff."""
    return solve_reduced(assemble(bvp))


def solve_newton(
    bvp: ThermalBVP,
    tol: float = 1e-10,
    max_iter: int = 30,
    callback=None,
) -> NDArray[np.float64]:
    """Newton solve of the temperature-dependent problem r(T) = 0.

    Starts from the linear solution with conductivity frozen at the mean
    Dirichlet temperature. The tangent K + dr/dk diag(k'(T)) is nonsymmetric,
    so steps use a general sparse LU. Step halving guards against residual
    growth; failure to converge raises with the residual history attached.
    ``callback(rnorm)`` is invoked with each free-residual norm.
    """
    if bvp.nonlinear is None:
        raise ValueError("solve_newton requires a nonlinear conductivity law")
    law = bvp.nonlinear
    mesh, geom = bvp.mesh, cached_geometry(bvp.mesh)
    n = mesh.n_nodes
    free, fixed = bvp.free_nodes, bvp.dirichlet_nodes

    T_mean = float(np.mean(bvp.dirichlet_values))
    k0 = float(law.k(np.array([T_mean]))[0])
    if k0 <= 0:
        raise ValueError(f"k(T_mean) = {k0:.3e} is not positive; bad law parameters")
    start = ThermalBVP(
        mesh=mesh,
        k_nodal=np.full(n, k0),
        dirichlet_nodes=bvp.dirichlet_nodes,
        dirichlet_values=bvp.dirichlet_values,
        q_source=bvp.q_source,
        neumann=bvp.neumann,
    )
    T = solve_linear(start)

    f = load_vector(bvp, geom)
    history: list[float] = []
    for _ in range(max_iter):
        k = law.k(T)
        r = stiffness_action(geom, mesh.elems, n, k[None], T[None])[0] - f
        rnorm = float(np.linalg.norm(r[free]))
        history.append(rnorm)
        if callback is not None:
            callback(rnorm)
        if rnorm <= tol:
            return T
        K = _assemble_k(mesh, geom, k)
        D = conductivity_jacobian(bvp, T)
        Jt = (K + D @ scipy.sparse.diags(law.dk_dT(T))).tocsr()
        dT_f = scipy.sparse.linalg.spsolve(Jt[free][:, free].tocsc(), -r[free])
        # Halving line search on the free-residual norm.
        step = 1.0
        for _ in range(30):
            T_new = T.copy()
            T_new[free] += step * dT_f
            k_new = law.k(T_new)
            r_new = stiffness_action(geom, mesh.elems, n, k_new[None], T_new[None])[0] - f
            if np.linalg.norm(r_new[free]) < rnorm:
                break
            step *= 0.5
        else:
            raise NewtonConvergenceError(
                f"line search stalled at residual {rnorm:.3e}", history
            )
        T = T_new
    raise NewtonConvergenceError(
        f"no convergence in {max_iter} iterations; last residual {history[-1]:.3e}",
        history,
    )


def conductivity_jacobian(bvp: ThermalBVP, T: NDArray[np.float64]) -> scipy.sparse.csr_matrix:
    """Sparse dr/dk at state T: entry (i, j) is d r_i / d k_j.

    Symmetric in roles with K: (dr/dk) v = K(v) T for any nodal vector v.
    """
    mesh = bvp.mesh
    geom = cached_geometry(mesh)
    Te = T[mesh.elems]  # (E, 4)
    # d r_e[i] / d k_e[a] = (C[e, a] T_e)[i]
    De = cached_einsum("eaij,ej->eia", geom.cond_blocks, Te)  # (E, 4, 4) [i, a]
    rows = np.repeat(mesh.elems, 4, axis=1).ravel()
    cols = np.tile(mesh.elems, (1, 4)).ravel()
    D = scipy.sparse.coo_matrix(
        (De.reshape(mesh.n_elems, 16).ravel(), (rows, cols)),
        shape=(mesh.n_nodes, mesh.n_nodes),
    )
    return D.tocsr()


# -- post-processing ---------------------------------------------------------

_CORNERS = np.array([(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)])


def recover_flux(bvp: ThermalBVP, T: NDArray[np.float64]) -> NDArray[np.float64]:
    """Nodal heat flux q = -k grad(T), averaged over adjacent elements.

    Flux is evaluated at element corners (where it is discontinuous across
    elements) and arithmetic-averaged per node; returns shape (n_nodes, 2).
    """
    mesh = bvp.mesh
    k = _uniform_k(bvp, T)
    Nc = np.stack([shape_values(xi, eta) for xi, eta in _CORNERS])  # (4, 4)
    dNc = np.stack([shape_gradients(xi, eta) for xi, eta in _CORNERS])  # (4c, 4, 2)
    xe = mesh.coords[mesh.elems]
    J = np.einsum("cai,eaj->ecij", dNc, xe)
    Jinv = np.linalg.inv(J)
    Bc = np.einsum("ecij,caj->ecia", Jinv, dNc)  # (E, 4c, 2, 4)
    Te = T[mesh.elems]
    ke = k[mesh.elems]
    k_at = np.einsum("ca,ea->ec", Nc, ke)
    grad = np.einsum("ecia,ea->eci", Bc, Te)
    q_corner = -k_at[..., None] * grad  # (E, 4c, 2)

    q = np.zeros((mesh.n_nodes, 2))
    count = np.bincount(mesh.elems.ravel(), minlength=mesh.n_nodes)
    for comp in range(2):
        q[:, comp] = np.bincount(
            mesh.elems.ravel(), weights=q_corner[..., comp].ravel(), minlength=mesh.n_nodes
        )
    q /= count[:, None]
    return q


def relative_error(T_pred: NDArray[np.float64], T_ref: NDArray[np.float64]) -> float:
    """Percent l2 mismatch: 100 ||T_pred - T_ref|| / ||T_ref||."""
    T_pred = np.asarray(T_pred, dtype=float)
    T_ref = np.asarray(T_ref, dtype=float)
    if T_pred.shape != T_ref.shape:
        raise ValueError("shape mismatch")
    ref = np.linalg.norm(T_ref)
    if ref == 0.0:
        raise ValueError("reference field has zero norm")
    return float(100.0 * np.linalg.norm(T_pred - T_ref) / ref)
