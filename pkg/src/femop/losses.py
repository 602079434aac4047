"""Data-free training losses built from the FEM discretization.

All terms are evaluated per sample on batched nodal fields and return both
their values and the exact adjoints needed to train a network that predicts
the field: bar_T = dL/dT and, for the derivative-matching term, bar_G =
dL/d(dT/dc). The conductivity and the design tangent are functions of the
sample inputs only, never of the network parameters, so no k-adjoints are
needed here.

Terms:

* energy:      0.5 T^T K(k) T - T^T f          (stationary at the FEM solution)
* residual:    sum of squared free-DOF residuals
* dirichlet:   penalty w_db * sum (T - Tbar)^2 on constrained DOFs
* sensitivity: Frobenius norm of dr/dc = K dT/dc + (dr/dk) A on free rows,
               a Sobolev-style regularizer that also supervises derivatives
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from femop.mesh import ElementGeometry, Mesh, cached_geometry
from femop.thermal import (
    ThermalBVP,
    element_stiffness_batch,
    load_vector,
    scatter_add,
    stiffness_action,
)

PHYSICS_KINDS = ("energy", "residual")


@dataclass(frozen=True)
class LossWeights:
    """Composite weights: total = w_ph L_ph + w_bc L_bc + w_se L_se.

    w_db scales the squared boundary mismatch inside L_bc. With hard
    constraints the boundary values are exact by construction, so w_bc is
    forced to zero and L_bc drops out.
    """

    w_ph: float = 1.0
    w_bc: float = 1.0
    w_se: float = 0.0
    w_db: float = 10.0
    physics: str = "energy"
    hard_bc: bool = False

    def __post_init__(self):
        if self.physics not in PHYSICS_KINDS:
            raise ValueError(f"physics must be one of {PHYSICS_KINDS}, got {self.physics!r}")
        for name in ("w_ph", "w_bc", "w_se", "w_db"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
        if self.hard_bc:
            object.__setattr__(self, "w_bc", 0.0)
        if self.w_ph == 0 and self.w_bc == 0 and self.w_se == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class LossContext:
    """Frozen per-problem data shared by every loss evaluation.

    f and fixed_values may carry a batch axis when samples prescribe
    different loads or boundary values.
    """

    mesh: Mesh
    geom: ElementGeometry
    f: NDArray[np.float64]
    free: NDArray[np.int64]
    fixed: NDArray[np.int64]
    fixed_values: NDArray[np.float64]
    weights: LossWeights

    @property
    def free_mask(self) -> NDArray[np.bool_]:
        mask = np.zeros(self.mesh.n_nodes, dtype=bool)
        mask[self.free] = True
        return mask


def loss_context(bvp: ThermalBVP, weights: LossWeights, order: int = 2) -> LossContext:
    """Bundle mesh geometry, loads and constraint data for one problem."""
    geom = cached_geometry(bvp.mesh, order)
    return LossContext(
        mesh=bvp.mesh,
        geom=geom,
        f=load_vector(bvp, geom),
        free=bvp.free_nodes,
        fixed=bvp.dirichlet_nodes,
        fixed_values=bvp.dirichlet_values,
        weights=weights,
    )


# -- batched multi-direction kernels -------------------------------------------


def _scatter_add_multi(elems, n_nodes: int, contrib: NDArray[np.float64]) -> NDArray[np.float64]:
    """Sum per-element contributions (B, E, 4, M) into nodal (B, N, M)."""
    B, _, _, M = contrib.shape
    node = elems[None, :, :, None]
    flat = (
        (np.arange(B)[:, None, None, None] * n_nodes + node) * M
        + np.arange(M)[None, None, None, :]
    ).ravel()
    out = np.bincount(flat, weights=contrib.ravel(), minlength=B * n_nodes * M)
    return out.reshape(B, n_nodes, M)


def stiffness_action_multi(
    geom: ElementGeometry, elems, n_nodes: int, k: NDArray[np.float64], S: NDArray[np.float64]
) -> NDArray[np.float64]:
    """K(k) applied to every column of S: (B, N) x (B, N, M) -> (B, N, M)."""
    Ke = element_stiffness_batch(geom, elems, k)
    Se = S[:, elems, :]
    return _scatter_add_multi(elems, n_nodes, np.matmul(Ke, Se))


def _batched_tangent(A: NDArray[np.float64], B: int) -> NDArray[np.float64]:
    """Accept a shared (N, M) design tangent or per-sample (B, N, M)."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 2:
        return np.broadcast_to(A, (B, *A.shape))
    if A.ndim == 3 and A.shape[0] == B:
        return A
    raise ValueError(f"design tangent shape {A.shape} incompatible with batch {B}")


def residual_input_jacobian(
    ctx: LossContext,
    T: NDArray[np.float64],
    k: NDArray[np.float64],
    G: NDArray[np.float64],
    A: NDArray[np.float64],
) -> NDArray[np.float64]:
    """dr/dc = K(k) dT/dc + (dr/dk) A for batched samples, all rows.

    G is the predicted-field input-Jacobian dT/dc (zero rows on constrained
    DOFs under hard constraints); A maps design inputs to nodal conductivity.
    """
    mesh, geom = ctx.mesh, ctx.geom
    B = T.shape[0]
    Ae = _batched_tangent(A, B)[:, mesh.elems, :]
    DA = np.matmul(_conductivity_blocks_at(geom, mesh.elems, T), Ae)
    S = _scatter_add_multi(mesh.elems, mesh.n_nodes, DA)
    S += stiffness_action_multi(geom, mesh.elems, mesh.n_nodes, k, G)
    return S


def _conductivity_blocks_at(
    geom: ElementGeometry, elems, T: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Element blocks of dr/dk at the state T: D[b, e, i, a] = B_a[i, :] T_e.

    Shaped so a matmul against element-gathered tangents (B, E, 4, M)
    contracts the conductivity-node axis a.
    """
    E = geom.cond_blocks.shape[0]
    Te = T[:, elems]
    # (B, E, 16[a·4+i], 4[j]) @ (B, E, 4[j], 1) -> blocks indexed [a, i]
    flat = geom.cond_blocks.reshape(E, 16, 4)
    D = np.matmul(flat[None], Te[..., None])[..., 0].reshape(*Te.shape[:2], 4, 4)
    return D.transpose(0, 1, 3, 2)


# -- individual terms ------------------------------------------------------------


def loss_energy(ctx: LossContext, T: NDArray[np.float64], k: NDArray[np.float64]):
    """Discrete potential energy 0.5 T^T K T - T^T f per sample.

    Returns (values (B,), bar_T (B, N)). The gradient is the residual
    K T - f, so on free DOFs it vanishes exactly at the FEM solution.
    """
    KT = stiffness_action(ctx.geom, ctx.mesh.elems, ctx.mesh.n_nodes, k, T)
    f2 = np.broadcast_to(np.atleast_2d(ctx.f), T.shape)
    values = 0.5 * np.einsum("bi,bi->b", T, KT) - np.einsum("bi,bi->b", f2, T)
    bar_T = KT - ctx.f
    return values, bar_T


def loss_residual(ctx: LossContext, T: NDArray[np.float64], k: NDArray[np.float64]):
    """Sum of squared residuals over free DOFs, with exact T-adjoint."""
    r = stiffness_action(ctx.geom, ctx.mesh.elems, ctx.mesh.n_nodes, k, T) - ctx.f
    r_free = r * ctx.free_mask
    values = np.einsum("bi,bi->b", r_free, r_free)
    # d/dT sum r_free^2 = 2 K^T r_free; K is symmetric
    bar_T = 2.0 * stiffness_action(ctx.geom, ctx.mesh.elems, ctx.mesh.n_nodes, k, r_free)
    return values, bar_T


def loss_dirichlet(ctx: LossContext, T: NDArray[np.float64]):
    """Penalty w_db sum (T - Tbar)^2 on constrained DOFs."""
    diff = T[:, ctx.fixed] - ctx.fixed_values
    values = ctx.weights.w_db * np.einsum("bi,bi->b", diff, diff)
    bar_T = np.zeros_like(T)
    bar_T[:, ctx.fixed] = 2.0 * ctx.weights.w_db * diff
    return values, bar_T


def loss_sensitivity(
    ctx: LossContext,
    T: NDArray[np.float64],
    k: NDArray[np.float64],
    G: NDArray[np.float64],
    A: NDArray[np.float64],
):
    """Squared Frobenius norm of dr/dc on free rows, driving the network's
    input-Jacobian toward the true solution sensitivity.

    Returns (values (B,), bar_T (B, N), bar_G (B, N, M)).
    """
    mesh, geom = ctx.mesh, ctx.geom
    B = T.shape[0]
    S = residual_input_jacobian(ctx, T, k, G, A)
    S *= ctx.free_mask[None, :, None]
    values = np.einsum("bim,bim->b", S, S)
    bar_G = 2.0 * stiffness_action_multi(geom, mesh.elems, mesh.n_nodes, k, S)
    Ae = _batched_tangent(A, B)[:, mesh.elems, :]
    Se = S[:, mesh.elems, :]
    # same dr/dk blocks as the forward pass, contracted from the left:
    # bar_Te[j] = sum_{a,i} B_a[i, j] (S_e A_e^T)[i, a]
    E = geom.cond_blocks.shape[0]
    Y = np.matmul(Se, Ae.transpose(0, 1, 3, 2))  # (B, E, 4[i], 4[a])
    Yf = Y.transpose(0, 1, 3, 2).reshape(*Y.shape[:2], 1, 16)
    bar_Te = np.matmul(Yf, geom.cond_blocks.reshape(E, 16, 4)[None])[:, :, 0, :]
    bar_T = 2.0 * scatter_add(mesh.elems, mesh.n_nodes, bar_Te)
    return values, bar_T, bar_G


# -- composite --------------------------------------------------------------------


@dataclass(frozen=True)
class LossBreakdown:
    """Batch-mean values of the composite loss and its parts."""

    total: float
    physics: float
    dirichlet: float
    sensitivity: float
    per_sample: NDArray[np.float64] = field(repr=False)


def _check_finite(name: str, values: NDArray[np.float64]) -> None:
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise FloatingPointError(f"{name} loss is not finite (first bad sample {bad})")


def total_loss(
    ctx: LossContext,
    T: NDArray[np.float64],
    k: NDArray[np.float64],
    G: NDArray[np.float64] | None = None,
    A: NDArray[np.float64] | None = None,
):
    """Weighted composite loss, averaged over the batch.

    Returns (LossBreakdown, bar_T, bar_G); bar_G is None when the
    derivative-matching weight is zero. Non-finite terms raise immediately
    with the term named, so a diverging run aborts at the offending batch.
    """
    w = ctx.weights
    T = np.atleast_2d(T)
    k = np.atleast_2d(k)
    B = T.shape[0]

    bar_T = np.zeros_like(T)
    bar_G = None
    per_sample = np.zeros(B)
    physics_mean = dirichlet_mean = sensitivity_mean = 0.0

    if w.w_ph > 0:
        if w.physics == "energy":
            vals, g = loss_energy(ctx, T, k)
        else:
            vals, g = loss_residual(ctx, T, k)
        _check_finite(w.physics, vals)
        physics_mean = float(vals.mean())
        per_sample += w.w_ph * vals
        bar_T += (w.w_ph / B) * g

    if w.w_bc > 0:
        vals, g = loss_dirichlet(ctx, T)
        _check_finite("dirichlet", vals)
        dirichlet_mean = float(vals.mean())
        per_sample += w.w_bc * vals
        bar_T += (w.w_bc / B) * g

    if w.w_se > 0:
        if G is None or A is None:
            raise ValueError("sensitivity loss needs the field Jacobian G and design tangent A")
        vals, g_T, g_G = loss_sensitivity(ctx, T, k, G, A)
        _check_finite("sensitivity", vals)
        sensitivity_mean = float(vals.mean())
        per_sample += w.w_se * vals
        bar_T += (w.w_se / B) * g_T
        bar_G = (w.w_se / B) * g_G

    breakdown = LossBreakdown(
        total=float(per_sample.mean()),
        physics=physics_mean,
        dirichlet=dirichlet_mean,
        sensitivity=sensitivity_mean,
        per_sample=per_sample,
    )
    return breakdown, bar_T, bar_G
