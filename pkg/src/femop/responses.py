"""Quantities of interest on solved fields and their design sensitivities.

The responses are integrated squared flux components,

    R(c) = integral over the domain of (k dT/dxi)^2  -  offset,

with the conductivity interpolated nodally inside each element. Three
sensitivity routes are provided:

* adjoint:  one extra solve regardless of the number of design inputs
* direct:   one solve per design input (the oracle the adjoint is checked
            against)
* network:  no solves at all, combining the surrogate's input-Jacobian with
            the analytic partials
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from femop.mesh import Mesh, cached_geometry
from femop import thermal
from femop.thermal import ThermalBVP


@dataclass(frozen=True)
class FluxResponse:
    """Integral of the squared flux component along ``axis``, minus offset."""

    axis: int
    offset: float = 0.0

    def __post_init__(self):
        if self.axis not in (0, 1):
            raise ValueError("axis must be 0 (x) or 1 (y)")


# The two responses driving the design studies: squared transverse flux,
# and squared longitudinal flux measured against a reference level.
SQ_FLUX_Y = FluxResponse(axis=1)
SQ_FLUX_X_SHIFTED = FluxResponse(axis=0, offset=0.125)


def _gauss_states(resp: FluxResponse, mesh: Mesh, k, T, order: int):
    geom = cached_geometry(mesh, order)
    ke = k[mesh.elems]
    Te = T[mesh.elems]
    k_gp = np.einsum("ga,ea->eg", geom.N, ke)
    grad = np.einsum("egj,ej->eg", geom.B[:, :, resp.axis, :], Te)
    return geom, k_gp, grad


def eval_response(resp: FluxResponse, mesh: Mesh, k, T, order: int = 2) -> float:
    """R = sum over Gauss points of w detJ (k_gp * dT/dxi)^2 - offset."""
    geom, k_gp, grad = _gauss_states(resp, mesh, k, T, order)
    flux_sq = (k_gp * grad) ** 2
    return float(np.einsum("eg,eg->", geom.detJw, flux_sq)) - resp.offset


def response_partials(resp: FluxResponse, mesh: Mesh, k, T, order: int = 2):
    """(value, dR/dT, dR/dk), both partials as nodal vectors."""
    geom, k_gp, grad = _gauss_states(resp, mesh, k, T, order)
    q = k_gp * grad
    value = float(np.einsum("eg,eg,eg->", geom.detJw, q, q)) - resp.offset
    # d/dT_e: through the gradient; d/dk_e: through the interpolated k
    wq = 2.0 * geom.detJw * q
    dT_e = np.einsum("eg,eg,egj->ej", wq, k_gp, geom.B[:, :, resp.axis, :])
    dk_e = np.einsum("eg,eg,ga->ea", wq, grad, geom.N)
    dT = thermal.scatter_add(mesh.elems, mesh.n_nodes, dT_e[None])[0]
    dk = thermal.scatter_add(mesh.elems, mesh.n_nodes, dk_e[None])[0]
    return value, dT, dk


def _solver_factor(system: thermal.AssembledSystem):
    K_ff = system.K[system.free][:, system.free].tocsr()
    return thermal._banded_cholesky(K_ff)


def adjoint_sensitivity(
    resp: FluxResponse, bvp: ThermalBVP, T, A, order: int = 2
) -> tuple[float, NDArray[np.float64]]:
    """dR/dc via one adjoint solve: K lam = -dR/dT on free DOFs.

    A is the design tangent dk/dc, shape (n_nodes, M). Returns (value, dRdc).
    """
    value, dT, dk = response_partials(resp, bvp.mesh, bvp.k_nodal, T, order)
    system = thermal.assemble(bvp)
    factor = _solver_factor(system)
    lam = np.zeros(bvp.mesh.n_nodes)
    lam[system.free] = scipy.linalg.cho_solve_banded((factor, False), -dT[system.free])
    D = thermal.conductivity_jacobian(bvp, T)
    dRdc = (dk + D.T @ lam) @ A
    return value, dRdc


def direct_sensitivity(
    resp: FluxResponse, bvp: ThermalBVP, T, A, order: int = 2
) -> tuple[float, NDArray[np.float64]]:
    """dR/dc via one forward solve per design input; adjoint oracle."""
    value, dT, dk = response_partials(resp, bvp.mesh, bvp.k_nodal, T, order)
    system = thermal.assemble(bvp)
    factor = _solver_factor(system)
    D = thermal.conductivity_jacobian(bvp, T)
    rhs = -(D @ A)[system.free]  # (n_free, M)
    dT_dc = np.zeros((bvp.mesh.n_nodes, A.shape[1]))
    dT_dc[system.free] = scipy.linalg.cho_solve_banded((factor, False), rhs)
    dRdc = dT @ dT_dc + dk @ A
    return value, dRdc


def network_sensitivity(
    resp: FluxResponse, mesh: Mesh, k, T, G, A, order: int = 2
) -> tuple[float, NDArray[np.float64]]:
    """dR/dc from a surrogate's input-Jacobian G = dT/dc: no linear solves.

    The state T and Jacobian G come from the trained network (fixed rows of
    G are zero under hard constraints); only dense contractions remain.
    """
    value, dT, dk = response_partials(resp, mesh, k, T, order)
    return value, dT @ G + dk @ A
