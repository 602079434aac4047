"""Gradient-projection design optimization with active-set handling.

The update projects the objective gradient onto the tangent space of the
active constraints and adds a first-order feasibility correction:

    c <- c - alpha (I - P (P^T P)^-1 P^T) dJ/dc - P (P^T P)^-1 g_a

with P holding the active-constraint gradients column-wise. Two nested
analysis-and-design drivers share this core: a solver-based mode computing
adjoint sensitivities per iterate, and a surrogate mode that retrains a
network at each iterate (warm-started) and reads sensitivities off its
input-Jacobian without linear solves.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from femop import losses, network, responses, thermal, training
from femop.design import FourierDesign, design_to_nodal
from femop.losses import LossWeights
from femop.mesh import Mesh
from femop.network import MlpParams
from femop.responses import FluxResponse
from femop.thermal import ThermalBVP

CONSTRAINT_KINDS = ("eq", "ineq")


class OptimizationDivergedError(RuntimeError):
    """Non-finite objective or constraint; carries the state at failure."""

    def __init__(self, message: str, state: "OptimState"):
        super().__init__(message)
        self.state = state


@dataclass
class OptimRecord:
    iteration: int
    objective: float
    constraints: NDArray[np.float64]
    step_norm: float
    primal_ms: float = 0.0
    sensitivity_ms: float = 0.0
    update_ms: float = 0.0


@dataclass
class OptimState:
    """Current design vector, step size, active set and iteration history."""

    c: NDArray[np.float64]
    alpha: float
    active: NDArray[np.int64] = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    history: list[OptimRecord] = field(default_factory=list)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


def detect_active(kinds, values, tol: float = 1e-6) -> NDArray[np.int64]:
    """Active set: equalities always, inequalities g >= -tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    active = []
    for j, (kind, g) in enumerate(zip(kinds, values)):
        if kind not in CONSTRAINT_KINDS:
            raise ValueError(f"constraint kind must be one of {CONSTRAINT_KINDS}")
        if kind == "eq" or g >= -tol:
            active.append(j)
    return np.array(active, dtype=np.int64)


def _gram_solve(P: NDArray[np.float64], rhs: NDArray[np.float64]) -> NDArray[np.float64]:
    PtP = P.T @ P
    cond = np.linalg.cond(PtP) if PtP.size else 0.0
    if not np.isfinite(cond) or cond > 1e12:
        warnings.warn("active-constraint gradients are rank deficient; using pseudo-inverse")
        return np.linalg.pinv(PtP) @ rhs
    return np.linalg.solve(PtP, rhs)


def projection_matrix(P: NDArray[np.float64]) -> NDArray[np.float64]:
    """I - P (P^T P)^-1 P^T, the projector onto the active tangent space."""
    M = P.shape[0]
    if P.size == 0:
        return np.eye(M)
    return np.eye(M) - P @ _gram_solve(P, P.T)


def projection_step(
    c: NDArray[np.float64],
    alpha: float,
    dJ_dc: NDArray[np.float64],
    P: NDArray[np.float64],
    g_active: NDArray[np.float64],
) -> NDArray[np.float64]:
    """One update: projected descent plus feasibility correction."""
    if P.size == 0:
        return c - alpha * dJ_dc
    coef_grad = _gram_solve(P, P.T @ dJ_dc)
    coef_corr = _gram_solve(P, g_active)
    return c - alpha * (dJ_dc - P @ coef_grad) - P @ coef_corr


def minimize_projected(
    objective,
    constraints,
    c0: NDArray[np.float64],
    alpha: float,
    iters: int,
    tol: float = 1e-6,
    maximize: bool = False,
    callback=None,
) -> OptimState:
    """Generic driver: objective(c) -> (J, dJ/dc); constraints(c) ->
    (values, gradient columns (M, n_con), kinds) or None when unconstrained.

    Maximization negates the objective and its gradient. Stops at the
    iteration cap or when ||step|| < 1e-6 (1 + ||c||).
    """
    state = OptimState(c=np.asarray(c0, dtype=float).copy(), alpha=alpha)
    sign = -1.0 if maximize else 1.0
    for it in range(iters):
        J, dJ = objective(state.c)
        if constraints is None:
            values = np.empty(0)
            grads = np.empty((len(state.c), 0))
            kinds = ()
        else:
            values, grads, kinds = constraints(state.c)
            values = np.asarray(values, dtype=float)
        if not np.isfinite(J) or not np.all(np.isfinite(values)):
            raise OptimizationDivergedError(
                f"non-finite objective or constraint at iteration {it}: "
                f"J={J!r}, g={values!r}, c={state.c!r}",
                state,
            )
        state.active = detect_active(kinds, values, tol)
        c_new = projection_step(
            state.c, alpha, sign * np.asarray(dJ, dtype=float),
            grads[:, state.active], values[state.active],
        )
        step = float(np.linalg.norm(c_new - state.c))
        state.history.append(
            OptimRecord(iteration=it, objective=float(J), constraints=values, step_norm=step)
        )
        state.c = c_new
        if callback is not None:
            callback(it, state)
        if step < 1e-6 * (1.0 + float(np.linalg.norm(state.c))):
            break
    return state


# -- nested analysis and design on the thermal problem ---------------------------


@dataclass(frozen=True)
class FluxConstraint:
    """Response held at zero (eq) or kept nonpositive (ineq)."""

    resp: FluxResponse
    kind: str = "eq"

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise ValueError(f"kind must be one of {CONSTRAINT_KINDS}")


@dataclass(frozen=True)
class DesignProblem:
    """Flux-response optimization over a projected Fourier conductivity."""

    mesh: Mesh
    template: FourierDesign
    objective: FluxResponse
    constraints: tuple[FluxConstraint, ...] = ()
    left: float = 1.0
    right: float = 0.1
    maximize: bool = True

    def bvp_for(self, k: NDArray[np.float64]) -> ThermalBVP:
        return ThermalBVP.with_side_temperatures(
            self.mesh, k, left=self.left, right=self.right
        )


def _fem_oracle(problem: DesignProblem):
    """Per-iterate primal solve plus adjoint sensitivities for J and g."""
    state = {}

    def compute(c):
        t0 = time.perf_counter()
        design = replace(problem.template, c=c)
        k, A = design_to_nodal(design, problem.mesh)
        bvp = problem.bvp_for(k)
        T = thermal.solve_linear(bvp)
        t1 = time.perf_counter()
        J, dJ = responses.adjoint_sensitivity(problem.objective, bvp, T, A)
        g = np.empty(len(problem.constraints))
        dg = np.empty((len(c), len(problem.constraints)))
        for j, con in enumerate(problem.constraints):
            g[j], dg[:, j] = responses.adjoint_sensitivity(con.resp, bvp, T, A)
        t2 = time.perf_counter()
        state["primal_ms"] = 1e3 * (t1 - t0)
        state["sensitivity_ms"] = 1e3 * (t2 - t1)
        return J, dJ, g, dg

    return compute, state


def _surrogate_oracle(
    problem: DesignProblem,
    hidden: tuple[int, ...],
    epochs_per_iter: int,
    lr: float,
    seed: int,
):
    """Per-iterate warm-started retraining; sensitivities from the network
    input-Jacobian, no linear solves."""
    mesh = problem.mesh
    bvp0 = problem.bvp_for(np.ones(mesh.n_nodes))
    ctx = losses.loss_context(bvp0, LossWeights(hard_bc=True, w_se=1.0))
    ds = training.scatter_for(bvp0)
    fields = training.fourier_field_map(problem.template, mesh)
    box = {
        "params": network.init_mlp(
            (len(problem.template.c), *hidden, len(ds.free)), seed=seed
        )
    }

    def compute(c):
        t0 = time.perf_counter()
        box["params"], _ = training.train_parametric(
            box["params"], ctx, c[None, :], fields, ds,
            epochs=epochs_per_iter, batch_size=1, lr=lr, seed=seed,
        )
        params = box["params"]
        T = training.predict(params, ds, c)[0]
        t1 = time.perf_counter()
        k, A = fields(c[None, :])
        G = np.zeros((mesh.n_nodes, len(c)))
        G[ds.free] = network.input_jacobian(params, c)
        J, dJ = responses.network_sensitivity(problem.objective, mesh, k[0], T, G, A[0])
        g = np.empty(len(problem.constraints))
        dg = np.empty((len(c), len(problem.constraints)))
        for j, con in enumerate(problem.constraints):
            g[j], dg[:, j] = responses.network_sensitivity(con.resp, mesh, k[0], T, G, A[0])
        t2 = time.perf_counter()
        box["primal_ms"] = 1e3 * (t1 - t0)
        box["sensitivity_ms"] = 1e3 * (t2 - t1)
        return J, dJ, g, dg

    return compute, box


def optimize_nand(
    problem: DesignProblem,
    mode: str = "fem",
    iters: int = 100,
    alpha: float = 1e-2,
    tol: float = 1e-6,
    hidden: tuple[int, ...] = (32,),
    epochs_per_iter: int = 200,
    lr: float = 1e-3,
    seed: int = 0,
    callback=None,
) -> tuple[OptimState, FourierDesign]:
    """Nested analysis and design: full state evaluation inside every
    design iteration, so intermediate designs stay physically meaningful.

    mode "fem" runs direct solves with adjoint sensitivities; mode "fol"
    retrains the surrogate at each iterate (weights carried over) and uses
    its Jacobian-based sensitivities. Returns (state, final design).
    """
    if mode == "fem":
        compute, phase = _fem_oracle(problem)
    elif mode == "fol":
        compute, phase = _surrogate_oracle(problem, hidden, epochs_per_iter, lr, seed)
    else:
        raise ValueError("mode must be 'fem' or 'fol'")

    kinds = tuple(con.kind for con in problem.constraints)
    sign = -1.0 if problem.maximize else 1.0
    state = OptimState(c=problem.template.c.copy(), alpha=alpha)

    for it in range(iters):
        J, dJ, g, dg = compute(state.c)
        if not np.isfinite(J) or not np.all(np.isfinite(g)):
            raise OptimizationDivergedError(
                f"non-finite response at iteration {it}: J={J!r}, g={g!r}, c={state.c!r}",
                state,
            )
        t0 = time.perf_counter()
        state.active = detect_active(kinds, g, tol)
        c_new = projection_step(state.c, alpha, sign * dJ, dg[:, state.active], g[state.active])
        step = float(np.linalg.norm(c_new - state.c))
        update_ms = 1e3 * (time.perf_counter() - t0)
        state.history.append(
            OptimRecord(
                iteration=it,
                objective=float(J),
                constraints=g,
                step_norm=step,
                primal_ms=phase.get("primal_ms", 0.0),
                sensitivity_ms=phase.get("sensitivity_ms", 0.0),
                update_ms=update_ms,
            )
        )
        state.c = c_new
        if callback is not None:
            callback(it, state)
        if step < 1e-6 * (1.0 + float(np.linalg.norm(state.c))):
            break
    return state, replace(problem.template, c=state.c)
