"""Training loops: parametric operator learning, supervised regression on
FEM labels, and single-instance matrix-free solving.

All loops are plain-numpy Adam over the exact gradients supplied by the
network engine and the FEM loss adjoints. Epochs iterate seeded shuffles of
the sample set, so runs are bit-reproducible in serial mode.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from femop import losses, network, thermal
from femop.design import FourierDesign, design_to_nodal, fourier_basis, project, project_derivative
from femop.losses import LossContext, LossWeights
from femop.mesh import Mesh, cached_geometry
from femop.network import AdamState, DirichletScatter, MlpParams
from femop.thermal import ConductivityLaw, ThermalBVP


class TrainingDivergedError(RuntimeError):
    """Raised when a loss turns non-finite; carries epoch and history."""

    def __init__(self, message: str, epoch: int, history: "TrainHistory"):
        super().__init__(message)
        self.epoch = epoch
        self.history = history


@dataclass
class TrainHistory:
    """Per-epoch batch-mean loss values."""

    total: list[float] = field(default_factory=list)
    physics: list[float] = field(default_factory=list)
    dirichlet: list[float] = field(default_factory=list)
    sensitivity: list[float] = field(default_factory=list)
    seconds: float = 0.0

    def append(self, breakdown_means):
        total, physics, dirichlet, sensitivity = breakdown_means
        self.total.append(total)
        self.physics.append(physics)
        self.dirichlet.append(dirichlet)
        self.sensitivity.append(sensitivity)

    @property
    def epochs(self) -> int:
        return len(self.total)


# -- design-input field maps ----------------------------------------------------


def fourier_field_map(template: FourierDesign, mesh: Mesh):
    """Vectorized per-sample (k, A) for coefficient batches of one basis.

    The basis matrix is sample-independent, so k = project(C Phi^T) and the
    tangent is the projection derivative row-scaling the basis.
    """
    x, y = mesh.coords[:, 0], mesh.coords[:, 1]
    phi = fourier_basis(template, x, y)  # (N, M)
    spec = template.projection

    def fields(C: NDArray[np.float64]):
        raw = C @ phi.T
        k = project(spec, raw)
        A = project_derivative(spec, raw)[:, :, None] * phi[None, :, :]
        return k, A

    return fields


def nodal_field_map(mesh: Mesh, with_tangent: bool = False):
    """Samples are already physical nodal fields; the tangent is identity."""
    eye = np.eye(mesh.n_nodes) if with_tangent else None

    def fields(C: NDArray[np.float64]):
        return C, eye

    return fields


def scatter_for(bvp: ThermalBVP) -> DirichletScatter:
    """Hard-constraint output map for a thermal problem."""
    return DirichletScatter(
        n_total=bvp.mesh.n_nodes,
        free=bvp.free_nodes,
        fixed=bvp.dirichlet_nodes,
        fixed_values=bvp.dirichlet_values,
    )


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    return [perm[s : s + batch_size] for s in range(0, n, batch_size)]


# -- parametric training -----------------------------------------------------------


def train_parametric(
    params: MlpParams,
    ctx: LossContext,
    C: NDArray[np.float64],
    fields_fn,
    ds: DirichletScatter | None,
    epochs: int,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    callback=None,
) -> tuple[MlpParams, TrainHistory]:
    """Data-free training of c -> T on the composite FEM loss.

    C holds the sample inputs row-wise. fields_fn maps a batch of inputs to
    (k, A). With a DirichletScatter the network predicts free DOFs and the
    constrained values are exact (hard mode); with ds=None it predicts every
    node (soft mode, penalty active). Zero epochs returns the initial
    parameters untouched. A non-finite loss aborts with the epoch index.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    history = TrainHistory()
    state = AdamState.zeros(params)
    rng = np.random.default_rng(seed)
    needs_jac = ctx.weights.w_se > 0
    start = time.perf_counter()

    for epoch in range(epochs):
        sums = np.zeros(4)
        n_seen = 0
        for idx in _epoch_batches(len(C), batch_size, rng):
            C_b = C[idx]
            k_b, A_b = fields_fn(C_b)

            def loss_fn(y, J=None):
                if ds is None:
                    T, G = y, J
                else:
                    T = ds.scatter(y)
                    G = None
                    if J is not None:
                        G = np.zeros((T.shape[0], ctx.mesh.n_nodes, J.shape[2]))
                        G[:, ds.free, :] = J
                breakdown, bar_T, bar_G = losses.total_loss(ctx, T, k_b, G, A_b)
                bar_y = bar_T if ds is None else ds.free_part(bar_T)
                bar_J = None
                if bar_G is not None:
                    bar_J = bar_G if ds is None else bar_G[:, ds.free, :]
                loss_fn.breakdown = breakdown
                return breakdown.total, bar_y, bar_J

            try:
                _, grads = network.loss_gradient(params, C_b, loss_fn, with_jacobian=needs_jac)
            except FloatingPointError as err:
                history.seconds = time.perf_counter() - start
                raise TrainingDivergedError(
                    f"training diverged at epoch {epoch}: {err}", epoch, history
                ) from err
            b = loss_fn.breakdown
            sums += len(idx) * np.array([b.total, b.physics, b.dirichlet, b.sensitivity])
            n_seen += len(idx)
            params = network.adam_step(params, grads, state, lr=lr, betas=betas, eps=eps)
        history.append(sums / n_seen)
        if callback is not None:
            callback(epoch, params, history)
    history.seconds = time.perf_counter() - start
    return params, history


def train_data_driven(
    params: MlpParams,
    C: NDArray[np.float64],
    T_labels: NDArray[np.float64],
    ds: DirichletScatter | None,
    epochs: int,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[MlpParams, TrainHistory]:
    """Supervised baseline: mean squared error against reference fields.

    Labels are full nodal fields; the error is taken on the DOFs the
    network predicts (free DOFs in hard mode, all nodes otherwise).
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    T_labels = np.atleast_2d(np.asarray(T_labels, dtype=float))
    Y = T_labels if ds is None else T_labels[:, ds.free]
    history = TrainHistory()
    state = AdamState.zeros(params)
    rng = np.random.default_rng(seed)
    start = time.perf_counter()

    for epoch in range(epochs):
        sums = 0.0
        n_seen = 0
        for idx in _epoch_batches(len(C), batch_size, rng):
            Y_b = Y[idx]

            def loss_fn(y):
                diff = y - Y_b
                value = np.einsum("bi,bi->", diff, diff) / len(Y_b)
                return value, 2.0 * diff / len(Y_b)

            try:
                value, grads = network.loss_gradient(params, C[idx], loss_fn)
            except FloatingPointError as err:
                history.seconds = time.perf_counter() - start
                raise TrainingDivergedError(
                    f"training diverged at epoch {epoch}: {err}", epoch, history
                ) from err
            sums += len(idx) * value
            n_seen += len(idx)
            params = network.adam_step(params, grads, state, lr=lr, betas=betas, eps=eps)
        history.append((sums / n_seen, sums / n_seen, 0.0, 0.0))
    history.seconds = time.perf_counter() - start
    return params, history


# -- matrix-free single-instance solving ----------------------------------------------


def _nonlinear_residual_loss(ctx: LossContext, law: ConductivityLaw, T):
    """Sum of squared free residuals of K(k(T)) T = f, with exact T-adjoint."""
    mesh, geom = ctx.mesh, ctx.geom
    k = law.k(T)
    r = thermal.stiffness_action(geom, mesh.elems, mesh.n_nodes, k, T) - ctx.f
    r_free = r * ctx.free_mask
    values = np.einsum("bi,bi->b", r_free, r_free)
    # dr/dT = K(k) + diag(k'(T)) contraction: both terms via the same slices
    bar_T = 2.0 * (
        thermal.stiffness_action(geom, mesh.elems, mesh.n_nodes, k, r_free)
        + law.dk_dT(T)
        * thermal.conductivity_transpose_action(geom, mesh.elems, mesh.n_nodes, T, r_free)
    )
    return values, bar_T


def solve_matrix_free(
    bvp: ThermalBVP,
    epochs: int = 1000,
    hidden: tuple[int, ...] = (1,),
    activation: str = "swish",
    lr: float = 1e-3,
    seed: int = 0,
    weights: LossWeights | None = None,
) -> tuple[NDArray[np.float64], TrainHistory]:
    """Solve one BVP by minimizing its physics loss over network weights.

    The field is parameterized by a tiny MLP fed a constant input, with
    prescribed values imposed by construction; no global matrix is ever
    assembled or factorized. Linear problems descend the energy; nonlinear
    ones the squared residual of K(k(T)) T = f.
    """
    if weights is None:
        kind = "energy" if bvp.nonlinear is None else "residual"
        weights = LossWeights(physics=kind, hard_bc=True, w_ph=1.0)
    ctx = losses.loss_context(bvp, weights)
    ds = scatter_for(bvp)
    params = network.init_mlp(
        (1, *hidden, len(ds.free)), hidden_activation=activation, seed=seed
    )
    state = AdamState.zeros(params)
    c = np.ones((1, 1))
    history = TrainHistory()
    start = time.perf_counter()

    if bvp.nonlinear is None:
        k_row = np.atleast_2d(bvp.k_nodal)

        def loss_fn(y):
            T = ds.scatter(y)
            breakdown, bar_T, _ = losses.total_loss(ctx, T, k_row)
            loss_fn.breakdown = breakdown
            return breakdown.total, ds.free_part(bar_T)

    else:
        law = bvp.nonlinear

        def loss_fn(y):
            T = ds.scatter(y)
            values, bar_T = _nonlinear_residual_loss(ctx, law, T)
            value = float(values.mean())
            loss_fn.breakdown = (value, value, 0.0, 0.0)
            return value, ds.free_part(bar_T)

    for epoch in range(epochs):
        try:
            value, grads = network.loss_gradient(params, c, loss_fn)
        except FloatingPointError as err:
            history.seconds = time.perf_counter() - start
            raise TrainingDivergedError(
                f"matrix-free solve diverged at epoch {epoch}: {err}", epoch, history
            ) from err
        b = loss_fn.breakdown
        history.append(b if isinstance(b, tuple) else (b.total, b.physics, b.dirichlet, b.sensitivity))
        params = network.adam_step(params, grads, state, lr=lr)
    history.seconds = time.perf_counter() - start
    T = ds.scatter(network.forward(params, c))[0]
    return T, history


# -- evaluation -------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalTable:
    """Per-sample relative errors (percent) of field and recovered fluxes."""

    err_T: NDArray[np.float64]
    err_qx: NDArray[np.float64]
    err_qy: NDArray[np.float64]

    @property
    def mean_err(self) -> float:
        return float(self.err_T.mean())


def predict(params: MlpParams, ds: DirichletScatter | None, C) -> NDArray[np.float64]:
    """Network fields for a batch of inputs, constraints applied if hard."""
    y = network.forward(params, np.atleast_2d(C))
    return y if ds is None else ds.scatter(y)


def evaluate(mesh: Mesh, k: NDArray[np.float64], T_pred, T_ref) -> EvalTable:
    """Err = 100 ||T_pred - T_ref|| / ||T_ref||, plus flux-component errors.

    Fluxes are recovered with the same nodal-averaging rule for both fields,
    so the comparison isolates the surrogate error.
    """
    T_pred = np.atleast_2d(T_pred)
    T_ref = np.atleast_2d(T_ref)
    k = np.atleast_2d(k)
    n = len(T_pred)
    err_T = np.empty(n)
    err_qx = np.empty(n)
    err_qy = np.empty(n)
    for b in range(n):
        bvp = ThermalBVP(
            mesh=mesh,
            k_nodal=k[b],
            dirichlet_nodes=np.array([0]),
            dirichlet_values=np.array([0.0]),
        )
        q_pred = thermal.recover_flux(bvp, T_pred[b])
        q_ref = thermal.recover_flux(bvp, T_ref[b])
        err_T[b] = thermal.relative_error(T_pred[b], T_ref[b])
        err_qx[b] = _flux_component_error(q_pred[:, 0], q_ref[:, 0], q_ref)
        err_qy[b] = _flux_component_error(q_pred[:, 1], q_ref[:, 1], q_ref)
    return EvalTable(err_T=err_T, err_qx=err_qx, err_qy=err_qy)


def _flux_component_error(pred, ref, q_ref) -> float:
    """Percent error of one flux component.

    A component that vanishes in the reference (a purely one-directional
    flow) would make the componentwise ratio meaningless, so the overall
    flux magnitude takes over as denominator in that case.
    """
    denom = np.linalg.norm(ref)
    scale = np.linalg.norm(q_ref)
    if denom <= 1e-9 * scale:
        denom = scale
    if denom == 0.0:
        return 0.0 if np.linalg.norm(pred) == 0.0 else np.inf
    return float(100.0 * np.linalg.norm(pred - ref) / denom)
