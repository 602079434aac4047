"""Dense feed-forward networks with exact input-Jacobians, in plain numpy.

The training losses downstream need two things beyond a standard MLP:

* the network's input-Jacobian dy/dc, propagated analytically alongside the
  forward pass (no finite differences), and
* parameter gradients of losses that *contain* that Jacobian, which requires
  the mixed second derivatives d2y/(dtheta dc). The reverse pass here
  therefore accepts adjoints for both the outputs and the Jacobian and
  carries the activation second-derivative terms exactly.

Shapes are batched throughout: inputs (B, M), outputs (B, N), Jacobians
(B, N, M). Everything is float64 and deterministic in serial mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

ACTIVATIONS = ("tanh", "swish", "sigmoid", "linear")


def _sigmoid(u):
    pos = 1.0 / (1.0 + np.exp(-np.clip(u, 0.0, None)))
    ex = np.exp(np.clip(u, None, 0.0))
    return np.where(u >= 0, pos, ex / (1.0 + ex))


def activation(kind: str, u):
    """Value a(u), first and second derivative a'(u), a''(u)."""
    if kind == "tanh":
        t = np.tanh(u)
        d1 = 1.0 - t * t
        return t, d1, -2.0 * t * d1
    if kind == "sigmoid":
        s = _sigmoid(u)
        d1 = s * (1.0 - s)
        return s, d1, d1 * (1.0 - 2.0 * s)
    if kind == "swish":
        s = _sigmoid(u)
        d1 = s * (1.0 + u * (1.0 - s))
        d2 = s * (1.0 - s) * (2.0 + u * (1.0 - 2.0 * s))
        return u * s, d1, d2
    if kind == "linear":
        return u, np.ones_like(u), np.zeros_like(u)
    raise ValueError(f"unknown activation {kind!r}; choose from {ACTIVATIONS}")


@dataclass(frozen=True)
class MlpParams:
    """Layer weights W^l (n_l, n_{l-1}), biases b^l (n_l,), activation tags.

    The final layer is always linear so outputs cover arbitrary nodal value
    ranges. Optional input_offset/input_scale standardize inputs as
    (c - offset) / scale before the first layer (off by default).
    """

    weights: tuple[NDArray[np.float64], ...]
    biases: tuple[NDArray[np.float64], ...]
    activations: tuple[str, ...]
    input_offset: NDArray[np.float64] | None = None
    input_scale: NDArray[np.float64] | None = None

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have equal length")
        if not self.weights:
            raise ValueError("need at least one layer")
        for l, (W, b, a) in enumerate(zip(self.weights, self.biases, self.activations)):
            if a not in ACTIVATIONS:
                raise ValueError(f"layer {l}: unknown activation {a!r}")
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {l}: inconsistent W/b shapes {W.shape}, {b.shape}")
            if l > 0 and W.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l}: input dim {W.shape[1]} != previous output")
        if self.activations[-1] != "linear":
            raise ValueError("final layer must be linear")
        for scale in (self.input_offset, self.input_scale):
            if scale is not None and scale.shape != (self.in_size,):
                raise ValueError("normalization arrays must match the input size")

    @property
    def in_size(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_size(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def n_parameters(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))


def init_mlp(
    sizes: tuple[int, ...],
    hidden_activation: str = "swish",
    seed: int = 0,
    input_offset=None,
    input_scale=None,
) -> MlpParams:
    """Glorot-uniform initialized MLP: sizes = (M, h1, ..., N).

    Hidden layers share one activation; the head is linear with zero bias.
    """
    if len(sizes) < 2:
        raise ValueError("sizes needs input and output dims at least")
    rng = np.random.default_rng(seed)
    weights, biases, acts = [], [], []
    for l in range(len(sizes) - 1):
        fan_in, fan_out = sizes[l], sizes[l + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
        acts.append("linear" if l == len(sizes) - 2 else hidden_activation)
    return MlpParams(
        weights=tuple(weights),
        biases=tuple(biases),
        activations=tuple(acts),
        input_offset=None if input_offset is None else np.asarray(input_offset, dtype=float),
        input_scale=None if input_scale is None else np.asarray(input_scale, dtype=float),
    )


def _normalize(params: MlpParams, c: NDArray[np.float64]):
    if params.input_offset is not None:
        c = c - params.input_offset
    if params.input_scale is not None:
        c = c / params.input_scale
    return c


def forward(params: MlpParams, c: NDArray[np.float64]) -> NDArray[np.float64]:
    """MLP evaluation for inputs (..., M) -> (..., N)."""
    z = _normalize(params, np.asarray(c, dtype=float))
    for W, b, kind in zip(params.weights, params.biases, params.activations):
        z, _, _ = activation(kind, z @ W.T + b)
    return z


@dataclass
class ForwardCache:
    """Intermediate states kept for the reverse pass."""

    z: list  # z^0 .. z^L, activations per layer, (B, n_l)
    u: list  # u^1 .. u^L, preactivations, (B, n_l)
    jac: list | None  # J^0 .. J^L input-Jacobians (B, n_l, M), when tracked


def forward_pass(params: MlpParams, c: NDArray[np.float64], with_jacobian: bool = False) -> ForwardCache:
    """Forward evaluation keeping caches; optionally propagates dz/dc."""
    c = np.atleast_2d(np.asarray(c, dtype=float))
    B, M = c.shape
    z = _normalize(params, c)
    zs, us = [z], []
    jacs = None
    if with_jacobian:
        J = np.broadcast_to(np.eye(M), (B, M, M)).copy()
        if params.input_scale is not None:
            J = J / params.input_scale[None, :, None]
        jacs = [J]
    for W, b, kind in zip(params.weights, params.biases, params.activations):
        u = zs[-1] @ W.T + b
        z, d1, _ = activation(kind, u)
        us.append(u)
        zs.append(z)
        if with_jacobian:
            P = np.einsum("ij,bjm->bim", W, jacs[-1])
            jacs.append(d1[..., None] * P)
    return ForwardCache(z=zs, u=us, jac=jacs)


def input_jacobian(params: MlpParams, c: NDArray[np.float64]) -> NDArray[np.float64]:
    """Exact dy/dc, shape (B, N, M) (or (N, M) for a single input)."""
    single = np.asarray(c).ndim == 1
    cache = forward_pass(params, c, with_jacobian=True)
    J = cache.jac[-1]
    return J[0] if single else J


@dataclass(frozen=True)
class MlpGrads:
    """Parameter gradients, same layout as MlpParams."""

    weights: tuple[NDArray[np.float64], ...]
    biases: tuple[NDArray[np.float64], ...]

    def __add__(self, other: "MlpGrads") -> "MlpGrads":
        return MlpGrads(
            weights=tuple(a + b for a, b in zip(self.weights, other.weights)),
            biases=tuple(a + b for a, b in zip(self.biases, other.biases)),
        )

    def scaled(self, s: float) -> "MlpGrads":
        return MlpGrads(
            weights=tuple(s * W for W in self.weights),
            biases=tuple(s * b for b in self.biases),
        )

    def norm(self) -> float:
        total = sum(float(np.sum(W * W)) for W in self.weights)
        total += sum(float(np.sum(b * b)) for b in self.biases)
        return float(np.sqrt(total))


def zero_grads(params: MlpParams) -> MlpGrads:
    return MlpGrads(
        weights=tuple(np.zeros_like(W) for W in params.weights),
        biases=tuple(np.zeros_like(b) for b in params.biases),
    )


def backprop(
    params: MlpParams,
    cache: ForwardCache,
    bar_y: NDArray[np.float64],
    bar_J: NDArray[np.float64] | None = None,
) -> MlpGrads:
    """Reverse pass for a scalar loss with adjoints bar_y = dL/dy and,
    optionally, bar_J = dL/d(dy/dc).

    The Jacobian path carries mixed second derivatives: with
    P^l = W^l J^{l-1} and J^l = a'(u^l) * P^l,

        bar_u^l += a''(u^l) * sum_j bar_J^l * P^l      (elementwise in rows)
        bar_P^l  = a'(u^l) * bar_J^l
        bar_W^l += bar_u^l (x) z^{l-1} + bar_P^l (J^{l-1})^T
        bar_J^{l-1} = (W^l)^T bar_P^l

    Gradients are summed over the batch.
    """
    if bar_J is not None and cache.jac is None:
        raise ValueError("cache lacks Jacobians; run forward_pass(with_jacobian=True)")
    bar_z = np.atleast_2d(np.asarray(bar_y, dtype=float))
    bar_Jl = None if bar_J is None else np.asarray(bar_J, dtype=float)
    dWs: list = [None] * params.n_layers
    dbs: list = [None] * params.n_layers
    for l in range(params.n_layers - 1, -1, -1):
        W = params.weights[l]
        kind = params.activations[l]
        _, d1, d2 = activation(kind, cache.u[l])
        bar_u = d1 * bar_z
        bar_P = None
        if bar_Jl is not None:
            P = np.einsum("ij,bjm->bim", W, cache.jac[l])
            bar_u = bar_u + d2 * np.einsum("bim,bim->bi", bar_Jl, P)
            bar_P = d1[..., None] * bar_Jl
        dW = np.einsum("bi,bj->ij", bar_u, cache.z[l])
        if bar_P is not None:
            dW = dW + np.einsum("bim,bjm->ij", bar_P, cache.jac[l])
        dWs[l] = dW
        dbs[l] = bar_u.sum(axis=0)
        if l > 0:
            bar_z = bar_u @ W
            bar_Jl = None if bar_P is None else np.einsum("ij,bim->bjm", W, bar_P)
    return MlpGrads(weights=tuple(dWs), biases=tuple(dbs))


def loss_gradient(params: MlpParams, c: NDArray[np.float64], loss_fn, with_jacobian: bool = False):
    """Exact parameter gradient of a scalar loss of the network outputs.

    loss_fn receives the outputs y (B, N) — and the input-Jacobian J
    (B, N, M) when ``with_jacobian`` — and must return
    (value, bar_y, bar_J). bar_J may be None. Returns (value, MlpGrads).

    Raises on a non-finite loss so training aborts at the offending batch.
    """
    cache = forward_pass(params, c, with_jacobian=with_jacobian)
    if with_jacobian:
        value, bar_y, bar_J = loss_fn(cache.z[-1], cache.jac[-1])
    else:
        out = loss_fn(cache.z[-1])
        value, bar_y, bar_J = (*out, None) if len(out) == 2 else out
    if not np.isfinite(value):
        raise FloatingPointError(f"loss is not finite: {value!r}")
    return float(value), backprop(params, cache, bar_y, bar_J)


@dataclass(frozen=True)
class DirichletScatter:
    """Places network outputs on free DOFs and prescribed values elsewhere.

    fixed_values may be a single vector or per-sample rows (B, n_fixed);
    the fixed entries of the scattered field are bit-equal to it.
    """

    n_total: int
    free: NDArray[np.int64]
    fixed: NDArray[np.int64]
    fixed_values: NDArray[np.float64]

    def __post_init__(self):
        free = np.asarray(self.free, dtype=np.int64)
        fixed = np.asarray(self.fixed, dtype=np.int64)
        if len(np.intersect1d(free, fixed)) != 0:
            raise ValueError("free and fixed sets overlap")
        if len(free) + len(fixed) != self.n_total:
            raise ValueError("free + fixed must partition all DOFs")
        object.__setattr__(self, "free", free)
        object.__setattr__(self, "fixed", fixed)
        object.__setattr__(self, "fixed_values", np.asarray(self.fixed_values, dtype=float))

    def scatter(self, y_free: NDArray[np.float64]) -> NDArray[np.float64]:
        """(B, n_free) network outputs -> (B, n_total) nodal fields."""
        y_free = np.atleast_2d(y_free)
        B = y_free.shape[0]
        out = np.empty((B, self.n_total))
        out[:, self.free] = y_free
        out[:, self.fixed] = self.fixed_values
        return out

    def free_part(self, bar_T: NDArray[np.float64]) -> NDArray[np.float64]:
        """Adjoint of scatter: keep the free columns."""
        return np.atleast_2d(bar_T)[:, self.free]


def scatter(y_free: NDArray[np.float64], ds: DirichletScatter) -> NDArray[np.float64]:
    return ds.scatter(y_free)


# -- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    t: int
    m_w: list
    v_w: list
    m_b: list
    v_b: list

    @classmethod
    def zeros(cls, params: MlpParams) -> "AdamState":
        return cls(
            t=0,
            m_w=[np.zeros_like(W) for W in params.weights],
            v_w=[np.zeros_like(W) for W in params.weights],
            m_b=[np.zeros_like(b) for b in params.biases],
            v_b=[np.zeros_like(b) for b in params.biases],
        )


def adam_step(
    params: MlpParams,
    grads: MlpGrads,
    state: AdamState,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> MlpParams:
    """One bias-corrected Adam update; mutates state, returns new params."""
    b1, b2 = betas
    state.t += 1
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    new_w, new_b = [], []
    for i, (W, g) in enumerate(zip(params.weights, grads.weights)):
        state.m_w[i] = b1 * state.m_w[i] + (1 - b1) * g
        state.v_w[i] = b2 * state.v_w[i] + (1 - b2) * g * g
        new_w.append(W - lr * (state.m_w[i] / corr1) / (np.sqrt(state.v_w[i] / corr2) + eps))
    for i, (b, g) in enumerate(zip(params.biases, grads.biases)):
        state.m_b[i] = b1 * state.m_b[i] + (1 - b1) * g
        state.v_b[i] = b2 * state.v_b[i] + (1 - b2) * g * g
        new_b.append(b - lr * (state.m_b[i] / corr1) / (np.sqrt(state.v_b[i] / corr2) + eps))
    return replace(params, weights=tuple(new_w), biases=tuple(new_b))


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, params: MlpParams, metadata: dict | None = None) -> None:
    """Lossless single-file container: weights, biases, tags, JSON metadata."""
    arrays = {}
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"W{l}"] = W
        arrays[f"b{l}"] = b
    arrays["activations"] = np.array(params.activations)
    if params.input_offset is not None:
        arrays["input_offset"] = params.input_offset
    if params.input_scale is not None:
        arrays["input_scale"] = params.input_scale
    arrays["metadata"] = np.frombuffer(
        json.dumps(metadata or {}, sort_keys=True).encode(), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[MlpParams, dict]:
    """Inverse of save_checkpoint; arrays restored bit-exactly."""
    with np.load(path) as data:
        acts = tuple(str(a) for a in data["activations"])
        weights, biases = [], []
        for l in range(len(acts)):
            weights.append(data[f"W{l}"])
            biases.append(data[f"b{l}"])
        params = MlpParams(
            weights=tuple(weights),
            biases=tuple(biases),
            activations=acts,
            input_offset=data["input_offset"] if "input_offset" in data else None,
            input_scale=data["input_scale"] if "input_scale" in data else None,
        )
        metadata = json.loads(bytes(data["metadata"]).decode())
    return params, metadata
