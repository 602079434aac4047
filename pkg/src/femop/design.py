"""Design parameterizations: control variables -> nodal property fields.

Three families feed the solvers and training corpora:

* truncated cosine series with a sigmoidal projection onto physical bounds
  (conductivity or source design over a handful of coefficients),
* raw nodal fields with an identity tangent,
* randomly placed two-phase ellipse inclusions for image-like corpora.

Every map also reports its tangent A = d(field)/d(controls), which the
sensitivity chain rules consume downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from femop.mesh import Mesh


def sigmoid(x) -> NDArray[np.float64]:
    # Branch by sign to stay overflow-free for large |x|; works for scalars.
    x = np.asarray(x, dtype=float)
    pos = 1.0 / (1.0 + np.exp(-np.clip(x, 0.0, None)))
    ex = np.exp(np.clip(x, None, 0.0))
    neg = ex / (1.0 + ex)
    return np.where(x >= 0, pos, neg)


@dataclass(frozen=True)
class ProjectionSpec:
    """Sigmoidal squash of a raw scalar field onto (vmin, vmax).

    value = (vmax - vmin) * sigmoid(beta * (raw - 0.5)) + vmin

    beta controls the sharpness of the two-phase transition.
    """

    vmin: float
    vmax: float
    beta: float = 5.0

    def __post_init__(self):
        if not self.vmin < self.vmax:
            raise ValueError(f"need vmin < vmax, got [{self.vmin}, {self.vmax}]")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")


CONDUCTIVITY_BOUNDS = ProjectionSpec(vmin=0.01, vmax=1.0, beta=5.0)
SOURCE_BOUNDS = ProjectionSpec(vmin=-10.0, vmax=-1.0, beta=5.0)


def project(spec: ProjectionSpec, raw):
    """Apply the sigmoidal projection; output is strictly inside (vmin, vmax)."""
    raw = np.asarray(raw, dtype=float)
    out = (spec.vmax - spec.vmin) * sigmoid(spec.beta * (raw - 0.5)) + spec.vmin
    # The sigmoid rounds to 0/1 in floats once saturated; nudge one ulp back
    # inside so the open-interval guarantee survives finite precision.
    out = np.clip(out, np.nextafter(spec.vmin, np.inf), np.nextafter(spec.vmax, -np.inf))
    return float(out) if out.ndim == 0 else out


def project_derivative(spec: ProjectionSpec, raw):
    """d project / d raw, elementwise."""
    raw = np.asarray(raw, dtype=float)
    s = sigmoid(spec.beta * (raw - 0.5))
    out = (spec.vmax - spec.vmin) * spec.beta * s * (1.0 - s)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FourierDesign:
    """Truncated cosine-product series behind a sigmoidal projection.

    The raw field is

        k_f(x, y) = c_0 + sum_{j, i} c_{1 + j*|fx| + i}
                    * cos(freq_scale * fx_i * x) * cos(freq_scale * fy_j * y)

    i.e. coefficients enumerate the frequency grid with the x-frequency
    index running fastest, after the leading constant term. ``full_basis``
    additionally includes sin*cos, cos*sin and sin*sin blocks per frequency
    pair (in that order, after the cos*cos block).

    Attributes
    ----------
    fx, fy : tuple of float
        Positive frequencies per axis.
    c : ndarray, shape (M,)
        Coefficients; M = 1 + |fx|*|fy| (or 1 + 4*|fx|*|fy| with full_basis).
    projection : ProjectionSpec
    includes_constant : bool
        Whether c[0] is the constant term (required True for the paper-style
        10-term setup; False drops it and shortens c accordingly).
    freq_scale : float
        Multiplier applied to every frequency (1.0 keeps raw radians).
    full_basis : bool
        Enable the sine blocks.
    """

    fx: tuple[float, ...]
    fy: tuple[float, ...]
    c: NDArray[np.float64]
    projection: ProjectionSpec = CONDUCTIVITY_BOUNDS
    includes_constant: bool = True
    freq_scale: float = 1.0
    full_basis: bool = False

    def __post_init__(self):
        fx = tuple(float(f) for f in self.fx)
        fy = tuple(float(f) for f in self.fy)
        if any(f <= 0 for f in fx + fy):
            raise ValueError("frequencies must be positive")
        object.__setattr__(self, "fx", fx)
        object.__setattr__(self, "fy", fy)
        c = np.asarray(self.c, dtype=float)
        if c.shape != (self.n_terms,):
            raise ValueError(
                f"coefficient vector must have length {self.n_terms}, got {c.shape}"
            )
        object.__setattr__(self, "c", c)
        c.setflags(write=False)

    @property
    def n_terms(self) -> int:
        blocks = 4 if self.full_basis else 1
        return blocks * len(self.fx) * len(self.fy) + (1 if self.includes_constant else 0)

    def with_coefficients(self, c) -> "FourierDesign":
        return replace(self, c=np.asarray(c, dtype=float))


def fourier_basis(design: FourierDesign, x, y) -> NDArray[np.float64]:
    """Basis matrix Phi with k_f = Phi @ c, shape (n_points, n_terms)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    cols = []
    if design.includes_constant:
        cols.append(np.ones_like(x))
    s = design.freq_scale
    cos_x = {f: np.cos(s * f * x) for f in design.fx}
    cos_y = {f: np.cos(s * f * y) for f in design.fy}
    for gy in design.fy:
        for gx in design.fx:
            cols.append(cos_x[gx] * cos_y[gy])
    if design.full_basis:
        sin_x = {f: np.sin(s * f * x) for f in design.fx}
        sin_y = {f: np.sin(s * f * y) for f in design.fy}
        for block in ("sc", "cs", "ss"):
            for gy in design.fy:
                for gx in design.fx:
                    if block == "sc":
                        cols.append(sin_x[gx] * cos_y[gy])
                    elif block == "cs":
                        cols.append(cos_x[gx] * sin_y[gy])
                    else:
                        cols.append(sin_x[gx] * sin_y[gy])
    return np.column_stack(cols)


def fourier_field(design: FourierDesign, x, y) -> NDArray[np.float64]:
    """Raw (unprojected) field k_f at the given coordinates."""
    return fourier_basis(design, x, y) @ design.c


@dataclass(frozen=True)
class NodalDesign:
    """Physical nodal values taken directly as controls; identity tangent."""

    k: NDArray[np.float64]
    projection: ProjectionSpec = CONDUCTIVITY_BOUNDS

    def __post_init__(self):
        k = np.asarray(self.k, dtype=float)
        if np.any(k < self.projection.vmin) or np.any(k > self.projection.vmax):
            raise ValueError("nodal values outside the projection bounds")
        object.__setattr__(self, "k", k)
        k.setflags(write=False)

    @property
    def n_terms(self) -> int:
        return len(self.k)


def design_to_nodal(design, mesh: Mesh):
    """Evaluate a design on mesh nodes: physical field k and tangent A = dk/dc.

    Returns
    -------
    k : ndarray (n_nodes,)
    A : ndarray (n_nodes, n_terms)
        Dense chain of the projection derivative and the basis.
    """
    if isinstance(design, NodalDesign):
        if len(design.k) != mesh.n_nodes:
            raise ValueError("nodal design length does not match mesh")
        return design.k.copy(), np.eye(mesh.n_nodes)
    if isinstance(design, FourierDesign):
        phi = fourier_basis(design, mesh.coords[:, 0], mesh.coords[:, 1])
        kf = phi @ design.c
        k = project(design.projection, kf)
        A = project_derivative(design.projection, kf)[:, None] * phi
        return k, A
    raise TypeError(f"unsupported design type {type(design).__name__}")


def source_field(design: FourierDesign, mesh: Mesh, qspec: ProjectionSpec = SOURCE_BOUNDS):
    """Nodal source field built like the conductivity map but with Q bounds."""
    return design_to_nodal(replace(design, projection=qspec), mesh)


# -- sample generation --------------------------------------------------------
#
# Each sample uses an independent counter-based stream seeded by
# (seed, index), so corpora are reproducible and order-independent under
# parallel generation.


@dataclass(frozen=True)
class EllipseSample:
    """Two-phase nodal field with its descriptive metadata."""

    k: NDArray[np.float64]
    volume_fraction: float  # share of nodes inside inclusions
    dispersion: float  # mean nearest-neighbor distance between centers


def gen_ellipse_samples(
    n_samples: int,
    mesh: Mesh,
    seed: int,
    *,
    n_ellipses: tuple[int, int] = (1, 8),
    radius_range: tuple[float, float] = (0.05, 0.3),
    bounds: ProjectionSpec = CONDUCTIVITY_BOUNDS,
) -> list[EllipseSample]:
    """Random elliptical low-conductivity inclusions in a uniform matrix.

    Per sample: a count of ellipses, then per ellipse a random center,
    random inner/outer radii (semi-axes, sorted so inner <= outer) and a
    rotation angle. Nodes inside any ellipse get ``bounds.vmin``, the rest
    ``bounds.vmax``.
    """
    if n_ellipses[0] < 0 or n_ellipses[1] < n_ellipses[0]:
        raise ValueError(f"bad ellipse count range {n_ellipses}")
    x, y = mesh.coords[:, 0], mesh.coords[:, 1]
    samples = []
    for idx in range(n_samples):
        rng = np.random.default_rng([seed, idx])
        count = int(rng.integers(n_ellipses[0], n_ellipses[1] + 1))
        inside = np.zeros(mesh.n_nodes, dtype=bool)
        centers = np.empty((count, 2))
        for e in range(count):
            centers[e] = rng.uniform([0.0, 0.0], [mesh.lx, mesh.ly])
            r1, r2 = np.sort(rng.uniform(radius_range[0], radius_range[1], size=2))
            theta = rng.uniform(0.0, np.pi)
            dx, dy = x - centers[e, 0], y - centers[e, 1]
            u = np.cos(theta) * dx + np.sin(theta) * dy
            v = -np.sin(theta) * dx + np.cos(theta) * dy
            inside |= (u / r2) ** 2 + (v / r1) ** 2 <= 1.0
        k = np.where(inside, bounds.vmin, bounds.vmax)
        if count >= 2:
            d = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
            np.fill_diagonal(d, np.inf)
            dispersion = float(d.min(axis=1).mean())
        else:
            dispersion = 0.0
        samples.append(
            EllipseSample(
                k=k,
                volume_fraction=float(inside.mean()),
                dispersion=dispersion,
            )
        )
    return samples


def maxpool_downsample(fine: NDArray[np.float64], nx_fine: int, ny_fine: int, nx_out: int, ny_out: int) -> NDArray[np.float64]:
    """Max-pool a nodal grid field onto a coarser grid.

    The stride per axis must be integer: s = (n_fine - 1) / (n_out - 1).
    Coarse node I takes the max over the non-overlapping fine window
    [s*I, min(s*I + s, n_fine)); taking the max keeps the matrix phase
    when inclusions are the low value, so sub-window inclusions vanish
    rather than smear.
    """
    fine = np.asarray(fine, dtype=float).reshape(ny_fine, nx_fine)
    out = np.empty((ny_out, nx_out))
    for n_fine, n_out in ((nx_fine, nx_out), (ny_fine, ny_out)):
        if n_out < 2 or (n_fine - 1) % (n_out - 1) != 0:
            raise ValueError(f"incompatible grid sizes {n_fine} -> {n_out}")
    sx = (nx_fine - 1) // (nx_out - 1)
    sy = (ny_fine - 1) // (ny_out - 1)
    for J in range(ny_out):
        for I in range(nx_out):
            win = fine[sy * J : min(sy * J + sy, ny_fine), sx * I : min(sx * I + sx, nx_fine)]
            out[J, I] = win.max()
    return out.ravel()


def gen_random_fourier_samples(
    n: int,
    n_terms: int,
    seed: int,
    coeff_range: tuple[float, float] | Sequence[tuple[float, float]] = (-3.0, 3.0),
) -> NDArray[np.float64]:
    """Seeded uniform coefficient vectors, shape (n, n_terms).

    ``coeff_range`` is one (lo, hi) pair for all coefficients or a per-term
    sequence of pairs.
    """
    ranges = np.asarray(coeff_range, dtype=float)
    if ranges.ndim == 1:
        ranges = np.broadcast_to(ranges, (n_terms, 2))
    if ranges.shape != (n_terms, 2):
        raise ValueError(f"coeff_range must be (2,) or ({n_terms}, 2)")
    out = np.empty((n, n_terms))
    for idx in range(n):
        rng = np.random.default_rng([seed, idx])
        out[idx] = rng.uniform(ranges[:, 0], ranges[:, 1])
    return out


def gen_random_bc_samples(
    n: int,
    component_ranges: Sequence[tuple[float, float]],
    seed: int,
) -> NDArray[np.float64]:
    """Seeded uniform boundary-value vectors, shape (n, n_components)."""
    ranges = np.asarray(component_ranges, dtype=float)
    if ranges.ndim != 2 or ranges.shape[1] != 2:
        raise ValueError("component_ranges must be a sequence of (lo, hi) pairs")
    out = np.empty((n, len(ranges)))
    for idx in range(n):
        rng = np.random.default_rng([seed, idx])
        out[idx] = rng.uniform(ranges[:, 0], ranges[:, 1])
    return out
