"""Field persistence: CSV interchange files and legacy ASCII VTK exports.

Every writer prints floats with %.17g so a read-back reproduces the array
bit-exactly. CSV headers carry the physical units (temperature in K,
conductivity in W/mK, flux in W/m^2, volumetric source in W/m^3).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .mesh import Mesh, build_grid

FLOAT_FMT = "%.17g"

THERMAL_HEADER = "node_id,x,y,T [K],qx [W/m^2],qy [W/m^2],k [W/mK]"
ELASTIC_HEADER = "node_id,x,y,ux,uy,sxx,syy,sxy"
MESH_HEADER = "node_id,x,y"
LOSS_HEADER = "epoch,L_total,L_ph,L_bc,L_se"
EVAL_HEADER = "sample_id,err_T,err_qx,err_qy"
SENSITIVITY_HEADER = "c_index,dJ_dc_adjoint,dJ_dc_fol,rel_err"
OPTIM_HEADER = "iter,J,h,step_norm,phase_time_ms,mode"


def _write_table(path, header: str, columns) -> None:
    """One CSV table: integer first column, %.17g floats after it."""
    cols = [np.asarray(c) for c in columns]
    n = cols[0].shape[0]
    if any(c.shape[0] != n for c in cols):
        raise ValueError("columns must share a length")
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i in range(n):
            cells = []
            for c in cols:
                v = c[i]
                if np.issubdtype(c.dtype, np.integer):
                    cells.append(str(int(v)))
                elif c.dtype.kind in "US":
                    cells.append(str(v))
                else:
                    cells.append(FLOAT_FMT % v)
            fh.write(",".join(cells) + "\n")


def _read_table(path, expected_header: str) -> NDArray[np.float64]:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != expected_header:
            raise ValueError(
                f"unexpected CSV header in {path!s}: got {header!r}, want {expected_header!r}"
            )
        body = fh.read()
    if not body.strip():
        return np.empty((0, len(expected_header.split(","))))
    return np.atleast_2d(np.loadtxt(body.splitlines(), delimiter=",", dtype=str))


# -- mesh and solution fields --------------------------------------------------------


def write_mesh_csv(path, mesh: Mesh) -> None:
    ids = np.arange(mesh.n_nodes)
    _write_table(path, MESH_HEADER, [ids, mesh.coords[:, 0], mesh.coords[:, 1]])


def write_thermal_csv(path, mesh: Mesh, T, q, k) -> None:
    """Nodal temperature, flux vector, and conductivity on one grid."""
    T = np.asarray(T, dtype=float)
    q = np.asarray(q, dtype=float)
    k = np.asarray(k, dtype=float)
    if T.shape != (mesh.n_nodes,) or q.shape != (mesh.n_nodes, 2) or k.shape != (mesh.n_nodes,):
        raise ValueError("field shapes must match the mesh node count")
    ids = np.arange(mesh.n_nodes)
    _write_table(
        path,
        THERMAL_HEADER,
        [ids, mesh.coords[:, 0], mesh.coords[:, 1], T, q[:, 0], q[:, 1], k],
    )


def read_thermal_csv(path):
    """Returns (coords, T, q, k) as float arrays."""
    raw = _read_table(path, THERMAL_HEADER).astype(float)
    coords = raw[:, 1:3]
    return coords, raw[:, 3], raw[:, 4:6], raw[:, 6]


def write_elastic_csv(path, mesh: Mesh, U, stress) -> None:
    """Nodal displacement (ux, uy interleaved or (n, 2)) and stress (n, 3)."""
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U.reshape(-1, 2)
    stress = np.asarray(stress, dtype=float)
    if U.shape != (mesh.n_nodes, 2) or stress.shape != (mesh.n_nodes, 3):
        raise ValueError("field shapes must match the mesh node count")
    ids = np.arange(mesh.n_nodes)
    _write_table(
        path,
        ELASTIC_HEADER,
        [
            ids,
            mesh.coords[:, 0],
            mesh.coords[:, 1],
            U[:, 0],
            U[:, 1],
            stress[:, 0],
            stress[:, 1],
            stress[:, 2],
        ],
    )


def read_elastic_csv(path):
    """Returns (coords, U (n,2), stress (n,3))."""
    raw = _read_table(path, ELASTIC_HEADER).astype(float)
    return raw[:, 1:3], raw[:, 3:5], raw[:, 5:8]


# -- VTK ----------------------------------------------------------------------------


def write_vtk(path, mesh: Mesh, point_data: dict, title: str = "femop field export") -> None:
    """Legacy ASCII STRUCTURED_GRID file with nodal point data.

    (n,) arrays become SCALARS, (n, 2) arrays become VECTORS (zero z).
    """
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_GRID",
        f"DIMENSIONS {mesh.nx} {mesh.ny} 1",
        f"POINTS {mesh.n_nodes} double",
    ]
    for x, y in mesh.coords:
        lines.append(f"{FLOAT_FMT % x} {FLOAT_FMT % y} 0")
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    for name, values in point_data.items():
        arr = np.asarray(values, dtype=float)
        if " " in name:
            raise ValueError(f"VTK field name must not contain spaces: {name!r}")
        if arr.shape == (mesh.n_nodes,):
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(FLOAT_FMT % v for v in arr)
        elif arr.shape == (mesh.n_nodes, 2):
            lines.append(f"VECTORS {name} double")
            lines.extend(f"{FLOAT_FMT % vx} {FLOAT_FMT % vy} 0" for vx, vy in arr)
        else:
            raise ValueError(f"field {name!r} has shape {arr.shape}, want (n,) or (n, 2)")
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk(path):
    """Re-import a structured-grid file written by write_vtk.

    Returns (mesh, point_data dict). Vector fields come back as (n, 2),
    dropping the zero z component.
    """
    lines = Path(path).read_text().splitlines()
    if lines[3] != "DATASET STRUCTURED_GRID":
        raise ValueError("not a structured-grid VTK file")
    nx, ny, nz = (int(t) for t in lines[4].split()[1:])
    if nz != 1:
        raise ValueError("only single-layer grids are supported")
    n = int(lines[5].split()[1])
    coords = np.array([[float(t) for t in lines[6 + i].split()] for i in range(n)])
    mesh = build_grid(nx, ny, float(coords[:, 0].max()), float(coords[:, 1].max()))
    if not np.array_equal(mesh.coords, coords[:, :2]):
        raise ValueError("point coordinates do not form a uniform grid")
    pos = 6 + n
    assert lines[pos] == f"POINT_DATA {n}"
    pos += 1
    data = {}
    while pos < len(lines):
        tokens = lines[pos].split()
        if not tokens:
            pos += 1
            continue
        if tokens[0] == "SCALARS":
            name = tokens[1]
            pos += 2  # skip LOOKUP_TABLE
            data[name] = np.array([float(lines[pos + i]) for i in range(n)])
            pos += n
        elif tokens[0] == "VECTORS":
            name = tokens[1]
            pos += 1
            rows = [[float(t) for t in lines[pos + i].split()] for i in range(n)]
            data[name] = np.array(rows)[:, :2]
            pos += n
        else:
            raise ValueError(f"unsupported VTK attribute line: {lines[pos]!r}")
    return mesh, data


# -- run reports ----------------------------------------------------------------------


def write_loss_history_csv(path, history) -> None:
    """Per-epoch rows from a TrainHistory (or anything with the four lists)."""
    epochs = np.arange(len(history.total))
    _write_table(
        path,
        LOSS_HEADER,
        [epochs, history.total, history.physics, history.dirichlet, history.sensitivity],
    )


def read_loss_history_csv(path):
    raw = _read_table(path, LOSS_HEADER).astype(float)
    return raw[:, 1], raw[:, 2], raw[:, 3], raw[:, 4]


def write_evaluation_csv(path, err_T, err_qx, err_qy) -> None:
    ids = np.arange(len(np.asarray(err_T)))
    _write_table(path, EVAL_HEADER, [ids, err_T, err_qx, err_qy])


def read_evaluation_csv(path):
    raw = _read_table(path, EVAL_HEADER).astype(float)
    return raw[:, 1], raw[:, 2], raw[:, 3]


def write_sensitivity_csv(path, dJ_adjoint, dJ_fol) -> None:
    """Componentwise comparison of two design-gradient routes.

    rel_err is |a - b| / max(|a|, tiny) so exact agreement prints as 0.
    """
    a = np.asarray(dJ_adjoint, dtype=float)
    b = np.asarray(dJ_fol, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("gradients must be equal-length vectors")
    rel = np.abs(a - b) / np.maximum(np.abs(a), np.finfo(float).tiny)
    _write_table(path, SENSITIVITY_HEADER, [np.arange(a.size), a, b, rel])


def read_sensitivity_csv(path):
    raw = _read_table(path, SENSITIVITY_HEADER).astype(float)
    return raw[:, 1], raw[:, 2], raw[:, 3]


def write_optimization_csv(path, history, mode: str) -> None:
    """Iteration log of a design run: objective, first constraint, step, wall time."""
    its = np.array([rec.iteration for rec in history])
    J = np.array([rec.objective for rec in history])
    h = np.array(
        [rec.constraints[0] if len(rec.constraints) else np.nan for rec in history]
    )
    steps = np.array([rec.step_norm for rec in history])
    phase = np.array(
        [rec.primal_ms + rec.sensitivity_ms + rec.update_ms for rec in history]
    )
    modes = np.array([mode] * len(history))
    _write_table(path, OPTIM_HEADER, [its, J, h, steps, phase, modes])


def read_optimization_csv(path):
    raw = _read_table(path, OPTIM_HEADER)
    vals = raw[:, :5].astype(float)
    return vals[:, 1], vals[:, 2], vals[:, 3], vals[:, 4], raw[:, 5]


# -- sample corpora -------------------------------------------------------------------


def write_corpus_csv(path, C, prefix: str = "c") -> None:
    """One row per sample; columns are the design components."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    header = "sample_id," + ",".join(f"{prefix}{j}" for j in range(C.shape[1]))
    _write_table(path, header, [np.arange(C.shape[0])] + [C[:, j] for j in range(C.shape[1])])


def read_corpus_csv(path, prefix: str = "c"):
    with open(path) as fh:
        header = fh.readline().strip()
    names = header.split(",")
    if names[0] != "sample_id" or any(not n.startswith(prefix) for n in names[1:]):
        raise ValueError(f"unexpected corpus header: {header!r}")
    raw = _read_table(path, header).astype(float)
    return raw[:, 1:]


def write_manifest(path, payload: dict) -> None:
    """JSON run manifest; seeds and grids stay integers, arrays become lists."""

    def convert(obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (np.integer,)):
            return int(obj)
        if isinstance(obj, (np.floating,)):
            return float(obj)
        raise TypeError(f"cannot serialize {type(obj).__name__}")

    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=convert) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
