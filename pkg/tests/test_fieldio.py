"""Round-trip tests for the CSV/VTK writers. Everything must come back bit-exact."""

import numpy as np
import pytest

from femop import fieldio
from femop.design_opt import OptimRecord
from femop.mesh import build_grid
from femop.training import TrainHistory


@pytest.fixture
def mesh():
    return build_grid(5, 4, 1.0, 1.0)


def random_fields(mesh, seed=0):
    rng = np.random.default_rng(seed)
    T = rng.normal(size=mesh.n_nodes)
    q = rng.normal(size=(mesh.n_nodes, 2))
    k = rng.uniform(0.01, 1.0, size=mesh.n_nodes)
    return T, q, k


def test_thermal_csv_round_trip_bit_exact(mesh, tmp_path):
    T, q, k = random_fields(mesh)
    path = tmp_path / "field.csv"
    fieldio.write_thermal_csv(path, mesh, T, q, k)
    coords, T2, q2, k2 = fieldio.read_thermal_csv(path)
    np.testing.assert_array_equal(coords, mesh.coords)
    np.testing.assert_array_equal(T2, T)
    np.testing.assert_array_equal(q2, q)
    np.testing.assert_array_equal(k2, k)


def test_thermal_csv_header_units(mesh, tmp_path):
    T, q, k = random_fields(mesh)
    path = tmp_path / "field.csv"
    fieldio.write_thermal_csv(path, mesh, T, q, k)
    header = path.read_text().splitlines()[0]
    assert header == "node_id,x,y,T [K],qx [W/m^2],qy [W/m^2],k [W/mK]"


def test_thermal_csv_shape_validation(mesh, tmp_path):
    T, q, k = random_fields(mesh)
    with pytest.raises(ValueError, match="node count"):
        fieldio.write_thermal_csv(tmp_path / "x.csv", mesh, T[:-1], q, k)


def test_read_rejects_wrong_header(mesh, tmp_path):
    path = tmp_path / "other.csv"
    fieldio.write_mesh_csv(path, mesh)
    with pytest.raises(ValueError, match="header"):
        fieldio.read_thermal_csv(path)


def test_elastic_csv_round_trip(mesh, tmp_path):
    rng = np.random.default_rng(3)
    U = rng.normal(size=(mesh.n_nodes, 2))
    stress = rng.normal(size=(mesh.n_nodes, 3))
    path = tmp_path / "elastic.csv"
    fieldio.write_elastic_csv(path, mesh, U, stress)
    coords, U2, s2 = fieldio.read_elastic_csv(path)
    np.testing.assert_array_equal(U2, U)
    np.testing.assert_array_equal(s2, stress)
    # interleaved dof vector is accepted too
    fieldio.write_elastic_csv(path, mesh, U.ravel(), stress)
    _, U3, _ = fieldio.read_elastic_csv(path)
    np.testing.assert_array_equal(U3, U)


def test_vtk_round_trip_bit_exact(mesh, tmp_path):
    T, q, k = random_fields(mesh, seed=5)
    path = tmp_path / "field.vtk"
    fieldio.write_vtk(path, mesh, {"T": T, "q": q, "k": k})
    mesh2, data = fieldio.read_vtk(path)
    assert (mesh2.nx, mesh2.ny) == (mesh.nx, mesh.ny)
    np.testing.assert_array_equal(mesh2.coords, mesh.coords)
    np.testing.assert_array_equal(data["T"], T)
    np.testing.assert_array_equal(data["q"], q)
    np.testing.assert_array_equal(data["k"], k)


def test_vtk_rejects_bad_shapes_and_names(mesh, tmp_path):
    with pytest.raises(ValueError, match="shape"):
        fieldio.write_vtk(tmp_path / "x.vtk", mesh, {"T": np.zeros((3, 3))})
    with pytest.raises(ValueError, match="spaces"):
        fieldio.write_vtk(tmp_path / "x.vtk", mesh, {"T field": np.zeros(mesh.n_nodes)})


def test_vtk_header_is_legacy_ascii(mesh, tmp_path):
    path = tmp_path / "field.vtk"
    fieldio.write_vtk(path, mesh, {"T": np.zeros(mesh.n_nodes)})
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[2] == "ASCII"
    assert lines[3] == "DATASET STRUCTURED_GRID"
    assert lines[4] == f"DIMENSIONS {mesh.nx} {mesh.ny} 1"


def test_loss_history_round_trip(tmp_path):
    hist = TrainHistory()
    rng = np.random.default_rng(7)
    for _ in range(6):
        hist.append(rng.uniform(size=4))
    path = tmp_path / "loss.csv"
    fieldio.write_loss_history_csv(path, hist)
    assert path.read_text().splitlines()[0] == "epoch,L_total,L_ph,L_bc,L_se"
    total, ph, bc, se = fieldio.read_loss_history_csv(path)
    np.testing.assert_array_equal(total, hist.total)
    np.testing.assert_array_equal(se, hist.sensitivity)


def test_evaluation_csv_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    e = rng.uniform(size=(3, 8))
    path = tmp_path / "eval.csv"
    fieldio.write_evaluation_csv(path, e[0], e[1], e[2])
    out = fieldio.read_evaluation_csv(path)
    for got, want in zip(out, e):
        np.testing.assert_array_equal(got, want)


def test_sensitivity_csv_values_and_rel_err(tmp_path):
    a = np.array([1.0, -2.0, 0.0])
    b = np.array([1.0, -2.2, 1e-30])
    path = tmp_path / "sens.csv"
    fieldio.write_sensitivity_csv(path, a, b)
    a2, b2, rel = fieldio.read_sensitivity_csv(path)
    np.testing.assert_array_equal(a2, a)
    np.testing.assert_array_equal(b2, b)
    assert rel[0] == 0.0
    np.testing.assert_allclose(rel[1], 0.1, rtol=1e-12)


def test_optimization_csv_round_trip(tmp_path):
    records = [
        OptimRecord(
            iteration=i,
            objective=float(i) * 1.5,
            constraints=np.array([0.1 * i]),
            step_norm=0.01 / (i + 1),
            primal_ms=1.0,
            sensitivity_ms=2.0,
            update_ms=0.5,
        )
        for i in range(4)
    ]
    path = tmp_path / "optim.csv"
    fieldio.write_optimization_csv(path, records, mode="fem")
    assert path.read_text().splitlines()[0] == "iter,J,h,step_norm,phase_time_ms,mode"
    J, h, steps, phase, modes = fieldio.read_optimization_csv(path)
    np.testing.assert_array_equal(J, [r.objective for r in records])
    np.testing.assert_array_equal(h, [0.0, 0.1, 0.2, 0.30000000000000004])
    np.testing.assert_array_equal(phase, np.full(4, 3.5))
    assert list(modes) == ["fem"] * 4


def test_corpus_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    C = rng.normal(size=(10, 6))
    path = tmp_path / "corpus.csv"
    fieldio.write_corpus_csv(path, C)
    np.testing.assert_array_equal(fieldio.read_corpus_csv(path), C)
    with pytest.raises(ValueError, match="corpus header"):
        fieldio.read_corpus_csv(path, prefix="k")


def test_manifest_round_trip(tmp_path):
    payload = {
        "seed": 42,
        "grid": [21, 21],
        "ranges": np.array([[-3.0, 3.0]]),
        "config": {"lr": 1e-3},
    }
    path = tmp_path / "manifest.json"
    fieldio.write_manifest(path, payload)
    out = fieldio.read_manifest(path)
    assert out["seed"] == 42
    assert out["ranges"] == [[-3.0, 3.0]]
    assert out["config"]["lr"] == 1e-3
