"""Command-line driver.

Subcommands cover the full workflow: direct FEM solves, corpus generation,
parametric training, matrix-free single-field solves, sensitivity comparisons,
design optimization, physics-vs-data surrogate comparisons, and display-grid
export. Every run echoes its resolved configuration and writes a JSON manifest
next to its outputs, so a result directory is reproducible from itself.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 failed acceptance check (the --assert-* flags).

Only this module and `config` are import-light; the numerical modules load
lazily inside the handlers so that --threads can cap the BLAS pools through
environment variables before the first numpy import.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

from . import config as cfgmod

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CHECK = 4

OUTPUT_DIR_ENV = "FEMOP_OUTPUT_DIR"
THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _apply_thread_cap(argv) -> None:
    # must happen before numpy loads its BLAS; harmless if already loaded
    if "--threads" in argv:
        idx = argv.index("--threads")
        if idx + 1 < len(argv):
            for var in THREAD_ENV_VARS:
                os.environ[var] = argv[idx + 1]


# -- shared plumbing ---------------------------------------------------------------


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="path to the INI run configuration")
    common.add_argument(
        "--output-dir",
        default=None,
        help=f"output directory (default: [io] output_dir, then ${OUTPUT_DIR_ENV}, then ./femop_out)",
    )
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        help="cap numerical thread pools; 1 guarantees bit-reproducible runs",
    )
    return common


def _resolve_output_dir(args, cfg) -> Path:
    if args.output_dir:
        out = Path(args.output_dir)
    elif cfg["io"]["output_dir"]:
        out = Path(cfg["io"]["output_dir"])
    else:
        out = Path(os.environ.get(OUTPUT_DIR_ENV, "femop_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg) -> None:
    print(f"# resolved configuration ({len(cfg.defaults_applied)} defaults applied)")
    print(cfgmod.serialize(cfg), end="")


def _write_run_manifest(out_dir: Path, name: str, cfg, args, outputs, extra=None) -> Path:
    from . import fieldio

    payload = {
        "subcommand": name,
        "argv": sys.argv[1:] if args is None else args._argv,
        "config": cfg.values,
        "defaults_applied": list(cfg.defaults_applied),
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        payload.update(extra)
    path = out_dir / f"{name.replace('-', '_')}_manifest.json"
    fieldio.write_manifest(path, payload)
    return path


def _mesh_from(cfg):
    from .mesh import build_grid

    m = cfg["mesh"]
    return build_grid(m["nx"], m["ny"], m["lx"], m["ly"])


def _projection_from(cfg):
    from .design import ProjectionSpec

    p = cfg["parameterization"]
    return ProjectionSpec(vmin=p["k_min"], vmax=p["k_max"], beta=p["projection_beta"])


def _template_from(cfg):
    """Fourier design with zero coefficients; callers swap in real ones."""
    import numpy as np

    from .design import FourierDesign

    p = cfg["parameterization"]
    n_terms = 1 + len(p["fx"]) * len(p["fy"])
    return FourierDesign(
        fx=p["fx"], fy=p["fy"], c=np.zeros(n_terms), projection=_projection_from(cfg)
    )


def _uniform_start(template, k0: float):
    """Coefficients whose projected field is the constant k0."""
    import numpy as np

    spec = template.projection
    if not spec.vmin < k0 < spec.vmax:
        raise cfgmod.ConfigError(f"start value {k0} outside projection range")
    frac = (k0 - spec.vmin) / (spec.vmax - spec.vmin)
    raw = 0.5 + np.log(frac / (1.0 - frac)) / spec.beta
    c = np.zeros(template.n_terms)
    c[0] = raw
    return template.with_coefficients(c)


def _conductivity_from(cfg, mesh):
    """Nodal conductivity per the parameterization section.

    Returns (k, A, design): A is the design-to-nodal tangent for fourier
    kind, None otherwise; design is None unless kind is fourier.
    """
    import numpy as np

    from .design import design_to_nodal

    p = cfg["parameterization"]
    if p["kind"] == "uniform":
        return np.full(mesh.n_nodes, p["k_value"]), None, None
    if p["kind"] == "fourier":
        template = _template_from(cfg)
        coeffs = p["coeffs"]
        if not coeffs:
            raise cfgmod.ConfigError(
                "parameterization.coeffs is required for kind = fourier "
                f"({template.n_terms} values)"
            )
        design = template.with_coefficients(np.asarray(coeffs))
        k, A = design_to_nodal(design, mesh)
        return k, A, design
    raise cfgmod.ConfigError(
        "kind = nodal needs a corpus file; use the corpus-driven subcommands"
    )


def _conductivity_law(cfg):
    from .thermal import ConductivityLaw

    ph = cfg["physics"]
    return ConductivityLaw(m1=ph["nonlinear_m1"], m2=ph["nonlinear_m2"])


def _thermal_bvp(cfg, mesh, k):
    import numpy as np

    from .thermal import ThermalBVP

    ph = cfg["physics"]
    law = _conductivity_law(cfg) if ph["problem"] == "thermal_nonlinear" else None
    q = np.full(mesh.n_nodes, ph["source"]) if ph["source"] else None
    return ThermalBVP.with_side_temperatures(
        mesh, k, left=ph["left_value"], right=ph["right_value"], q_source=q, nonlinear=law
    )


def _solve_thermal(cfg, bvp):
    from . import thermal

    if bvp.nonlinear is not None:
        return thermal.solve_newton(bvp)
    return thermal.solve_linear(bvp)


def _response_by_name(name: str):
    from .responses import SQ_FLUX_X_SHIFTED, SQ_FLUX_Y

    return {"sq_flux_y": SQ_FLUX_Y, "sq_flux_x_shifted": SQ_FLUX_X_SHIFTED}[name]


def _corpus_for(cfg, mesh, corpus_path):
    """Design matrix plus its field map: (C, fields_fn, n_inputs, prefix)."""
    import numpy as np

    from . import fieldio
    from .design import gen_ellipse_samples, gen_random_fourier_samples
    from .training import fourier_field_map, nodal_field_map

    p = cfg["parameterization"]
    if p["kind"] == "fourier":
        template = _template_from(cfg)
        if corpus_path:
            C = fieldio.read_corpus_csv(corpus_path, prefix="c")
            if C.shape[1] != template.n_terms:
                raise cfgmod.ConfigError(
                    f"corpus has {C.shape[1]} columns, basis needs {template.n_terms}"
                )
        else:
            C = gen_random_fourier_samples(
                p["n_samples"],
                template.n_terms,
                p["sample_seed"],
                (p["coeff_min"], p["coeff_max"]),
            )
        return C, fourier_field_map(template, mesh), template.n_terms, "c"
    if p["kind"] == "nodal":
        if corpus_path:
            C = fieldio.read_corpus_csv(corpus_path, prefix="k")
            if C.shape[1] != mesh.n_nodes:
                raise cfgmod.ConfigError(
                    f"corpus has {C.shape[1]} columns, mesh has {mesh.n_nodes} nodes"
                )
        else:
            samples = gen_ellipse_samples(p["n_samples"], mesh, p["sample_seed"])
            C = np.stack([s.k for s in samples])
        needs_tangent = cfg["loss"]["w_se"] > 0
        return C, nodal_field_map(mesh, with_tangent=needs_tangent), mesh.n_nodes, "k"
    raise cfgmod.ConfigError("parameterization.kind must be fourier or nodal here")


def _training_setup(cfg, mesh):
    """(bvp, ctx, ds, n_outputs) shared by train/compare."""
    import numpy as np

    from .losses import LossWeights, loss_context
    from .training import scatter_for

    lo = cfg["loss"]
    weights = LossWeights(
        w_ph=lo["w_ph"],
        w_bc=lo["w_bc"],
        w_se=lo["w_se"],
        w_db=lo["w_db"],
        physics=lo["physics"],
        hard_bc=lo["hard_bc"],
    )
    bvp = _thermal_bvp(cfg, mesh, np.ones(mesh.n_nodes))
    ctx = loss_context(bvp, weights, order=cfg["mesh"]["quadrature_order"])
    ds = scatter_for(bvp) if lo["hard_bc"] else None
    n_out = len(bvp.free_nodes) if lo["hard_bc"] else mesh.n_nodes
    return bvp, ctx, ds, n_out


def _init_network(cfg, n_in, n_out):
    from .network import init_mlp

    net = cfg["network"]
    return init_mlp((n_in, *net["hidden"], n_out), net["activation"], seed=net["seed"])


# -- subcommands -------------------------------------------------------------------


def _cmd_solve(args) -> int:
    import numpy as np

    from . import elastic, fieldio, thermal

    cfg = cfgmod.parse_config(args.config)
    _echo_config(cfg)
    out = _resolve_output_dir(args, cfg)
    mesh = _mesh_from(cfg)
    outputs = []

    if cfg["physics"]["problem"] == "elastic":
        ph = cfg["physics"]
        E = np.full(mesh.n_nodes, ph["young_modulus"])
        bvp = elastic.ElasticBVP.stretch_top(
            mesh, E, ph["poisson_ratio"], ph["top_ux"], ph["top_uy"]
        )
        U = elastic.solve_elastic(bvp).reshape(-1, 2)
        stress = elastic.recover_stress(bvp, U.ravel())
        csv = out / "solution.csv"
        fieldio.write_elastic_csv(csv, mesh, U, stress)
        outputs.append(csv)
        if cfg["io"]["write_vtk"]:
            vtk = out / "solution.vtk"
            fieldio.write_vtk(
                vtk,
                mesh,
                {"u": U, "u_mag": np.linalg.norm(U, axis=1), "sxx": stress[:, 0],
                 "syy": stress[:, 1], "sxy": stress[:, 2]},
            )
            outputs.append(vtk)
        print(f"solved elastic problem on {mesh.nx}x{mesh.ny}; max |u| = "
              f"{np.linalg.norm(U, axis=1).max():.6g}")
    else:
        k, _, _ = _conductivity_from(cfg, mesh)
        bvp = _thermal_bvp(cfg, mesh, k)
        T = _solve_thermal(cfg, bvp)
        q = thermal.recover_flux(bvp, T)
        k_out = bvp.k_nodal if bvp.nonlinear is None else bvp.nonlinear.k(T)
        csv = out / "solution.csv"
        fieldio.write_thermal_csv(csv, mesh, T, q, k_out)
        outputs.append(csv)
        if cfg["io"]["write_vtk"]:
            vtk = out / "solution.vtk"
            fieldio.write_vtk(vtk, mesh, {"T": T, "q": q, "k": k_out})
            outputs.append(vtk)
        print(f"solved thermal problem on {mesh.nx}x{mesh.ny}; "
              f"T range [{T.min():.6g}, {T.max():.6g}]")

    outputs.append(_write_run_manifest(out, "solve", cfg, args, outputs))
    return EXIT_OK


def _cmd_samplegen(args) -> int:
    from . import fieldio

    cfg = cfgmod.parse_config(args.config)
    _echo_config(cfg)
    out = _resolve_output_dir(args, cfg)
    mesh = _mesh_from(cfg)
    C, _, _, prefix = _corpus_for(cfg, mesh, corpus_path=None)
    csv = out / "corpus.csv"
    fieldio.write_corpus_csv(csv, C, prefix=prefix)
    p = cfg["parameterization"]
    manifest = _write_run_manifest(
        out,
        "samplegen",
        cfg,
        args,
        [csv],
        extra={
            "seed": p["sample_seed"],
            "n_samples": C.shape[0],
            "n_components": C.shape[1],
            "ranges": [p["coeff_min"], p["coeff_max"]],
            "grid": [mesh.nx, mesh.ny],
        },
    )
    print(f"wrote {C.shape[0]} samples with {C.shape[1]} components to {csv}")
    print(f"manifest: {manifest}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from . import fieldio
    from .network import save_checkpoint
    from .training import train_parametric

    cfg = cfgmod.parse_config(args.config)
    _echo_config(cfg)
    out = _resolve_output_dir(args, cfg)
    mesh = _mesh_from(cfg)
    C, fields_fn, n_in, _ = _corpus_for(cfg, mesh, args.corpus)
    bvp, ctx, ds, n_out = _training_setup(cfg, mesh)
    params = _init_network(cfg, n_in, n_out)
    tr = cfg["training"]
    params, history = train_parametric(
        params,
        ctx,
        C,
        fields_fn,
        ds,
        epochs=tr["epochs"],
        batch_size=tr["batch_size"],
        lr=tr["lr"],
        seed=tr["seed"],
    )
    loss_csv = out / "loss_history.csv"
    fieldio.write_loss_history_csv(loss_csv, history)
    ckpt = out / "checkpoint.npz"
    save_checkpoint(ckpt, params, metadata={"config": cfgmod.serialize(cfg)})
    outputs = [loss_csv, ckpt]
    outputs.append(
        _write_run_manifest(
            out, "train", cfg, args, outputs,
            extra={"epochs": history.epochs, "seconds": history.seconds,
                   "final_loss": history.total[-1] if history.total else None},
        )
    )
    print(f"trained {history.epochs} epochs in {history.seconds:.2f}s; "
          f"final total loss {history.total[-1]:.6g}")
    return EXIT_OK


def _cmd_solve_mf(args) -> int:
    from . import fieldio, thermal
    from .training import evaluate, solve_matrix_free

    cfg = cfgmod.parse_config(args.config)
    _echo_config(cfg)
    out = _resolve_output_dir(args, cfg)
    mesh = _mesh_from(cfg)
    k, _, _ = _conductivity_from(cfg, mesh)
    bvp = _thermal_bvp(cfg, mesh, k)
    net, tr = cfg["network"], cfg["training"]
    T_pred, history = solve_matrix_free(
        bvp,
        epochs=tr["epochs"],
        hidden=net["hidden"],
        activation=net["activation"],
        lr=tr["lr"],
        seed=tr["seed"],
    )
    T_ref = _solve_thermal(cfg, bvp)
    table = evaluate(mesh, k, T_pred, T_ref)
    q = thermal.recover_flux(bvp, T_pred)
    csv = out / "solution_mf.csv"
    fieldio.write_thermal_csv(csv, mesh, T_pred, q, k)
    loss_csv = out / "loss_history.csv"
    fieldio.write_loss_history_csv(loss_csv, history)
    eval_csv = out / "evaluation.csv"
    fieldio.write_evaluation_csv(eval_csv, table.err_T, table.err_qx, table.err_qy)
    outputs = [csv, loss_csv, eval_csv]
    outputs.append(
        _write_run_manifest(
            out, "solve-mf", cfg, args, outputs,
            extra={"err_T": float(table.err_T[0]), "err_qx": float(table.err_qx[0]),
                   "err_qy": float(table.err_qy[0])},
        )
    )
    print(f"matrix-free field error vs FEM: Err(T) = {table.err_T[0]:.4f}%, "
          f"Err(qx) = {table.err_qx[0]:.4f}%, Err(qy) = {table.err_qy[0]:.4f}%")
    if args.assert_err is not None and table.err_T[0] > args.assert_err:
        print(f"CHECK FAILED: Err(T) {table.err_T[0]:.4f}% > {args.assert_err}%")
        return EXIT_CHECK
    return EXIT_OK


def _cmd_sensitivity(args) -> int:
    import numpy as np

    from . import fieldio
    from .network import input_jacobian, load_checkpoint
    from .responses import adjoint_sensitivity, direct_sensitivity, network_sensitivity
    from .training import predict, scatter_for, train_parametric

    cfg = cfgmod.parse_config(args.config)
    _echo_config(cfg)
    out = _resolve_output_dir(args, cfg)
    mesh = _mesh_from(cfg)
    k, A, design = _conductivity_from(cfg, mesh)
    if A is None:
        raise cfgmod.ConfigError("sensitivity requires parameterization.kind = fourier")
    bvp = _thermal_bvp(cfg, mesh, k)
    T = _solve_thermal(cfg, bvp)
    resp = _response_by_name(cfg["optimizer"]["objective"])

    value, dJ_adj = adjoint_sensitivity(resp, bvp, T, A)
    outputs = []
    worst_direct = None
    print(f"response J = {value:.9g} with {A.shape[1]} design components")

    if args.mode in ("direct", "all"):
        _, dJ_dir = direct_sensitivity(resp, bvp, T, A)
        csv = out / "sensitivity_direct.csv"
        fieldio.write_sensitivity_csv(csv, dJ_adj, dJ_dir)
        outputs.append(csv)
        scale = np.abs(dJ_adj).max()
        worst_direct = float(np.abs(dJ_adj - dJ_dir).max() / (scale if scale else 1.0))
        print(f"adjoint vs direct: max componentwise rel err {worst_direct:.3e}")

    if args.mode in ("fol", "all"):
        if args.checkpoint:
            params, _ = load_checkpoint(args.checkpoint)
        else:
            _, ctx, ds_train, n_out = _training_setup(cfg, mesh)
            from .training import fourier_field_map

            template = _template_from(cfg)
            params = _init_network(cfg, template.n_terms, n_out)
            tr = cfg["training"]
            params, _ = train_parametric(
                params, ctx, design.c[None, :], fourier_field_map(template, mesh),
                ds_train, epochs=tr["epochs"], batch_size=1, lr=tr["lr"], seed=tr["seed"],
            )
        ds = scatter_for(bvp)
        T_net = predict(params, ds if cfg["loss"]["hard_bc"] else None, design.c[None, :])[0]
        J_net = input_jacobian(params, design.c[None, :])[0]
        if cfg["loss"]["hard_bc"]:
            G = np.zeros((mesh.n_nodes, A.shape[1]))
            G[bvp.free_nodes] = J_net
        else:
            G = J_net
        value_net, dJ_fol = network_sensitivity(resp, mesh, k, T_net, G, A)
        csv = out / "sensitivity_fol.csv"
        fieldio.write_sensitivity_csv(csv, dJ_adj, dJ_fol)
        outputs.append(csv)
        scale = np.abs(dJ_adj).max()
        err = np.abs(dJ_adj - dJ_fol).max() / (scale if scale else 1.0)
        print(f"network response J = {value_net:.9g}")
        print(f"adjoint vs network route: max componentwise rel err {err:.3e}")

    if cfg["io"]["write_vtk"]:
        # nodal dJ/dk map: adjoint route with an identity design tangent
        _, dJ_dk = adjoint_sensitivity(resp, bvp, T, np.eye(mesh.n_nodes))
        vtk = out / "sensitivity_map.vtk"
        fieldio.write_vtk(vtk, mesh, {"dJ_dk": dJ_dk, "k": k, "T": T})
        outputs.append(vtk)

    outputs.append(
        _write_run_manifest(
            out, "sensitivity", cfg, args, outputs,
            extra={"J": float(value), "mode": args.mode,
                   "max_rel_err_direct": worst_direct},
        )
    )
    if args.assert_match is not None and args.mode in ("direct", "all"):
        if worst_direct > args.assert_match:
            print(f"CHECK FAILED: adjoint/direct mismatch {worst_direct:.3e} "
                  f"> {args.assert_match:.3e}")
            return EXIT_CHECK
    return EXIT_OK


def _cmd_optimize(args) -> int:
    import numpy as np
    from dataclasses import replace

    from . import fieldio
    from .design import design_to_nodal
    from .design_opt import DesignProblem, FluxConstraint, optimize_nand
    from .responses import eval_response
    from .thermal import solve_linear

    cfg = cfgmod.parse_config(args.config)
    _echo_config(cfg)
    out = _resolve_output_dir(args, cfg)
    mesh = _mesh_from(cfg)
    op = cfg["optimizer"]
    template = _template_from(cfg)
    coeffs = cfg["parameterization"]["coeffs"]
    if coeffs:
        template = template.with_coefficients(np.asarray(coeffs))
    else:
        template = _uniform_start(template, args.start_k)
    constraints = ()
    if op["constraint"] != "none":
        constraints = (FluxConstraint(_response_by_name(op["constraint"]), "eq"),)
    problem = DesignProblem(
        mesh=mesh,
        template=template,
        objective=_response_by_name(op["objective"]),
        constraints=constraints,
        left=cfg["physics"]["left_value"],
        right=cfg["physics"]["right_value"],
        maximize=op["maximize"],
    )

    outputs = []

    def snapshot(it, state):
        if args.snapshot_every and it % args.snapshot_every == 0:
            design = replace(template, c=state.c)
            k, _ = design_to_nodal(design, mesh)
            path = out / f"design_iter_{it:04d}.vtk"
            fieldio.write_vtk(path, mesh, {"k": k})
            outputs.append(path)

    t0 = time.perf_counter()
    state, final = optimize_nand(
        problem,
        mode=op["mode"],
        iters=op["iters"],
        alpha=op["alpha"],
        tol=op["tol"],
        hidden=cfg["network"]["hidden"],
        epochs_per_iter=op["epochs_per_iter"],
        lr=cfg["training"]["lr"],
        seed=cfg["training"]["seed"],
        callback=snapshot if cfg["io"]["write_vtk"] else None,
    )
    seconds = time.perf_counter() - t0

    hist_csv = out / "optimization_history.csv"
    fieldio.write_optimization_csv(hist_csv, state.history, mode=op["mode"])
    outputs.append(hist_csv)

    k_final, _ = design_to_nodal(final, mesh)
    bvp = problem.bvp_for(k_final)
    T_final = solve_linear(bvp)
    J_final = eval_response(problem.objective, mesh, k_final, T_final)
    g_final = [
        eval_response(con.resp, mesh, k_final, T_final) for con in problem.constraints
    ]
    from .thermal import recover_flux

    final_csv = out / "design_final.csv"
    fieldio.write_thermal_csv(final_csv, mesh, T_final, recover_flux(bvp, T_final), k_final)
    outputs.append(final_csv)
    if cfg["io"]["write_vtk"]:
        final_vtk = out / "design_final.vtk"
        fieldio.write_vtk(final_vtk, mesh, {"k": k_final, "T": T_final})
        outputs.append(final_vtk)

    outputs.append(
        _write_run_manifest(
            out, "optimize", cfg, args, outputs,
            extra={"iterations": len(state.history), "J_final": float(J_final),
                   "constraints_final": [float(g) for g in g_final],
                   "seconds": seconds, "final_coefficients": final.c},
        )
    )
    J0 = state.history[0].objective
    print(f"{op['mode']} optimization: {len(state.history)} iterations in {seconds:.2f}s")
    print(f"objective {J0:.6g} -> {J_final:.6g}"
          + (f", |h| = {abs(g_final[0]):.3e}" if g_final else ""))
    return EXIT_OK


def _cmd_compare(args) -> int:
    import numpy as np

    from . import fieldio
    from .thermal import solve_linear
    from .training import evaluate, predict, train_data_driven, train_parametric

    cfg = cfgmod.parse_config(args.config)
    _echo_config(cfg)
    out = _resolve_output_dir(args, cfg)
    mesh = _mesh_from(cfg)
    C, fields_fn, n_in, _ = _corpus_for(cfg, mesh, args.corpus)
    if not 0.0 < args.test_fraction < 1.0:
        raise cfgmod.ConfigError("--test-fraction must lie in (0, 1)")
    n_test = max(1, int(round(args.test_fraction * C.shape[0])))
    if n_test >= C.shape[0]:
        raise cfgmod.ConfigError("corpus too small for the requested test split")
    C_train, C_test = C[:-n_test], C[-n_test:]

    bvp, ctx, ds, n_out = _training_setup(cfg, mesh)
    tr = cfg["training"]

    from dataclasses import replace

    def fem_fields(C_block):
        k_all, _ = fields_fn(C_block)
        T_all = np.stack([
            solve_linear(replace(bvp, k_nodal=k_row)) for k_row in k_all
        ])
        return k_all, T_all

    # physics-driven: labels never used
    params_ph = _init_network(cfg, n_in, n_out)
    params_ph, _ = train_parametric(
        params_ph, ctx, C_train, fields_fn, ds,
        epochs=tr["epochs"], batch_size=tr["batch_size"], lr=tr["lr"], seed=tr["seed"],
    )
    # data-driven twin: same architecture, FEM labels on the training split
    k_train, T_train = fem_fields(C_train)
    params_da = _init_network(cfg, n_in, n_out)
    params_da, _ = train_data_driven(
        params_da, C_train, T_train, ds,
        epochs=tr["epochs"], batch_size=tr["batch_size"], lr=tr["lr"], seed=tr["seed"],
    )

    k_test, T_ref = fem_fields(C_test)
    table_ph = evaluate(mesh, k_test, predict(params_ph, ds, C_test), T_ref)
    table_da = evaluate(mesh, k_test, predict(params_da, ds, C_test), T_ref)

    csv_ph = out / "eval_physics.csv"
    fieldio.write_evaluation_csv(csv_ph, table_ph.err_T, table_ph.err_qx, table_ph.err_qy)
    csv_da = out / "eval_data.csv"
    fieldio.write_evaluation_csv(csv_da, table_da.err_T, table_da.err_qx, table_da.err_qy)
    outputs = [csv_ph, csv_da]
    outputs.append(
        _write_run_manifest(
            out, "compare", cfg, args, outputs,
            extra={"n_train": C_train.shape[0], "n_test": C_test.shape[0],
                   "mean_err_physics": table_ph.mean_err,
                   "mean_err_data": table_da.mean_err},
        )
    )
    print(f"unseen-sample mean Err(T): physics-driven {table_ph.mean_err:.4f}% "
          f"vs data-driven {table_da.mean_err:.4f}% ({C_test.shape[0]} test samples)")
    if args.assert_ordering and table_ph.mean_err > table_da.mean_err:
        print("CHECK FAILED: physics-driven mean Err exceeds data-driven")
        return EXIT_CHECK
    return EXIT_OK


def _cmd_export(args) -> int:
    import numpy as np

    from . import fieldio
    from .mesh import build_grid, upsample

    cfg = cfgmod.parse_config(args.config)
    _echo_config(cfg)
    out = _resolve_output_dir(args, cfg)
    coords, T, q, k = fieldio.read_thermal_csv(args.input)
    xs, ys = np.unique(coords[:, 0]), np.unique(coords[:, 1])
    mesh = build_grid(len(xs), len(ys), float(xs[-1]), float(ys[-1]))
    if coords.shape[0] != mesh.n_nodes or not np.array_equal(mesh.coords, coords):
        raise cfgmod.ConfigError(
            f"{args.input} is not a row-major structured-grid export"
        )
    stacked = np.column_stack([T, q, k])
    fine, values = upsample(mesh, stacked, args.nx, args.ny)
    csv = out / "export.csv"
    fieldio.write_thermal_csv(csv, fine, values[:, 0], values[:, 1:3], values[:, 3])
    outputs = [csv]
    if cfg["io"]["write_vtk"]:
        vtk = out / "export.vtk"
        fieldio.write_vtk(
            vtk, fine, {"T": values[:, 0], "q": values[:, 1:3], "k": values[:, 3]}
        )
        outputs.append(vtk)
    outputs.append(
        _write_run_manifest(
            out, "export", cfg, args, outputs,
            extra={"source": str(args.input), "grid_in": [mesh.nx, mesh.ny],
                   "grid_out": [args.nx, args.ny]},
        )
    )
    print(f"interpolated {mesh.nx}x{mesh.ny} field onto {args.nx}x{args.ny}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="femop",
        description="FEM-constrained neural field solvers and design optimization",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("solve", parents=[common], help="direct FEM solve")
    p.set_defaults(handler=_cmd_solve)

    p = sub.add_parser("samplegen", parents=[common], help="generate a design corpus")
    p.set_defaults(handler=_cmd_samplegen)

    p = sub.add_parser("train", parents=[common], help="train a parametric surrogate")
    p.add_argument("--corpus", default=None, help="existing corpus CSV (default: generate)")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("solve-mf", parents=[common],
                       help="matrix-free single-field solve by loss minimization")
    p.add_argument("--assert-err", type=float, default=None,
                   help="exit 4 if Err(T) exceeds this percentage")
    p.set_defaults(handler=_cmd_solve_mf)

    p = sub.add_parser("sensitivity", parents=[common],
                       help="compare design-gradient routes")
    p.add_argument("--mode", choices=("direct", "fol", "all"), default="all")
    p.add_argument("--checkpoint", default=None, help="trained network for the fol route")
    p.add_argument("--assert-match", type=float, default=None,
                   help="exit 4 if adjoint/direct rel err exceeds this")
    p.set_defaults(handler=_cmd_sensitivity)

    p = sub.add_parser("optimize", parents=[common], help="NAND design optimization")
    p.add_argument("--start-k", type=float, default=0.5,
                   help="uniform conductivity start when no coeffs are configured")
    p.add_argument("--snapshot-every", type=int, default=1,
                   help="VTK design snapshot cadence; 0 disables")
    p.set_defaults(handler=_cmd_optimize)

    p = sub.add_parser("compare", parents=[common],
                       help="physics-driven vs data-driven surrogate errors")
    p.add_argument("--corpus", default=None, help="existing corpus CSV (default: generate)")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--assert-ordering", action="store_true",
                   help="exit 4 unless physics-driven mean Err <= data-driven")
    p.set_defaults(handler=_cmd_compare)

    p = sub.add_parser("export", parents=[common],
                       help="resample a solution CSV onto a display grid")
    p.add_argument("--input", required=True, help="thermal solution CSV")
    p.add_argument("--nx", type=int, default=165)
    p.add_argument("--ny", type=int, default=165)
    p.set_defaults(handler=_cmd_export)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_thread_cap(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv
    try:
        return args.handler(args)
    except cfgmod.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - map known failure modes to exit codes
        name = type(exc).__name__
        if name in ("TrainingDivergedError", "OptimizationDivergedError",
                    "LinAlgError", "FloatingPointError"):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        if isinstance(exc, (ValueError, OSError)):
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise


if __name__ == "__main__":
    sys.exit(main())
