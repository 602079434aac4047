"""femop: neural surrogates for FEM-discretized fields, trained without labeled data.

The package couples three layers:

* classical finite elements on structured quad grids (``mesh``, ``thermal``,
  ``elastic``), serving both as reference solvers and as the residual engine
  behind every training loss;
* a small dense-network core with an exact input-Jacobian and the reverse-mode
  machinery needed to differentiate losses that themselves contain that
  Jacobian (``network``, ``losses``, ``training``);
* design tooling: Fourier/nodal field parameterizations, adjoint and direct
  sensitivities of flux responses, and a gradient-projection optimizer for
  constrained conductivity design (``design``, ``responses``, ``design_opt``).

Submodules and the names below load lazily on first attribute access, so that
``import femop`` (and the command-line entry point in particular) stays cheap
until numerical work actually starts.
"""

import importlib

_SUBMODULES = (
    "mesh",
    "thermal",
    "elastic",
    "design",
    "network",
    "losses",
    "responses",
    "training",
    "design_opt",
    "fieldio",
    "config",
    "cli",
)

# re-exported name -> defining submodule
_EXPORTS = {
    "Mesh": "mesh",
    "QuadratureRule": "mesh",
    "ShapeEval": "mesh",
    "build_grid": "mesh",
    "gauss_rule": "mesh",
    "shape_eval": "mesh",
    "cached_geometry": "mesh",
    "interpolate": "mesh",
    "upsample": "mesh",
    "ThermalBVP": "thermal",
    "ConductivityLaw": "thermal",
    "WellPosednessError": "thermal",
    "assemble": "thermal",
    "solve_linear": "thermal",
    "solve_newton": "thermal",
    "recover_flux": "thermal",
    "relative_error": "thermal",
    "ElasticBVP": "elastic",
    "solve_elastic": "elastic",
    "recover_stress": "elastic",
    "constitutive_plane_stress": "elastic",
    "ProjectionSpec": "design",
    "FourierDesign": "design",
    "NodalDesign": "design",
    "CONDUCTIVITY_BOUNDS": "design",
    "design_to_nodal": "design",
    "fourier_basis": "design",
    "gen_random_fourier_samples": "design",
    "gen_ellipse_samples": "design",
    "MlpParams": "network",
    "init_mlp": "network",
    "forward": "network",
    "forward_pass": "network",
    "input_jacobian": "network",
    "loss_gradient": "network",
    "DirichletScatter": "network",
    "AdamState": "network",
    "adam_step": "network",
    "save_checkpoint": "network",
    "load_checkpoint": "network",
    "LossWeights": "losses",
    "LossContext": "losses",
    "loss_context": "losses",
    "total_loss": "losses",
    "FluxResponse": "responses",
    "SQ_FLUX_Y": "responses",
    "SQ_FLUX_X_SHIFTED": "responses",
    "eval_response": "responses",
    "adjoint_sensitivity": "responses",
    "direct_sensitivity": "responses",
    "network_sensitivity": "responses",
    "TrainHistory": "training",
    "TrainingDivergedError": "training",
    "fourier_field_map": "training",
    "nodal_field_map": "training",
    "train_parametric": "training",
    "train_data_driven": "training",
    "solve_matrix_free": "training",
    "predict": "training",
    "evaluate": "training",
    "OptimState": "design_opt",
    "OptimizationDivergedError": "design_opt",
    "minimize_projected": "design_opt",
    "optimize_nand": "design_opt",
    "DesignProblem": "design_opt",
    "FluxConstraint": "design_opt",
    "RunConfig": "config",
    "ConfigError": "config",
    "parse_config": "config",
    "default_config": "config",
}

__all__ = list(_SUBMODULES) + list(_EXPORTS)

__version__ = "0.1.0"


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    if name in _EXPORTS:
        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        value = getattr(module, name)
        globals()[name] = value
        return value
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | set(__all__))
