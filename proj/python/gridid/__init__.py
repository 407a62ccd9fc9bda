"""Joint topology and line-parameter estimation for distribution grids."""

from ._core import (
    EMConfig,
    EMSolution,
    GridSpec,
    MeasurementSet,
    StateParams,
    assemble_admittance,
    build_output,
    build_regressors,
    e_init,
    estimate,
    evaluate,
    extract_topology,
    get_labels,
    injections,
    phi_update,
    read_grid,
    read_measurements,
    read_scenario_measurements,
    weighted_tls,
)

__all__ = [
    "EMConfig",
    "EMSolution",
    "GridSpec",
    "MeasurementSet",
    "StateParams",
    "assemble_admittance",
    "build_output",
    "build_regressors",
    "e_init",
    "estimate",
    "evaluate",
    "extract_topology",
    "get_labels",
    "injections",
    "phi_update",
    "read_grid",
    "read_measurements",
    "read_scenario_measurements",
    "weighted_tls",
]
