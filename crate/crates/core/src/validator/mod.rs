//! Statistical checks of the mean-field identities on simulated
//! trajectories.

pub mod boundary;
pub mod experiments;
pub mod residual;
pub mod stats;

pub use boundary::{
    default_symmetry_bases, default_trace_observables, event_jump_sum, layer_flux, layer_flux_table,
    specular_symmetry_check, trace_identity_check, BoundaryObservable, BoundaryReport, SymmetryReport,
};
pub use experiments::{
    coupling_experiment, discrepancy_experiment, moment_experiment, scaling_experiment, CouplingOptions,
    CouplingReport, DiscrepancyReport, MomentReport, ScalingReport,
};
pub use residual::{martingale_form, residual_report, weak_residual, weak_residuals, ResidualReport};
pub use stats::LineFit;
