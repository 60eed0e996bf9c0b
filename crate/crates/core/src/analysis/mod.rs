//! Closed-form thresholds and bounds, the privacy audit, and checks that
//! compare simulated runs against them.

mod audit;
mod bounds;
mod check;

pub use audit::{
    audit_dp, default_pair_grid, AuditReport, PairAudit, Verdict, Witness, MIN_AUDIT_SAMPLES, SLACK_SIGMAS,
};
pub use bounds::{bound_convergence, c0, signerr_threshold, BoundInputs, Branch, ConvergenceBound};
pub use check::{
    check_config, check_trajectory, clipped_variance_check, replicate, sign_error_frequency, SignErrorCheck,
    TrajectoryCheck, VariancePoint, DEFAULT_REPLICAS,
};
