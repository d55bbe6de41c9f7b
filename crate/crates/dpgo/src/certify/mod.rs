//! Initialization, minimum-eigenvalue certification, the rank staircase,
//! rounding and error metrics.

mod eig;
mod init;
mod metrics;
mod staircase;

pub use eig::{min_eig, random_unit, ritz, EigInit, EigenResult, PowerConfig};
pub use init::{init_chordal, init_random, init_spanning_tree, spanning_tree_plan, tree_step, ChordalSystem, GsBlock, InitMethod};
pub use metrics::{metrics, rotation_orbit_distance, round_pose, round_solution, translation_rmse, Metrics};
pub use staircase::{
    certify_estimate, eig_start, escape_saddle, initialize, CertifyBackend, solve, solve_problem, staircase, CertificateCheck, EscapeRecord, RankRecord, SolveConfig, SolveOutcome,
    SolveReport, StaircaseResult,
};
