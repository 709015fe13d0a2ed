//! Cooperative energy minimization for discrete labeling problems.
//!
//! A problem is a set of variables with finite label domains, unary cost
//! tables, and pairwise cost tables on graph edges. The energy of a full
//! labeling is the sum of all applicable table entries; the goal is a
//! labeling of minimum energy.
//!
//! The approach decomposes the energy into one tree-structured
//! sub-objective per variable ([`decomp`]), then iterates a team of agents:
//! each agent exactly minimizes its own sub-objective softened by the other
//! agents' current preferences, exchanged through a column-stochastic
//! propagation matrix ([`propagation`], [`solver`]). The iteration yields
//! per-variable preference tables whose minima sum to a lower bound on the
//! optimum under documented conditions, and when all agents come to agree
//! on one labeling at a fixed point, that labeling is provably optimal and
//! a certificate is issued.
//!
//! Supporting pieces: exact tree minimization by dynamic programming
//! ([`tree`]), independent reference minimizers for verification
//! ([`oracle`]), a text file format ([`ncop`]), problem generators
//! ([`gen`]), and a stereo matching case study with a sweep-based grid
//! solver ([`stereo`]).

pub mod decomp;
pub mod gen;
pub mod model;
pub mod ncop;
pub mod oracle;
pub mod par;
pub mod propagation;
pub mod schedule;
pub mod solver;
pub mod stereo;
pub mod tree;

pub use decomp::{
    count_spanning_trees, default_tree_set, grid_hv_decomposition, spanning_tree_decomposition,
    straightforward_decomposition, validate_decomposition, Decomposition, DecompError, GridLayout,
    TreeSet,
};
pub use model::{Assignment, Edge, ModelError, Problem};
pub use propagation::{
    neighbor_degree_matrix, self_loop_degree_matrix, validate_propagation, PropagationError,
    PropagationMatrix,
};
pub use schedule::LambdaSchedule;
pub use solver::{
    certify_global_optimum, closeness_bounds, detect_consensus, detect_equilibrium,
    extract_solution, iterate_basic, iterate_canonical, iterate_simple, lower_bound, run,
    Certificate, CertificateRoute, ClosenessBounds, Form, IterRecord, RunOutcome, RunTrace,
    SoftAssignment, SolverConfig, SolverError,
};
pub use stereo::{
    build_stereo_problem, evaluate_disparity, run_stereo, DisparityMap, DisparityMetrics,
    GrayImage, MatchCost, StereoConfig, StereoError, StereoOutcome,
};
