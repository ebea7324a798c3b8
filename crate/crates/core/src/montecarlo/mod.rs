//! Replication engine, exhaustive oracles and statistical diagnostics.

pub mod concentration;
pub mod enumeration;
pub mod experiment;
pub mod srswor;
pub mod stats;

pub use concentration::{matrix_concentration_check, tail_bound, ConcentrationRow};
pub use enumeration::{exact_enumeration, Atom, ExactLaw};
pub use experiment::{
    generate_outcomes, generate_x, prepare, run_prepared, run_replications,
    variance_ratio_experiment, CouplingSummary, Mode, OutcomeSpec, PreparedProblem, SimConfig,
    SimulationDiagnostics, Target, XGenerator,
};
pub use srswor::{srswor_bruteforce, srswor_moments, SrsworCase, SrsworMoments};
pub use stats::{ks_distance, normal_cdf};
