//! Hierarchical speculative decoding: the verification primitive, the
//! recursive generation engine, the analytical latency model and the
//! hierarchy optimizer, plus toy models and a Monte Carlo simulator.

pub mod domain;
pub mod engine;
pub mod error;
pub mod latency;
pub mod optimizer;
pub mod reproduce;
pub mod sampling;
pub mod simulator;
pub mod synthetic;
pub mod toy;

pub use domain::{
    acceptance_rate, load_problem, validate_matrix, AcceptanceMatrix, Categorical, Diagnostic, HierarchyPlan,
    ModelSpec, Problem, ProblemConfig, Severity, Token,
};
pub use engine::{
    autoregressive_generate, hsd_generate, hsd_generate_with, single_draft_generate, EngineOptions, Generation,
    LanguageModel, OvershootPolicy, SessionStats, VerifyRule,
};
pub use error::{Error, Result};
pub use latency::{expected_latency, gamma, top_rate, LatencyReport};
pub use optimizer::{brute_force, build_graph, optimize, solve, OptimizationResult, Solver};
pub use sampling::{exact_output_distribution, residual_distribution, verify, DraftBatch, VerifyOutcome};
pub use simulator::{compare_modes, simulate, AcceptanceMode, CostMode, SimConfig, SimInput, SimReport};
