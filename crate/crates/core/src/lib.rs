//! Solver stack for two-stage stochastic mixed-integer linear programs.
//!
//! The crate provides, bottom to top:
//!
//! * [`matrix`], [`model`]: sparse data carriers, instance schema, extensive
//!   form.
//! * [`simplex`]: bounded-variable primal simplex with row and upper-bound
//!   duals.
//! * [`mip`]: branch-and-bound with a lazy candidate callback.
//! * [`lshaped`]: integer L-shaped and alternating-cut solvers, exact or
//!   driven by learned second-stage surrogates, plus the two-phase protocol.
//! * [`surrogate`]: feed-forward networks, featurization, and the weighted-L1
//!   Adam trainer.
//! * [`families`]: instance generators and labeled-data pipelines for the two
//!   benchmark families.
//! * [`report`]: quantile aggregation used by the benchmark harness.

pub mod families;
pub mod lshaped;
pub mod matrix;
pub mod mip;
pub mod model;
pub mod report;
pub mod simplex;
pub mod surrogate;

pub use matrix::SparseMat;
pub use mip::{
    solve_mip, solve_with_callback, CallbackAction, Candidate, CutRow, MipError, MipOptions,
    MipSolution, MipStatus,
};
pub use simplex::{
    solve_lp, solve_relaxed_subproblem, LpError, LpOptions, LpSolution, LpStatus,
    RelaxedSubproblem,
};
pub use model::{
    build_extensive_form, check_relatively_complete_recourse, extensive_layout, subproblem_model,
    MixedModel, ModelError, RecourseReport, RowSense, Scenario, TwoStageProblem, VarDomain,
};
pub use lshaped::{
    chebyshev_lower_bound, compute_lower_bound_l, evaluate_q, evaluate_q_relaxed,
    extensive_form_optimum, solve, two_phase_solve, Cut, CutKind, FeatureMap, LShapedError,
    PredictorBundle, SecondStage, SolveConfig, SolveResult, SolveStatus,
};
pub use surrogate::{
    load_dataset, load_network, save_dataset, save_network, train, train_with_report, Dataset,
    LabeledExample, Network, NetworkSpec, SurrogateError, TrainConfig, TrainReport,
};
pub use families::{
    derive_seed, gen_examples, gen_examples_relaxed, gen_smkp_instance, gen_sslp_instance,
    FamilyError, FamilyParams, GenStats, Labeling, SmkpParams, SslpParams,
};
