//! Integer L-shaped solver for two-stage stochastic binary programs.
//!
//! The master problem over `(x, z, θ)` runs branch and bound with a callback
//! at every integral candidate that prices the second stage and either adds
//! an optimality cut or accepts the candidate as incumbent.  Two cut
//! strategies are supported: the standard strategy prices candidates with
//! exact integral values only, while the alternating strategy first tries a
//! continuous cut built from relaxed duals and falls back to an integer cut
//! only when the continuous one fails to separate.  In surrogate mode the
//! second-stage values come from trained predictors instead of scenario
//! solves; multiplicative shifts `μ, ν ∈ (0, 1]` guard against predictions
//! that overestimate, and a retry schedule lowers the shifts when a run ends
//! without any accepted candidate.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::matrix::SparseMat;
use crate::mip::{
    self, CallbackAction, CallbackError, Candidate, MipError, MipOptions, MipStatus,
};
use crate::model::{
    build_extensive_form, subproblem_model, MixedModel, ModelError, RowConstraint, RowSense,
    TwoStageProblem,
};
use crate::simplex::{solve_lp, solve_relaxed_subproblem, LpError, LpOptions, LpStatus};
use crate::surrogate::{check_compatible, featurize_smkp, featurize_sslp, Network, SurrogateError};

/// Slack applied to acceptance and separation comparisons so that cuts tight
/// at the candidate still separate robustly under LP tolerances.
pub const VALUE_EPS: f64 = 2e-7;
/// Default multiplicative step between retry schedule entries.
pub const SHIFT_STEP: f64 = 0.95;
/// Smallest shift value the default schedule reaches.
pub const SHIFT_FLOOR: f64 = 0.7;
/// Tolerance on the `value ≥ L` precondition of integer cuts.
const CUT_VALUE_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum LShapedError {
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("lp error: {0}")]
    Lp(#[from] LpError),
    #[error("mip error: {0}")]
    Mip(MipError),
    #[error("surrogate error: {0}")]
    Surrogate(#[from] SurrogateError),
    #[error("scenario {scenario}: second stage infeasible; relatively complete recourse violated")]
    RecourseViolation { scenario: usize },
    #[error("joint scenario relaxation is unbounded; no finite lower bound exists")]
    UnboundedLowerBound,
    #[error("integer cut needs value ≥ lower bound (value {value}, bound {lower})")]
    InvalidCut { value: f64, lower: f64 },
    #[error("first stage is infeasible")]
    MasterInfeasible,
    #[error("no feasible solution; retry schedule exhausted after shifts {0:?}")]
    NoFeasibleSolution(Vec<(f64, f64)>),
    #[error("time limit exhausted before any incumbent was accepted")]
    TimeLimitNoIncumbent,
    #[error("missing predictor: {0}")]
    MissingPredictor(&'static str),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

impl From<MipError> for LShapedError {
    fn from(e: MipError) -> Self {
        match e {
            // Errors raised by our own callback travel boxed through the
            // branch-and-bound layer; unwrap them back into their own type.
            MipError::Callback(inner) => match inner.downcast::<LShapedError>() {
                Ok(own) => *own,
                Err(other) => LShapedError::Mip(MipError::Callback(other)),
            },
            other => LShapedError::Mip(other),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn round_binary(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| if *v >= 0.5 { 1.0 } else { 0.0 }).collect()
}

// ---------------------------------------------------------------------------
// Cuts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutKind {
    IntegerExact,
    IntegerHeuristic,
    ContinuousExact,
    ContinuousHeuristic,
}

impl CutKind {
    /// Stable tag used to aggregate cut counts in branch-and-bound stats.
    pub fn tag(self) -> u32 {
        match self {
            CutKind::IntegerExact => 1,
            CutKind::IntegerHeuristic => 2,
            CutKind::ContinuousExact => 3,
            CutKind::ContinuousHeuristic => 4,
        }
    }

    pub fn is_integer(self) -> bool {
        matches!(self, CutKind::IntegerExact | CutKind::IntegerHeuristic)
    }

    pub fn is_exact(self) -> bool {
        matches!(self, CutKind::IntegerExact | CutKind::ContinuousExact)
    }
}

/// Optimality cut `coeff_x · x + coeff_theta · θ ≤ rhs` with `coeff_theta`
/// fixed at −1, i.e. `θ ≥ coeff_x · x − rhs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cut {
    pub kind: CutKind,
    pub coeff_x: Vec<f64>,
    pub coeff_theta: f64,
    pub rhs: f64,
    /// Binary candidate that generated the cut.
    pub origin_x: Vec<f64>,
}

impl Cut {
    /// Lower bound the cut implies on `θ` at the point `x`.
    pub fn bound_at(&self, x: &[f64]) -> f64 {
        dot(&self.coeff_x, x) - self.rhs
    }

    /// Lazy-constraint row over the master column layout `[x, z, θ]`.
    pub fn to_row(&self, n_z: usize) -> mip::CutRow {
        let n_x = self.coeff_x.len();
        let mut coeffs: Vec<(usize, f64)> = self
            .coeff_x
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| (j, *v))
            .collect();
        coeffs.push((n_x + n_z, self.coeff_theta));
        mip::CutRow {
            coeffs,
            rhs: self.rhs,
            tag: self.kind.tag(),
        }
    }
}

/// Integer optimality cut at a binary candidate: tight at `x_star` where it
/// reads `θ ≥ value`, and relaxing to at most the global lower bound `l` at
/// every other binary point.
pub fn make_integer_cut(
    x_star: &[f64],
    value: f64,
    l: f64,
    heuristic: bool,
) -> Result<Cut, LShapedError> {
    if value < l - CUT_VALUE_TOL {
        return Err(LShapedError::InvalidCut { value, lower: l });
    }
    let delta = (value - l).max(0.0);
    let origin = round_binary(x_star);
    let mut support = 0usize;
    let coeff_x: Vec<f64> = origin
        .iter()
        .map(|&xi| {
            if xi >= 0.5 {
                support += 1;
                delta
            } else {
                -delta
            }
        })
        .collect();
    Ok(Cut {
        kind: if heuristic {
            CutKind::IntegerHeuristic
        } else {
            CutKind::IntegerExact
        },
        coeff_x,
        coeff_theta: -1.0,
        rhs: delta * support as f64 - value,
        origin_x: origin,
    })
}

/// Continuous optimality cut `θ ≥ e_phi_h − e_phi_t · x − e_one_psi` from
/// probability-weighted dual reductions.
pub fn make_continuous_cut(
    e_phi_h: f64,
    e_phi_t: &[f64],
    e_one_psi: f64,
    heuristic: bool,
    origin_x: &[f64],
) -> Cut {
    continuous_cut_parts(
        e_phi_h - e_one_psi,
        e_phi_t.to_vec(),
        heuristic,
        origin_x,
    )
}

/// Continuous cut in the reduced form available when `h` and `T` are the
/// same in every scenario: `θ ≥ e_phi · (h − T x) − e_one_psi`.  Equals the
/// general form built from the corresponding full reductions.
pub fn make_continuous_cut_reduced(
    e_phi: &[f64],
    e_one_psi: f64,
    h: &[f64],
    t: &SparseMat,
    heuristic: bool,
    origin_x: &[f64],
) -> Result<Cut, LShapedError> {
    if e_phi.len() != h.len() || t.nrows() != h.len() {
        return Err(LShapedError::BadConfig(format!(
            "reduced continuous cut dimensions disagree: e_phi {}, h {}, T {}x{}",
            e_phi.len(),
            h.len(),
            t.nrows(),
            t.ncols()
        )));
    }
    Ok(continuous_cut_parts(
        dot(e_phi, h) - e_one_psi,
        t.mul_transpose_vec(e_phi),
        heuristic,
        origin_x,
    ))
}

fn continuous_cut_parts(
    intercept: f64,
    slope: Vec<f64>,
    heuristic: bool,
    origin_x: &[f64],
) -> Cut {
    Cut {
        kind: if heuristic {
            CutKind::ContinuousHeuristic
        } else {
            CutKind::ContinuousExact
        },
        coeff_x: slope.iter().map(|v| -v).collect(),
        coeff_theta: -1.0,
        rhs: -intercept,
        origin_x: origin_x.to_vec(),
    }
}

// ---------------------------------------------------------------------------
// Second-stage evaluation
// ---------------------------------------------------------------------------

/// Exact expected second-stage value: probability-weighted integral optima.
pub fn evaluate_q(problem: &TwoStageProblem, x: &[f64]) -> Result<f64, LShapedError> {
    let mut total = 0.0;
    for (idx, scenario) in problem.scenarios.iter().enumerate() {
        let model = subproblem_model(scenario, x, false);
        let sol = mip::solve_mip(&model, &MipOptions::default())?;
        match sol.status {
            MipStatus::Optimal => total += scenario.prob * sol.objective,
            _ => return Err(LShapedError::RecourseViolation { scenario: idx }),
        }
    }
    Ok(total)
}

/// Probability-weighted aggregates of the relaxed subproblem duals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reductions {
    /// Expected relaxed optimum.
    pub q_tilde: f64,
    /// `E[φ · h]`.
    pub e_phi_h: f64,
    /// `E[Tᵀ φ]`, one entry per first-stage binary.
    pub e_phi_t: Vec<f64>,
    /// `E[1ᵀ ψ]`.
    pub e_one_psi: f64,
    /// `E[φ]`; present only when `h` and `T` are scenario-independent.
    pub e_phi: Option<Vec<f64>>,
}

/// Relaxed expected second-stage value plus the dual reductions that build
/// continuous cuts.  Satisfies `q_tilde = e_phi_h − e_phi_t · x − e_one_psi`
/// up to LP tolerances (strong duality per scenario).
pub fn evaluate_q_relaxed(
    problem: &TwoStageProblem,
    x: &[f64],
) -> Result<Reductions, LShapedError> {
    let deterministic = problem.deterministic_h_t();
    let mut red = Reductions {
        q_tilde: 0.0,
        e_phi_h: 0.0,
        e_phi_t: vec![0.0; problem.n_x],
        e_one_psi: 0.0,
        e_phi: deterministic.then(|| vec![0.0; problem.scenarios[0].h.len()]),
    };
    for (idx, scenario) in problem.scenarios.iter().enumerate() {
        let sub = solve_relaxed_subproblem(scenario, x)
            .map_err(|_| LShapedError::RecourseViolation { scenario: idx })?;
        let p = scenario.prob;
        red.q_tilde += p * sub.value;
        red.e_phi_h += p * dot(&sub.phi, &scenario.h);
        for (acc, v) in red.e_phi_t.iter_mut().zip(scenario.t.mul_transpose_vec(&sub.phi)) {
            *acc += p * v;
        }
        red.e_one_psi += p * sub.psi.iter().sum::<f64>();
        if let Some(e_phi) = &mut red.e_phi {
            for (acc, v) in e_phi.iter_mut().zip(&sub.phi) {
                *acc += p * v;
            }
        }
    }
    Ok(red)
}

/// Global lower bound on the expected second-stage value: per scenario, the
/// relaxed subproblem is minimized jointly over the second-stage variables
/// and a free `x ∈ [0,1]^n` with first-stage constraints ignored, which
/// bounds `Q(x)` below for every feasible binary `x`.
pub fn compute_lower_bound_l(problem: &TwoStageProblem) -> Result<f64, LShapedError> {
    let n_x = problem.n_x;
    let mut total = 0.0;
    for (idx, scenario) in problem.scenarios.iter().enumerate() {
        let n_y = scenario.q.len();
        let mut m = MixedModel::new(n_x + n_y);
        for j in 0..n_x {
            m.set_bounds(j, 0.0, 1.0);
        }
        for (k, dom) in scenario.y_domain.iter().enumerate() {
            let (lo, hi) = dom.relaxed_bounds();
            m.set_bounds(n_x + k, lo, hi);
            m.objective[n_x + k] = scenario.q[k];
        }
        // Coupling rows W y ≥ h − T x stated as T x + W y ≥ h.
        for r in 0..scenario.h.len() {
            let mut coeffs: Vec<(usize, f64)> = scenario.t.row(r).to_vec();
            coeffs.extend(scenario.w.row(r).iter().map(|&(j, v)| (n_x + j, v)));
            m.add_row(coeffs, RowSense::Ge, scenario.h[r]);
        }
        let sol = solve_lp(&m, &LpOptions::default())?;
        match sol.status {
            LpStatus::Optimal => total += scenario.prob * sol.objective,
            LpStatus::Infeasible => {
                return Err(LShapedError::RecourseViolation { scenario: idx })
            }
            LpStatus::Unbounded => return Err(LShapedError::UnboundedLowerBound),
        }
    }
    Ok(total)
}

/// One-sided lower confidence bound `mean − k·sd` with
/// `k = sqrt((1 − alpha) / alpha)`; `sd` is the sample standard deviation.
pub fn chebyshev_lower_bound(samples: &[f64], alpha: f64) -> Result<f64, LShapedError> {
    if samples.len() < 2 {
        return Err(LShapedError::BadConfig(
            "confidence bound needs at least two samples".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(LShapedError::BadConfig(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(mean);
    }
    let k = ((1.0 - alpha) / alpha).sqrt();
    Ok(mean - k * sd)
}

/// Optimum of the deterministic-equivalent monolithic MILP; the correctness
/// oracle for every decomposition run on desk-scale instances.
pub fn extensive_form_optimum(problem: &TwoStageProblem) -> Result<f64, LShapedError> {
    let model = build_extensive_form(problem)?;
    let sol = mip::solve_mip(&model, &MipOptions::default())?;
    match sol.status {
        MipStatus::Optimal => Ok(sol.objective),
        _ => Err(LShapedError::MasterInfeasible),
    }
}

// ---------------------------------------------------------------------------
// Predictor plumbing
// ---------------------------------------------------------------------------

/// How first-stage candidates are mapped to predictor features, and how
/// relaxed predictor outputs decode into continuous-cut ingredients.
#[derive(Debug, Clone)]
pub enum FeatureMap {
    /// Features `[capacities; x]`; relaxed outputs use the general layout
    /// `[q̃, e_phi_h, e_phi_t (n_x entries), e_one_psi]`.
    Sslp { capacities: Vec<f64> },
    /// Features are the effective right-hand side `h − T x` of the shared
    /// coupling rows; relaxed outputs use the reduced layout
    /// `[q̃, e_phi (m entries), e_one_psi]`.
    Smkp { h: Vec<f64>, t: SparseMat },
}

impl FeatureMap {
    pub fn feature_len(&self) -> usize {
        match self {
            FeatureMap::Sslp { capacities } => 2 * capacities.len(),
            FeatureMap::Smkp { h, .. } => h.len(),
        }
    }

    pub fn relaxed_output_len(&self) -> usize {
        match self {
            FeatureMap::Sslp { capacities } => capacities.len() + 3,
            FeatureMap::Smkp { h, .. } => h.len() + 2,
        }
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>, LShapedError> {
        Ok(match self {
            FeatureMap::Sslp { capacities } => featurize_sslp(capacities, x)?,
            // The featurizer computes h + M·x, so the stored technology
            // matrix enters negated to yield the effective rhs h − T x.
            FeatureMap::Smkp { h, t } => featurize_smkp(h, &t.negated(), x)?,
        })
    }
}

/// Trained predictors for one instance family.
#[derive(Debug, Clone)]
pub struct PredictorBundle {
    pub feature_map: FeatureMap,
    /// Single-output estimate of the integral value `Q(x)`.
    pub value_net: Option<Arc<Network>>,
    /// Multi-output estimate of the relaxed value and cut reductions.
    pub relaxed_net: Option<Arc<Network>>,
}

/// Estimate of the relaxed second-stage value at a candidate, with the cut
/// it supports: `θ ≥ intercept − slope · x`.
#[derive(Debug, Clone)]
pub struct ContinuousEstimate {
    pub q_tilde: f64,
    pub intercept: f64,
    pub slope: Vec<f64>,
}

impl ContinuousEstimate {
    fn to_cut(&self, heuristic: bool, origin_x: &[f64]) -> Cut {
        continuous_cut_parts(self.intercept, self.slope.clone(), heuristic, origin_x)
    }
}

// ---------------------------------------------------------------------------
// Solver configuration and result
// ---------------------------------------------------------------------------

/// Where second-stage values come from during the tree search.
#[derive(Clone)]
pub enum SecondStage {
    /// Scenario MILP/LP solves; the exact method.
    Exact,
    /// Trained network predictions.
    Predicted(PredictorBundle),
    /// Exact values served through the prediction path, scaled to
    /// overestimate by `(inflate − 1)·|value|`.  `inflate = 1` is the perfect
    /// predictor used to validate surrogate-mode plumbing; `inflate > 1`
    /// exercises the retry protocol.
    PredictedOracle { inflate: f64 },
}

impl SecondStage {
    fn is_exact(&self) -> bool {
        matches!(self, SecondStage::Exact)
    }
}

#[derive(Clone)]
pub struct SolveConfig {
    /// Try a continuous cut before pricing candidates with integral values.
    pub alternating: bool,
    pub second_stage: SecondStage,
    /// Down-shift on integral-value estimates in the acceptance test.
    pub mu: f64,
    /// Down-shift on relaxed-value estimates in the continuous-cut test.
    pub nu: f64,
    /// Shift pairs to try in order when a run accepts no candidate; empty
    /// derives the default schedule from `(mu, nu)` by repeated scaling with
    /// [`SHIFT_STEP`] down to [`SHIFT_FLOOR`].
    pub retry_schedule: Vec<(f64, f64)>,
    /// Wall-clock budget over all retries.
    pub time_limit_secs: Option<f64>,
    /// Node budget per run; 0 means unlimited.
    pub max_nodes: u64,
    /// Additional master rows, e.g. a probabilistic objective bound.
    pub extra_master_rows: Vec<RowConstraint>,
    /// Known feasible `(x, z)`; its exact value seeds the upper bound.
    pub initial_incumbent: Option<(Vec<f64>, Vec<f64>)>,
}

impl SolveConfig {
    pub fn exact(alternating: bool) -> Self {
        SolveConfig {
            alternating,
            second_stage: SecondStage::Exact,
            mu: 1.0,
            nu: 1.0,
            retry_schedule: Vec::new(),
            time_limit_secs: None,
            max_nodes: 0,
            extra_master_rows: Vec::new(),
            initial_incumbent: None,
        }
    }

    pub fn surrogate(alternating: bool, bundle: PredictorBundle, mu: f64, nu: f64) -> Self {
        SolveConfig {
            second_stage: SecondStage::Predicted(bundle),
            mu,
            nu,
            ..SolveConfig::exact(alternating)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    NodeLimit,
    TimeLimit,
}

/// Wall-clock breakdown; `total_secs` covers everything including retries
/// and, for two-phase runs, the warm-start phase recorded separately in
/// `warm_start_secs`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub total_secs: f64,
    pub exact_second_stage_secs: f64,
    pub relaxed_second_stage_secs: f64,
    pub prediction_secs: f64,
    /// Final exact evaluation plus warm-start upper-bound pricing.
    pub final_eval_secs: f64,
    pub warm_start_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x_star: Vec<f64>,
    pub z_star: Vec<f64>,
    /// `c·x + d·z + Q(x)` with `Q` evaluated exactly at the incumbent.
    pub first_stage_objective: f64,
    /// Filled by benchmarking harnesses comparing against an oracle.
    pub gap_vs_oracle: Option<f64>,
    pub node_count: u64,
    pub lp_solves: u64,
    pub n_integer_cuts: u64,
    pub n_continuous_cuts: u64,
    /// Candidate-level exact integral evaluations during the tree search.
    pub n_exact_subproblem_solves: u64,
    /// Candidate-level relaxed evaluations during the tree search.
    pub n_relaxed_subproblem_solves: u64,
    pub n_predictions: u64,
    /// Exact evaluations outside the tree: final pricing and warm starts.
    pub n_final_exact_evals: u64,
    pub retries_used: u64,
    pub final_mu: f64,
    pub final_nu: f64,
    pub lower_bound: f64,
    pub times: PhaseTimes,
    /// Every cut generated by callbacks, in emission order.
    pub cuts: Vec<Cut>,
}

/// Master row `c·x + d·z + θ ≥ bound`.
pub fn probabilistic_bound_row(problem: &TwoStageProblem, bound: f64) -> RowConstraint {
    let n_x = problem.n_x;
    let n_z = problem.n_z();
    let mut coeffs: Vec<(usize, f64)> = Vec::new();
    for (j, v) in problem.c.iter().enumerate() {
        if *v != 0.0 {
            coeffs.push((j, *v));
        }
    }
    for (k, v) in problem.d.iter().enumerate() {
        if *v != 0.0 {
            coeffs.push((n_x + k, *v));
        }
    }
    coeffs.push((n_x + n_z, 1.0));
    RowConstraint {
        coeffs,
        sense: RowSense::Ge,
        rhs: bound,
    }
}

// ---------------------------------------------------------------------------
// Internal evaluation source
// ---------------------------------------------------------------------------

#[derive(Default)]
struct Counters {
    n_exact: u64,
    n_relaxed: u64,
    n_predictions: u64,
    exact_secs: f64,
    relaxed_secs: f64,
    predict_secs: f64,
}

enum SourceKind<'a> {
    Exact,
    Oracle { inflate: f64 },
    Nets { bundle: &'a PredictorBundle },
}

struct Source<'a> {
    problem: &'a TwoStageProblem,
    kind: SourceKind<'a>,
    counters: Counters,
}

fn overestimate(value: f64, inflate: f64) -> f64 {
    value + (inflate - 1.0) * value.abs()
}

impl<'a> Source<'a> {
    fn new(problem: &'a TwoStageProblem, config: &'a SolveConfig) -> Result<Self, LShapedError> {
        let kind = match &config.second_stage {
            SecondStage::Exact => SourceKind::Exact,
            SecondStage::PredictedOracle { inflate } => {
                if *inflate < 1.0 {
                    return Err(LShapedError::BadConfig(
                        "oracle inflation must be at least 1".into(),
                    ));
                }
                SourceKind::Oracle { inflate: *inflate }
            }
            SecondStage::Predicted(bundle) => {
                let f_len = bundle.feature_map.feature_len();
                if let Some(net) = &bundle.value_net {
                    check_compatible(net, f_len, 1)?;
                }
                if let Some(net) = &bundle.relaxed_net {
                    check_compatible(net, f_len, bundle.feature_map.relaxed_output_len())?;
                }
                if bundle.value_net.is_none() {
                    return Err(LShapedError::MissingPredictor("integral-value network"));
                }
                if config.alternating && bundle.relaxed_net.is_none() {
                    return Err(LShapedError::MissingPredictor(
                        "relaxed-value network required by the alternating strategy",
                    ));
                }
                SourceKind::Nets { bundle }
            }
        };
        Ok(Source {
            problem,
            kind,
            counters: Counters::default(),
        })
    }

    fn heuristic(&self) -> bool {
        !matches!(self.kind, SourceKind::Exact)
    }

    fn integral(&mut self, x: &[f64]) -> Result<f64, LShapedError> {
        let t = Instant::now();
        match &self.kind {
            SourceKind::Exact => {
                let v = evaluate_q(self.problem, x)?;
                self.counters.n_exact += 1;
                self.counters.exact_secs += t.elapsed().as_secs_f64();
                Ok(v)
            }
            SourceKind::Oracle { inflate } => {
                let v = overestimate(evaluate_q(self.problem, x)?, *inflate);
                self.counters.n_predictions += 1;
                self.counters.predict_secs += t.elapsed().as_secs_f64();
                Ok(v)
            }
            SourceKind::Nets { bundle } => {
                let net = bundle.value_net.as_ref().expect("validated at construction");
                let features = bundle.feature_map.features(x)?;
                let out = net.forward(&features)?;
                self.counters.n_predictions += 1;
                self.counters.predict_secs += t.elapsed().as_secs_f64();
                Ok(out[0])
            }
        }
    }

    fn relaxed(&mut self, x: &[f64]) -> Result<ContinuousEstimate, LShapedError> {
        let t = Instant::now();
        match &self.kind {
            SourceKind::Exact => {
                let est = exact_continuous_estimate(self.problem, x)?;
                self.counters.n_relaxed += 1;
                self.counters.relaxed_secs += t.elapsed().as_secs_f64();
                Ok(est)
            }
            SourceKind::Oracle { inflate } => {
                // The served value overestimates while the cut ingredients
                // stay exact, mimicking a predictor whose scalar output and
                // cut outputs disagree.
                let mut est = exact_continuous_estimate(self.problem, x)?;
                est.q_tilde = overestimate(est.q_tilde, *inflate);
                self.counters.n_predictions += 1;
                self.counters.predict_secs += t.elapsed().as_secs_f64();
                Ok(est)
            }
            SourceKind::Nets { bundle } => {
                let net = bundle
                    .relaxed_net
                    .as_ref()
                    .ok_or(LShapedError::MissingPredictor("relaxed-value network"))?;
                let features = bundle.feature_map.features(x)?;
                let out = net.forward(&features)?;
                let est = decode_relaxed_output(&bundle.feature_map, &out);
                self.counters.n_predictions += 1;
                self.counters.predict_secs += t.elapsed().as_secs_f64();
                Ok(est)
            }
        }
    }
}

fn exact_continuous_estimate(
    problem: &TwoStageProblem,
    x: &[f64],
) -> Result<ContinuousEstimate, LShapedError> {
    let red = evaluate_q_relaxed(problem, x)?;
    // The reduced form is preferred when available; both agree up to LP
    // tolerances because the reductions share the same duals.
    if let Some(e_phi) = &red.e_phi {
        let scenario = &problem.scenarios[0];
        return Ok(ContinuousEstimate {
            q_tilde: red.q_tilde,
            intercept: dot(e_phi, &scenario.h) - red.e_one_psi,
            slope: scenario.t.mul_transpose_vec(e_phi),
        });
    }
    Ok(ContinuousEstimate {
        q_tilde: red.q_tilde,
        intercept: red.e_phi_h - red.e_one_psi,
        slope: red.e_phi_t,
    })
}

fn decode_relaxed_output(map: &FeatureMap, out: &[f64]) -> ContinuousEstimate {
    match map {
        FeatureMap::Sslp { capacities } => {
            let n_x = capacities.len();
            ContinuousEstimate {
                q_tilde: out[0],
                intercept: out[1] - out[n_x + 2],
                slope: out[2..2 + n_x].to_vec(),
            }
        }
        FeatureMap::Smkp { h, t } => {
            let m = h.len();
            let e_phi = &out[1..1 + m];
            ContinuousEstimate {
                q_tilde: out[0],
                intercept: dot(e_phi, h) - out[1 + m],
                slope: t.mul_transpose_vec(e_phi),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Main solve loop
// ---------------------------------------------------------------------------

fn build_master(problem: &TwoStageProblem, l: f64, extra: &[RowConstraint]) -> MixedModel {
    let n_x = problem.n_x;
    let n_z = problem.n_z();
    let theta = n_x + n_z;
    let mut m = MixedModel::new(theta + 1);
    for j in 0..n_x {
        m.set_binary(j);
        m.objective[j] = problem.c[j];
    }
    for (k, dom) in problem.z_domain.iter().enumerate() {
        m.set_domain(n_x + k, *dom);
        m.objective[n_x + k] = problem.d[k];
    }
    m.set_bounds(theta, l, f64::INFINITY);
    m.objective[theta] = 1.0;
    for i in 0..problem.b.len() {
        let mut coeffs: Vec<(usize, f64)> = problem.a.row(i).to_vec();
        coeffs.extend(problem.c_mat.row(i).iter().map(|&(j, v)| (n_x + j, v)));
        m.add_row(coeffs, RowSense::Le, problem.b[i]);
    }
    m.rows.extend(extra.iter().cloned());
    m
}

fn validate_config(config: &SolveConfig) -> Result<(), LShapedError> {
    for (name, v) in [("mu", config.mu), ("nu", config.nu)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(LShapedError::BadConfig(format!(
                "{name} must lie in (0, 1], got {v}"
            )));
        }
    }
    Ok(())
}

fn effective_schedule(config: &SolveConfig) -> Vec<(f64, f64)> {
    if config.second_stage.is_exact() {
        return vec![(config.mu, config.nu)];
    }
    if !config.retry_schedule.is_empty() {
        return config.retry_schedule.clone();
    }
    let mut schedule = Vec::new();
    let (mut mu, mut nu) = (config.mu, config.nu);
    while mu >= SHIFT_FLOOR - 1e-12 && nu >= SHIFT_FLOOR - 1e-12 {
        schedule.push((mu, nu));
        mu *= SHIFT_STEP;
        nu *= SHIFT_STEP;
    }
    schedule
}

enum RunOutcome {
    Solved(Box<SolveResult>),
    NoIncumbent { hit_time_limit: bool },
}

fn run_once(
    problem: &TwoStageProblem,
    config: &SolveConfig,
    l: f64,
    mu: f64,
    nu: f64,
    remaining_secs: Option<f64>,
) -> Result<RunOutcome, LShapedError> {
    let n_x = problem.n_x;
    let n_z = problem.n_z();
    let theta_col = n_x + n_z;
    let master = build_master(problem, l, &config.extra_master_rows);

    let mut source = Source::new(problem, config)?;
    let mut cuts: Vec<Cut> = Vec::new();
    let mut final_eval_secs = 0.0;
    let mut n_final_evals = 0u64;

    let initial_incumbent = match &config.initial_incumbent {
        Some((wx, wz)) => {
            let t = Instant::now();
            let q = evaluate_q(problem, wx)?;
            final_eval_secs += t.elapsed().as_secs_f64();
            n_final_evals += 1;
            let objective = dot(&problem.c, wx) + dot(&problem.d, wz) + q;
            let mut values = wx.clone();
            values.extend_from_slice(wz);
            values.push(q);
            Some((values, objective))
        }
        None => None,
    };

    let options = MipOptions {
        max_nodes: config.max_nodes,
        time_limit_secs: remaining_secs,
        initial_incumbent,
    };

    let run_started = Instant::now();
    let alternating = config.alternating;
    let heuristic = source.heuristic();
    let sol = mip::solve_with_callback(&master, &options, |cand: &Candidate| {
        let x = round_binary(&cand.values[..n_x]);
        let theta_star = cand.values[theta_col];
        if alternating {
            let est = source.relaxed(&x).map_err(box_err)?;
            if nu * est.q_tilde > theta_star + VALUE_EPS {
                let cut = est.to_cut(heuristic, &x);
                cuts.push(cut.clone());
                return Ok(CallbackAction::AddCuts(vec![cut.to_row(n_z)]));
            }
        }
        let q = source.integral(&x).map_err(box_err)?;
        if mu * q <= theta_star + VALUE_EPS {
            Ok(CallbackAction::Accept)
        } else {
            // Predictions below the global lower bound would invert the cut;
            // clamping degrades them to the always-valid `θ ≥ L`.
            let cut = make_integer_cut(&x, q.max(l), l, heuristic).map_err(box_err)?;
            cuts.push(cut.clone());
            Ok(CallbackAction::AddCuts(vec![cut.to_row(n_z)]))
        }
    })?;
    let run_secs = run_started.elapsed().as_secs_f64();
    let hit_time_limit = remaining_secs.is_some_and(|lim| run_secs >= lim);

    if !sol.objective.is_finite() {
        return Ok(RunOutcome::NoIncumbent { hit_time_limit });
    }

    let status = match sol.status {
        MipStatus::Optimal => SolveStatus::Optimal,
        _ if hit_time_limit => SolveStatus::TimeLimit,
        _ => SolveStatus::NodeLimit,
    };
    let x_star = round_binary(&sol.primal[..n_x]);
    let z_star = sol.primal[n_x..theta_col].to_vec();
    let t = Instant::now();
    let final_q = evaluate_q(problem, &x_star)?;
    final_eval_secs += t.elapsed().as_secs_f64();
    n_final_evals += 1;
    let first_stage_objective = dot(&problem.c, &x_star) + dot(&problem.d, &z_star) + final_q;

    let tag_count = |tag: u32| sol.callback.by_tag.get(&tag).copied().unwrap_or(0);
    let c = source.counters;
    Ok(RunOutcome::Solved(Box::new(SolveResult {
        status,
        x_star,
        z_star,
        first_stage_objective,
        gap_vs_oracle: None,
        node_count: sol.node_count,
        lp_solves: sol.lp_solves,
        n_integer_cuts: tag_count(CutKind::IntegerExact.tag())
            + tag_count(CutKind::IntegerHeuristic.tag()),
        n_continuous_cuts: tag_count(CutKind::ContinuousExact.tag())
            + tag_count(CutKind::ContinuousHeuristic.tag()),
        n_exact_subproblem_solves: c.n_exact,
        n_relaxed_subproblem_solves: c.n_relaxed,
        n_predictions: c.n_predictions,
        n_final_exact_evals: n_final_evals,
        retries_used: 0,
        final_mu: mu,
        final_nu: nu,
        lower_bound: l,
        times: PhaseTimes {
            total_secs: 0.0,
            exact_second_stage_secs: c.exact_secs,
            relaxed_second_stage_secs: c.relaxed_secs,
            prediction_secs: c.predict_secs,
            final_eval_secs,
            warm_start_secs: 0.0,
        },
        cuts,
    })))
}

fn box_err(e: LShapedError) -> CallbackError {
    Box::new(e)
}

/// Solves the two-stage problem by branch and cut on the master with
/// second-stage pricing per [`SolveConfig`].  Surrogate runs that accept no
/// candidate are retried with the next shift pair in the schedule.
pub fn solve(problem: &TwoStageProblem, config: &SolveConfig) -> Result<SolveResult, LShapedError> {
    problem.validate()?;
    validate_config(config)?;
    let started = Instant::now();
    let l = compute_lower_bound_l(problem)?;
    let schedule = effective_schedule(config);
    let mut attempted = Vec::new();
    for (attempt, &(mu, nu)) in schedule.iter().enumerate() {
        let remaining = config
            .time_limit_secs
            .map(|lim| (lim - started.elapsed().as_secs_f64()).max(0.0));
        match run_once(problem, config, l, mu, nu, remaining)? {
            RunOutcome::Solved(mut result) => {
                result.retries_used = attempt as u64;
                result.times.total_secs = started.elapsed().as_secs_f64();
                return Ok(*result);
            }
            RunOutcome::NoIncumbent { hit_time_limit } => {
                attempted.push((mu, nu));
                if hit_time_limit {
                    return Err(LShapedError::TimeLimitNoIncumbent);
                }
                if config.second_stage.is_exact() {
                    return Err(LShapedError::MasterInfeasible);
                }
            }
        }
    }
    Err(LShapedError::NoFeasibleSolution(attempted))
}

/// Surrogate phase followed by an exact phase warm-started with the phase-1
/// incumbent; optionally adds the probabilistic objective bound
/// `c·x + d·z + θ ≥ chebyshev_lower_bound(history, 0.10)`.
pub fn two_phase_solve(
    problem: &TwoStageProblem,
    config: &SolveConfig,
    use_prob_bound: bool,
    history: &[f64],
) -> Result<SolveResult, LShapedError> {
    if config.second_stage.is_exact() {
        return Err(LShapedError::BadConfig(
            "two-phase solve needs a surrogate-mode phase-1 configuration".into(),
        ));
    }
    let started = Instant::now();
    let phase1 = solve(problem, config)?;
    let warm_secs = started.elapsed().as_secs_f64();

    let mut extra = config.extra_master_rows.clone();
    if use_prob_bound {
        let bound = chebyshev_lower_bound(history, 0.10)?;
        extra.push(probabilistic_bound_row(problem, bound));
    }
    let exact_config = SolveConfig {
        alternating: config.alternating,
        second_stage: SecondStage::Exact,
        mu: 1.0,
        nu: 1.0,
        retry_schedule: Vec::new(),
        time_limit_secs: config.time_limit_secs,
        max_nodes: config.max_nodes,
        extra_master_rows: extra,
        initial_incumbent: Some((phase1.x_star.clone(), phase1.z_star.clone())),
    };
    let mut result = solve(problem, &exact_config)?;
    result.times.warm_start_secs = warm_secs;
    result.times.total_secs += warm_secs;
    result.n_predictions += phase1.n_predictions;
    Ok(result)
}
