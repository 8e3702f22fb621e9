//! Problem data for two-stage stochastic mixed-integer linear programs.
//!
//! A [`TwoStageProblem`] is
//!
//! ```text
//!   min  c·x + d·z + E_s[ Q_s(x) ]
//!   s.t. A x + C z ≤ b,   x ∈ {0,1}^n_x,   z ∈ Z
//! ```
//!
//! where scenario `s` has weight `prob` and second stage
//!
//! ```text
//!   Q_s(x) = min { q·y : W y ≥ h − T x,  y ∈ Y }.
//! ```
//!
//! First-stage rows are always `≤`, second-stage rows always `≥`; senses are
//! fixed by convention rather than stored. [`MixedModel`] is the generic MILP
//! carrier consumed by the LP and branch-and-bound solvers.

use crate::matrix::SparseMat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for the scenario probability sum.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Domain of a single decision variable.
///
/// `Continuous` and `Integer` are nonnegative with no finite upper bound;
/// `Binary` is `{0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarDomain {
    Binary,
    Continuous,
    Integer,
}

impl VarDomain {
    /// `(lower, upper, integer)` triple for this domain.
    pub fn bounds(self) -> (f64, f64, bool) {
        match self {
            VarDomain::Binary => (0.0, 1.0, true),
            VarDomain::Continuous => (0.0, f64::INFINITY, false),
            VarDomain::Integer => (0.0, f64::INFINITY, true),
        }
    }

    /// Bounds with integrality dropped (binary relaxes to `[0, 1]`).
    pub fn relaxed_bounds(self) -> (f64, f64) {
        let (lo, hi, _) = self.bounds();
        (lo, hi)
    }
}

/// One scenario of the second stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub prob: f64,
    pub q: Vec<f64>,
    pub w: SparseMat,
    pub t: SparseMat,
    pub h: Vec<f64>,
    pub y_domain: Vec<VarDomain>,
}

/// Full problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageProblem {
    pub n_x: usize,
    /// First-stage binary costs, length `n_x`.
    pub c: Vec<f64>,
    /// Costs of the auxiliary first-stage variables `z`.
    pub d: Vec<f64>,
    /// First-stage coefficients on `x` (rows are `≤`).
    pub a: SparseMat,
    /// First-stage coefficients on `z`.
    pub c_mat: SparseMat,
    pub b: Vec<f64>,
    pub z_domain: Vec<VarDomain>,
    pub scenarios: Vec<Scenario>,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("scenario {index}: {what}")]
    ScenarioDimension { index: usize, what: String },
    #[error("scenario probabilities sum to {sum}, expected 1 within {PROB_SUM_TOL}")]
    ProbabilitySum { sum: f64 },
    #[error("scenario {index} has negative probability {prob}")]
    NegativeProbability { index: usize, prob: f64 },
    #[error("problem has no scenarios")]
    NoScenarios,
    #[error("recourse check requires at least one sample")]
    NoSamples,
    #[error("instance parse error: {0}")]
    Parse(String),
}

impl TwoStageProblem {
    /// Number of auxiliary first-stage variables.
    pub fn n_z(&self) -> usize {
        self.d.len()
    }

    /// Checks all dimension and probability invariants.
    pub fn validate(&self) -> Result<(), ModelError> {
        let dim = |what: &str| ModelError::Dimension(what.to_string());
        if self.c.len() != self.n_x {
            return Err(dim("c must have length n_x"));
        }
        if self.z_domain.len() != self.d.len() {
            return Err(dim("z_domain must match d"));
        }
        if self.a.nrows() != self.b.len() || self.c_mat.nrows() != self.b.len() {
            return Err(dim("A and C must have one row per entry of b"));
        }
        if self.a.ncols() != self.n_x {
            return Err(dim("A must have n_x columns"));
        }
        if self.c_mat.ncols() != self.d.len() {
            return Err(dim("C must have one column per entry of d"));
        }
        if self.scenarios.is_empty() {
            return Err(ModelError::NoScenarios);
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            let sdim = |what: &str| ModelError::ScenarioDimension {
                index: i,
                what: what.to_string(),
            };
            if s.prob < -PROB_SUM_TOL {
                return Err(ModelError::NegativeProbability {
                    index: i,
                    prob: s.prob,
                });
            }
            if s.q.len() != s.y_domain.len() {
                return Err(sdim("q must match y_domain"));
            }
            if s.w.ncols() != s.q.len() {
                return Err(sdim("W must have one column per entry of q"));
            }
            if s.w.nrows() != s.h.len() || s.t.nrows() != s.h.len() {
                return Err(sdim("W and T must have one row per entry of h"));
            }
            if s.t.ncols() != self.n_x {
                return Err(sdim("T must have n_x columns"));
            }
        }
        let sum: f64 = self.scenarios.iter().map(|s| s.prob).sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(ModelError::ProbabilitySum { sum });
        }
        Ok(())
    }

    /// True when `h` and `T` are identical across all scenarios, which is the
    /// precondition for the reduced continuous-cut form built from `E[φ]`.
    pub fn deterministic_h_t(&self) -> bool {
        let first = &self.scenarios[0];
        self.scenarios
            .iter()
            .all(|s| s.h == first.h && s.t == first.t)
    }

    /// Serializes to the instance JSON schema.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&InstanceFile::from(self)).expect("instance serializes")
    }

    /// Parses the instance JSON schema and validates the result.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let raw: InstanceFile =
            serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        let problem = raw.into_problem()?;
        problem.validate()?;
        Ok(problem)
    }
}

// ── Instance JSON schema ────────────────────────────────────────────────────
// Matrices travel as triplet lists `[row, col, value]`; shapes are implied by
// the vector lengths next to them.

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    n_x: usize,
    c: Vec<f64>,
    d: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<(usize, usize, f64)>,
    #[serde(rename = "C")]
    c_mat: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    z_domain: Vec<VarDomain>,
    scenarios: Vec<ScenarioFile>,
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    prob: f64,
    q: Vec<f64>,
    #[serde(rename = "W")]
    w: Vec<(usize, usize, f64)>,
    #[serde(rename = "T")]
    t: Vec<(usize, usize, f64)>,
    h: Vec<f64>,
    y_domain: Vec<VarDomain>,
}

impl From<&TwoStageProblem> for InstanceFile {
    fn from(p: &TwoStageProblem) -> Self {
        InstanceFile {
            n_x: p.n_x,
            c: p.c.clone(),
            d: p.d.clone(),
            a: p.a.triplets(),
            c_mat: p.c_mat.triplets(),
            b: p.b.clone(),
            z_domain: p.z_domain.clone(),
            scenarios: p
                .scenarios
                .iter()
                .map(|s| ScenarioFile {
                    prob: s.prob,
                    q: s.q.clone(),
                    w: s.w.triplets(),
                    t: s.t.triplets(),
                    h: s.h.clone(),
                    y_domain: s.y_domain.clone(),
                })
                .collect(),
        }
    }
}

impl InstanceFile {
    fn into_problem(self) -> Result<TwoStageProblem, ModelError> {
        let mat = |name: &str, nrows, ncols, t: &[(usize, usize, f64)]| {
            SparseMat::from_triplets(nrows, ncols, t)
                .ok_or_else(|| ModelError::Parse(format!("{name}: triplet index out of range")))
        };
        let m1 = self.b.len();
        let a = mat("A", m1, self.n_x, &self.a)?;
        let c_mat = mat("C", m1, self.d.len(), &self.c_mat)?;
        let mut scenarios = Vec::with_capacity(self.scenarios.len());
        for (i, s) in self.scenarios.into_iter().enumerate() {
            let m2 = s.h.len();
            let w = mat(&format!("scenario {i} W"), m2, s.q.len(), &s.w)?;
            let t = mat(&format!("scenario {i} T"), m2, self.n_x, &s.t)?;
            scenarios.push(Scenario {
                prob: s.prob,
                q: s.q,
                w,
                t,
                h: s.h,
                y_domain: s.y_domain,
            });
        }
        Ok(TwoStageProblem {
            n_x: self.n_x,
            c: self.c,
            d: self.d,
            a,
            c_mat,
            b: self.b,
            z_domain: self.z_domain,
            scenarios,
        })
    }
}

// ── Generic MILP carrier ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

/// One linear constraint with sparse coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct RowConstraint {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

/// Mixed-integer linear program in minimization form.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedModel {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub integer: Vec<bool>,
    pub rows: Vec<RowConstraint>,
}

impl MixedModel {
    /// Model with `n` continuous free-at-zero-lower-bound columns and no rows.
    pub fn new(n: usize) -> Self {
        MixedModel {
            objective: vec![0.0; n],
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            integer: vec![false; n],
            rows: Vec::new(),
        }
    }

    pub fn n_cols(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: RowSense, rhs: f64) {
        debug_assert!(coeffs.iter().all(|&(j, _)| j < self.n_cols()));
        self.rows.push(RowConstraint { coeffs, sense, rhs });
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lower[j] = lo;
        self.upper[j] = hi;
    }

    pub fn set_binary(&mut self, j: usize) {
        self.set_bounds(j, 0.0, 1.0);
        self.integer[j] = true;
    }

    /// Applies a variable domain to column `j`.
    pub fn set_domain(&mut self, j: usize, dom: VarDomain) {
        let (lo, hi, int) = dom.bounds();
        self.set_bounds(j, lo, hi);
        self.integer[j] = int;
    }
}

/// Column layout of the extensive form: `x`, then `z`, then one `y` block per
/// scenario.
#[derive(Debug, Clone)]
pub struct ExtensiveLayout {
    pub x: std::ops::Range<usize>,
    pub z: std::ops::Range<usize>,
    pub y: Vec<std::ops::Range<usize>>,
}

/// Column layout matching [`build_extensive_form`].
pub fn extensive_layout(problem: &TwoStageProblem) -> ExtensiveLayout {
    let n = problem.n_x;
    let p = problem.n_z();
    let mut y = Vec::with_capacity(problem.scenarios.len());
    let mut start = n + p;
    for s in &problem.scenarios {
        y.push(start..start + s.q.len());
        start += s.q.len();
    }
    ExtensiveLayout {
        x: 0..n,
        z: n..n + p,
        y,
    }
}

/// Deterministic-equivalent MILP over `(x, z, y_1, …, y_c)`.
///
/// Second-stage objectives are weighted by scenario probability; coupling rows
/// are written `T x + W y ≥ h` so every scenario block shares the `x` columns.
pub fn build_extensive_form(problem: &TwoStageProblem) -> Result<MixedModel, ModelError> {
    problem.validate()?;
    let layout = extensive_layout(problem);
    let total = layout.y.last().map_or(problem.n_x + problem.n_z(), |r| r.end);
    let mut model = MixedModel::new(total);

    for j in layout.x.clone() {
        model.objective[j] = problem.c[j];
        model.set_binary(j);
    }
    for (k, j) in layout.z.clone().enumerate() {
        model.objective[j] = problem.d[k];
        model.set_domain(j, problem.z_domain[k]);
    }
    for (s, scen) in problem.scenarios.iter().enumerate() {
        for (k, j) in layout.y[s].clone().enumerate() {
            model.objective[j] = scen.prob * scen.q[k];
            model.set_domain(j, scen.y_domain[k]);
        }
    }

    for i in 0..problem.b.len() {
        let mut coeffs: Vec<(usize, f64)> = problem.a.row(i).to_vec();
        for &(j, v) in problem.c_mat.row(i) {
            coeffs.push((problem.n_x + j, v));
        }
        model.add_row(coeffs, RowSense::Le, problem.b[i]);
    }
    for (s, scen) in problem.scenarios.iter().enumerate() {
        let base = layout.y[s].start;
        for i in 0..scen.h.len() {
            let mut coeffs: Vec<(usize, f64)> = scen.t.row(i).to_vec();
            for &(j, v) in scen.w.row(i) {
                coeffs.push((base + j, v));
            }
            model.add_row(coeffs, RowSense::Ge, scen.h[i]);
        }
    }
    Ok(model)
}

/// Second-stage model `min q·y  s.t.  W y ≥ h − T x` for one scenario at a
/// fixed first-stage point. With `relaxed` the integrality of `y` is dropped
/// (binaries become `[0, 1]` intervals).
pub fn subproblem_model(scenario: &Scenario, x: &[f64], relaxed: bool) -> MixedModel {
    let n_y = scenario.q.len();
    let mut model = MixedModel::new(n_y);
    model.objective = scenario.q.clone();
    for j in 0..n_y {
        if relaxed {
            let (lo, hi) = scenario.y_domain[j].relaxed_bounds();
            model.set_bounds(j, lo, hi);
        } else {
            model.set_domain(j, scenario.y_domain[j]);
        }
    }
    let tx = scenario.t.mul_vec(x);
    for i in 0..scenario.h.len() {
        model.add_row(scenario.w.row(i).to_vec(), RowSense::Ge, scenario.h[i] - tx[i]);
    }
    model
}

/// Outcome of a sampled recourse check; violations are findings, not errors.
#[derive(Debug, Clone)]
pub struct RecourseReport {
    pub samples_checked: usize,
    /// First `(x, scenario index)` whose relaxed subproblem is infeasible.
    pub first_violation: Option<(Vec<f64>, usize)>,
}

impl RecourseReport {
    pub fn holds(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Samples `samples` uniform binary first-stage points (first-stage
/// constraints deliberately ignored) and checks that every scenario's relaxed
/// subproblem stays feasible, i.e. the problem has relatively complete
/// recourse as far as sampling can tell.  Stops at the first violation.
///
/// Panics if `samples` is zero; errors only on solver breakdown.
pub fn check_relatively_complete_recourse(
    problem: &TwoStageProblem,
    samples: usize,
    seed: u64,
) -> Result<RecourseReport, crate::simplex::LpError> {
    use rand::Rng;
    use rand::SeedableRng;

    assert!(samples >= 1, "recourse check needs at least one sample");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for checked in 0..samples {
        let x: Vec<f64> = (0..problem.n_x)
            .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
            .collect();
        for (idx, scenario) in problem.scenarios.iter().enumerate() {
            match crate::simplex::solve_relaxed_subproblem(scenario, &x) {
                Ok(_) => {}
                Err(crate::simplex::LpError::SubproblemNotOptimal(
                    crate::simplex::LpStatus::Infeasible,
                )) => {
                    return Ok(RecourseReport {
                        samples_checked: checked + 1,
                        first_violation: Some((x, idx)),
                    });
                }
                Err(other) => return Err(other),
            }
        }
    }
    Ok(RecourseReport {
        samples_checked: samples,
        first_violation: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_problem(probs: &[f64]) -> TwoStageProblem {
        let scenarios = probs
            .iter()
            .map(|&p| Scenario {
                prob: p,
                q: vec![3.0, 4.0],
                w: SparseMat::from_dense(&[vec![1.0, 1.0]]),
                t: SparseMat::from_dense(&[vec![1.0]]),
                h: vec![2.0],
                y_domain: vec![VarDomain::Binary, VarDomain::Continuous],
            })
            .collect();
        TwoStageProblem {
            n_x: 1,
            c: vec![5.0],
            d: vec![],
            a: SparseMat::zeros(0, 1),
            c_mat: SparseMat::zeros(0, 0),
            b: vec![],
            z_domain: vec![],
            scenarios,
        }
    }

    #[test]
    fn validate_accepts_well_formed() {
        tiny_problem(&[1.0]).validate().unwrap();
        tiny_problem(&[0.5, 0.5]).validate().unwrap();
    }

    #[test]
    fn validate_rejects_bad_probability_sum() {
        let err = tiny_problem(&[0.5, 0.4]).validate().unwrap_err();
        assert!(matches!(err, ModelError::ProbabilitySum { .. }));
    }

    #[test]
    fn validate_rejects_dimension_mismatch() {
        let mut p = tiny_problem(&[1.0]);
        p.scenarios[0].h.push(0.0);
        assert!(matches!(
            p.validate().unwrap_err(),
            ModelError::ScenarioDimension { index: 0, .. }
        ));
    }

    #[test]
    fn extensive_form_single_scenario_keeps_costs() {
        let p = tiny_problem(&[1.0]);
        let m = build_extensive_form(&p).unwrap();
        assert_eq!(m.objective, vec![5.0, 3.0, 4.0]);
        assert_eq!(m.rows.len(), 1);
        assert_eq!(m.rows[0].sense, RowSense::Ge);
        // Coupling row is T x + W y ≥ h.
        assert_eq!(m.rows[0].coeffs, vec![(0, 1.0), (1, 1.0), (2, 1.0)]);
        assert_eq!(m.rows[0].rhs, 2.0);
        assert!(m.integer[0] && m.integer[1] && !m.integer[2]);
    }

    #[test]
    fn extensive_form_weights_second_stage_by_probability() {
        let p = tiny_problem(&[0.5, 0.5]);
        let m = build_extensive_form(&p).unwrap();
        assert_eq!(m.objective, vec![5.0, 1.5, 2.0, 1.5, 2.0]);
        let layout = extensive_layout(&p);
        assert_eq!(layout.y[0], 1..3);
        assert_eq!(layout.y[1], 3..5);
    }

    #[test]
    fn subproblem_shifts_rhs_by_t_x() {
        let p = tiny_problem(&[1.0]);
        let m = subproblem_model(&p.scenarios[0], &[1.0], false);
        assert_eq!(m.rows[0].rhs, 1.0);
        assert!(m.integer[0]);
        let relaxed = subproblem_model(&p.scenarios[0], &[1.0], true);
        assert!(!relaxed.integer[0]);
        assert_eq!(relaxed.upper[0], 1.0);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let p = tiny_problem(&[0.25, 0.75]);
        let text = p.to_json();
        let back = TwoStageProblem::from_json(&text).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn json_schema_uses_expected_keys() {
        let text = tiny_problem(&[1.0]).to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["n_x", "c", "d", "A", "C", "b", "z_domain", "scenarios"] {
            assert!(v.get(key).is_some(), "missing key {key}");
        }
        let s = &v["scenarios"][0];
        for key in ["prob", "q", "W", "T", "h", "y_domain"] {
            assert!(s.get(key).is_some(), "missing scenario key {key}");
        }
    }

    #[test]
    fn json_rejects_garbage() {
        assert!(TwoStageProblem::from_json("{\"n_x\": 1}").is_err());
        assert!(TwoStageProblem::from_json("not json").is_err());
    }

    #[test]
    fn recourse_check_passes_feasible_problem() {
        // The continuous y₂ absorbs any rhs, so recourse always holds.
        let p = tiny_problem(&[0.5, 0.5]);
        let report = check_relatively_complete_recourse(&p, 20, 7).unwrap();
        assert!(report.holds());
        assert_eq!(report.samples_checked, 20);
    }

    #[test]
    fn recourse_check_finds_violation() {
        // y ≤ 1 bounded but h − Tx = 2 − x ≥ 1 > capacity when x = 0:
        // the row y₁ ≥ 2 − x is infeasible for every sampled x.
        let mut p = tiny_problem(&[1.0]);
        p.scenarios[0].y_domain[1] = VarDomain::Binary;
        p.scenarios[0].w = SparseMat::from_dense(&[vec![1.0, 0.0]]);
        let report = check_relatively_complete_recourse(&p, 50, 7).unwrap();
        let (x, scenario) = report.first_violation.expect("violation expected");
        assert_eq!(scenario, 0);
        assert_eq!(x.len(), 1);
        assert!(report.samples_checked <= 50);
    }
}
