//! Parameterized generators for the two benchmark instance families and the
//! labeled-example pipelines feeding the surrogate trainer.
//!
//! A *family* fixes everything the predictors must learn against: costs,
//! revenues, demands and scenario data for the server-location family;
//! `W`, scenario objectives and first-stage data for the knapsack family.
//! Individual *instances* within a family redraw only the deterministic
//! right-hand-side data (server capacities, respectively `T` and `h`), so a
//! feature vector plus the family determines the second-stage value.
//!
//! Example labels come in two flavours: `Full` prices a sampled `(instance,
//! x)` pair against every scenario, `Implicit` against one uniformly drawn
//! scenario — an unbiased but noisy label costing `1/c` of the full one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lshaped::{evaluate_q, evaluate_q_relaxed, FeatureMap, LShapedError};
use crate::matrix::SparseMat;
use crate::mip::{solve_mip, MipOptions, MipStatus};
use crate::model::{subproblem_model, Scenario, TwoStageProblem, VarDomain};
use crate::surrogate::Dataset;

#[derive(Debug, thiserror::Error)]
pub enum FamilyError {
    #[error("invalid family parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Solve(#[from] LShapedError),
}

/// Derives an independent 64-bit stream seed from a base seed; splitmix64
/// finalizer, so nearby `(base, stream)` pairs give unrelated outputs.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}

fn uniform_ints(rng: &mut ChaCha8Rng, range: (u32, u32), n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(range.0..=range.1) as f64).collect()
}

fn check_range(name: &str, range: (u32, u32)) -> Result<(), FamilyError> {
    if range.0 > range.1 {
        return Err(FamilyError::BadParams(format!(
            "{name} range [{}, {}] is empty",
            range.0, range.1
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Server-location family
// ---------------------------------------------------------------------------

/// Stochastic server location: open servers in stage one, assign present
/// clients to open servers in stage two for revenue, with per-server
/// capacities and a penalized continuous overflow.  Client presence is the
/// stochastic right-hand side; capacities are the per-instance data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslpParams {
    pub n_servers: usize,
    pub n_clients: usize,
    pub n_scenarios: usize,
    /// Per-instance server capacities, uniform integers.
    #[serde(default = "default_capacity_range")]
    pub capacity_range: (u32, u32),
    /// Family data: per-server opening costs, uniform integers.
    #[serde(default = "default_opening_cost_range")]
    pub opening_cost_range: (u32, u32),
    /// Family data: per-(server, client) assignment revenues, uniform
    /// integers, entering the second-stage objective negated.
    #[serde(default = "default_small_range")]
    pub revenue_range: (u32, u32),
    /// Family data: per-client demands, uniform integers.
    #[serde(default = "default_small_range")]
    pub demand_range: (u32, u32),
    /// Probability a client is present in a scenario.
    #[serde(default = "default_presence_prob")]
    pub presence_prob: f64,
    /// Objective cost of one unit of capacity overflow.
    #[serde(default = "default_overflow_penalty")]
    pub overflow_penalty: f64,
    /// Seed of the family-level draws shared by all instances.
    #[serde(default)]
    pub family_seed: u64,
}

fn default_capacity_range() -> (u32, u32) {
    (75, 300)
}
fn default_opening_cost_range() -> (u32, u32) {
    (40, 80)
}
fn default_small_range() -> (u32, u32) {
    (1, 25)
}
fn default_presence_prob() -> f64 {
    0.5
}
fn default_overflow_penalty() -> f64 {
    1000.0
}

impl SslpParams {
    pub fn new(n_servers: usize, n_clients: usize, n_scenarios: usize) -> Self {
        SslpParams {
            n_servers,
            n_clients,
            n_scenarios,
            capacity_range: (75, 300),
            opening_cost_range: (40, 80),
            revenue_range: (1, 25),
            demand_range: (1, 25),
            presence_prob: 0.5,
            overflow_penalty: 1000.0,
            family_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), FamilyError> {
        if self.n_servers < 1 || self.n_clients < 1 || self.n_scenarios < 1 {
            return Err(FamilyError::BadParams(
                "servers, clients and scenarios must all be at least 1".into(),
            ));
        }
        check_range("capacity", self.capacity_range)?;
        check_range("opening cost", self.opening_cost_range)?;
        check_range("revenue", self.revenue_range)?;
        check_range("demand", self.demand_range)?;
        if !(0.0..=1.0).contains(&self.presence_prob) {
            return Err(FamilyError::BadParams(format!(
                "presence probability {} outside [0, 1]",
                self.presence_prob
            )));
        }
        if self.overflow_penalty <= 0.0 {
            return Err(FamilyError::BadParams(
                "overflow penalty must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Family-level draws shared by every instance of a server-location family.
struct SslpFamilyData {
    opening_costs: Vec<f64>,
    /// `revenues[i][j]`: revenue of server `i` serving client `j`.
    revenues: Vec<Vec<f64>>,
    demands: Vec<f64>,
    /// `presence[s][j] ∈ {0, 1}`.
    presence: Vec<Vec<f64>>,
}

fn sslp_family_data(p: &SslpParams) -> SslpFamilyData {
    let mut cost_rng = stream_rng(p.family_seed, 1);
    let mut revenue_rng = stream_rng(p.family_seed, 2);
    let mut demand_rng = stream_rng(p.family_seed, 3);
    SslpFamilyData {
        opening_costs: uniform_ints(&mut cost_rng, p.opening_cost_range, p.n_servers),
        revenues: (0..p.n_servers)
            .map(|_| uniform_ints(&mut revenue_rng, p.revenue_range, p.n_clients))
            .collect(),
        demands: uniform_ints(&mut demand_rng, p.demand_range, p.n_clients),
        presence: (0..p.n_scenarios)
            .map(|s| {
                let mut rng = stream_rng(p.family_seed, 100 + s as u64);
                (0..p.n_clients)
                    .map(|_| if rng.gen_bool(p.presence_prob) { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect(),
    }
}

fn sslp_capacities(p: &SslpParams, instance_seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(derive_seed(p.family_seed, 4), instance_seed);
    uniform_ints(&mut rng, p.capacity_range, p.n_servers)
}

/// Generates one server-location instance.  Second-stage layout per
/// scenario: `a·b` binary assignment variables `y_{ij}` (index `i·b + j`)
/// followed by `a` continuous overflow variables.  Rows, in `W y ≥ h − T x`
/// form: one per client limiting assignments to present clients
/// (`−Σ_i y_{ij} ≥ −presence`), then one per server coupling load to opened
/// capacity (`−Σ_j d_j y_{ij} + o_i ≥ −v_i x_i`, so `T` carries `v_i`).
pub fn gen_sslp_instance(
    params: &SslpParams,
    seed: u64,
) -> Result<TwoStageProblem, FamilyError> {
    params.validate()?;
    let (a, b) = (params.n_servers, params.n_clients);
    let fam = sslp_family_data(params);
    let capacities = sslp_capacities(params, seed);

    let n_y = a * b + a;
    let n_rows = b + a;
    let mut q = vec![0.0; n_y];
    for i in 0..a {
        for j in 0..b {
            q[i * b + j] = -fam.revenues[i][j];
        }
        q[a * b + i] = params.overflow_penalty;
    }

    let mut w_dense = vec![vec![0.0; n_y]; n_rows];
    let mut t_dense = vec![vec![0.0; a]; n_rows];
    for (j, row) in w_dense.iter_mut().take(b).enumerate() {
        for i in 0..a {
            row[i * b + j] = -1.0;
        }
    }
    for i in 0..a {
        for j in 0..b {
            w_dense[b + i][i * b + j] = -fam.demands[j];
        }
        w_dense[b + i][a * b + i] = 1.0;
        t_dense[b + i][i] = capacities[i];
    }
    let w = SparseMat::from_dense(&w_dense);
    let t = SparseMat::from_dense(&t_dense);

    let mut y_domain = vec![VarDomain::Binary; a * b];
    y_domain.extend(vec![VarDomain::Continuous; a]);

    let prob = 1.0 / params.n_scenarios as f64;
    let scenarios = (0..params.n_scenarios)
        .map(|s| {
            let mut h = fam.presence[s].iter().map(|p| -p).collect::<Vec<f64>>();
            h.extend(vec![0.0; a]);
            Scenario {
                prob,
                q: q.clone(),
                w: w.clone(),
                t: t.clone(),
                h,
                y_domain: y_domain.clone(),
            }
        })
        .collect();

    Ok(TwoStageProblem {
        n_x: a,
        c: fam.opening_costs,
        d: vec![],
        a: SparseMat::zeros(0, a),
        c_mat: SparseMat::zeros(0, 0),
        b: vec![],
        z_domain: vec![],
        scenarios,
    })
}

/// Reads the per-instance capacities back out of a generated instance (they
/// sit on the diagonal of the capacity block of `T`).
pub fn sslp_capacities_of(params: &SslpParams, problem: &TwoStageProblem) -> Vec<f64> {
    let b = params.n_clients;
    let t = &problem.scenarios[0].t;
    (0..params.n_servers)
        .map(|i| {
            t.row(b + i)
                .iter()
                .find(|(col, _)| *col == i)
                .map(|(_, v)| *v)
                .unwrap_or(0.0)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Stochastic-objective knapsack family
// ---------------------------------------------------------------------------

/// Covering knapsacks with a stochastic second-stage objective: `W`, `T` and
/// `h` are shared by all scenarios, only `q_ξ` varies.  `T` and `h` are the
/// per-instance data, so the effective right-hand side `h − T x` (one entry
/// per coupling row) fully determines the second stage within a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmkpParams {
    /// First-stage binaries.
    pub n_first: usize,
    /// First-stage covering rows.
    pub m_first: usize,
    /// Second-stage binaries.
    pub n_second: usize,
    /// Coupling rows; also the feature length.
    pub m_coupling: usize,
    pub n_scenarios: usize,
    #[serde(default = "default_coeff_range")]
    pub t_coeff_range: (u32, u32),
    #[serde(default = "default_coeff_range")]
    pub w_coeff_range: (u32, u32),
    #[serde(default = "default_coeff_range")]
    pub q_range: (u32, u32),
    #[serde(default = "default_first_cost_range")]
    pub first_cost_range: (u32, u32),
    #[serde(default = "default_first_row_coeff_range")]
    pub first_row_coeff_range: (u32, u32),
    /// Upper end of the per-row `h / (W·𝟏)` ratio; keeping it below 1 makes
    /// `y = 𝟏` feasible for every `x`, hence relatively complete recourse.
    #[serde(default = "default_rhs_slack_factor")]
    pub rhs_slack_factor: f64,
    #[serde(default)]
    pub family_seed: u64,
}

fn default_coeff_range() -> (u32, u32) {
    (1, 40)
}
fn default_first_cost_range() -> (u32, u32) {
    (10, 50)
}
fn default_first_row_coeff_range() -> (u32, u32) {
    (1, 20)
}
fn default_rhs_slack_factor() -> f64 {
    0.9
}

impl SmkpParams {
    pub fn new(
        n_first: usize,
        m_first: usize,
        n_second: usize,
        m_coupling: usize,
        n_scenarios: usize,
    ) -> Self {
        SmkpParams {
            n_first,
            m_first,
            n_second,
            m_coupling,
            n_scenarios,
            t_coeff_range: (1, 40),
            w_coeff_range: (1, 40),
            q_range: (1, 40),
            first_cost_range: (10, 50),
            first_row_coeff_range: (1, 20),
            rhs_slack_factor: 0.9,
            family_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), FamilyError> {
        if self.n_first < 1 || self.n_second < 1 || self.m_coupling < 1 || self.n_scenarios < 1 {
            return Err(FamilyError::BadParams(
                "variable counts, coupling rows and scenarios must all be at least 1".into(),
            ));
        }
        check_range("T coefficient", self.t_coeff_range)?;
        check_range("W coefficient", self.w_coeff_range)?;
        check_range("q", self.q_range)?;
        check_range("first-stage cost", self.first_cost_range)?;
        check_range("first-stage row coefficient", self.first_row_coeff_range)?;
        if !(self.rhs_slack_factor >= 0.5 && self.rhs_slack_factor < 1.0) {
            return Err(FamilyError::BadParams(format!(
                "rhs slack factor {} outside [0.5, 1)",
                self.rhs_slack_factor
            )));
        }
        Ok(())
    }
}

struct SmkpFamilyData {
    w: SparseMat,
    /// `W·𝟏` row sums, the scale of the `h` draws.
    w_row_sums: Vec<f64>,
    q_per_scenario: Vec<Vec<f64>>,
    first_costs: Vec<f64>,
    /// Covering rows stored in first-stage `≤` form: `−a·x ≤ −0.5·Σa`.
    first_rows: Vec<Vec<f64>>,
    first_rhs: Vec<f64>,
}

fn smkp_family_data(p: &SmkpParams) -> SmkpFamilyData {
    let mut w_rng = stream_rng(p.family_seed, 1);
    let w_dense: Vec<Vec<f64>> = (0..p.m_coupling)
        .map(|_| uniform_ints(&mut w_rng, p.w_coeff_range, p.n_second))
        .collect();
    let w_row_sums = w_dense.iter().map(|r| r.iter().sum()).collect();

    let mut cost_rng = stream_rng(p.family_seed, 2);
    let mut row_rng = stream_rng(p.family_seed, 3);
    let mut first_rows = Vec::with_capacity(p.m_first);
    let mut first_rhs = Vec::with_capacity(p.m_first);
    for _ in 0..p.m_first {
        let coeffs = uniform_ints(&mut row_rng, p.first_row_coeff_range, p.n_first);
        let half_sum: f64 = 0.5 * coeffs.iter().sum::<f64>();
        first_rows.push(coeffs.iter().map(|v| -v).collect());
        first_rhs.push(-half_sum);
    }

    SmkpFamilyData {
        w: SparseMat::from_dense(&w_dense),
        w_row_sums,
        q_per_scenario: (0..p.n_scenarios)
            .map(|s| {
                let mut rng = stream_rng(p.family_seed, 100 + s as u64);
                uniform_ints(&mut rng, p.q_range, p.n_second)
            })
            .collect(),
        first_costs: uniform_ints(&mut cost_rng, p.first_cost_range, p.n_first),
        first_rows,
        first_rhs,
    }
}

/// Generates one knapsack-family instance: `T` uniform integers, `h` uniform
/// in `[0.5, rhs_slack_factor]·(W·𝟏)` per row.
pub fn gen_smkp_instance(
    params: &SmkpParams,
    seed: u64,
) -> Result<TwoStageProblem, FamilyError> {
    params.validate()?;
    let fam = smkp_family_data(params);

    let mut inst_rng = stream_rng(derive_seed(params.family_seed, 4), seed);
    let t_dense: Vec<Vec<f64>> = (0..params.m_coupling)
        .map(|_| uniform_ints(&mut inst_rng, params.t_coeff_range, params.n_first))
        .collect();
    let t = SparseMat::from_dense(&t_dense);
    let h: Vec<f64> = fam
        .w_row_sums
        .iter()
        .map(|sum| inst_rng.gen_range(0.5..params.rhs_slack_factor) * sum)
        .collect();

    let prob = 1.0 / params.n_scenarios as f64;
    let scenarios = fam
        .q_per_scenario
        .iter()
        .map(|q| Scenario {
            prob,
            q: q.clone(),
            w: fam.w.clone(),
            t: t.clone(),
            h: h.clone(),
            y_domain: vec![VarDomain::Binary; params.n_second],
        })
        .collect();

    Ok(TwoStageProblem {
        n_x: params.n_first,
        c: fam.first_costs,
        d: vec![],
        a: SparseMat::from_dense(&fam.first_rows),
        c_mat: SparseMat::zeros(params.m_first, 0),
        b: fam.first_rhs,
        z_domain: vec![],
        scenarios,
    })
}

// ---------------------------------------------------------------------------
// Unified family handle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FamilyParams {
    Sslp(SslpParams),
    Smkp(SmkpParams),
}

impl FamilyParams {
    pub fn validate(&self) -> Result<(), FamilyError> {
        match self {
            FamilyParams::Sslp(p) => p.validate(),
            FamilyParams::Smkp(p) => p.validate(),
        }
    }

    pub fn n_x(&self) -> usize {
        match self {
            FamilyParams::Sslp(p) => p.n_servers,
            FamilyParams::Smkp(p) => p.n_first,
        }
    }

    pub fn n_scenarios(&self) -> usize {
        match self {
            FamilyParams::Sslp(p) => p.n_scenarios,
            FamilyParams::Smkp(p) => p.n_scenarios,
        }
    }

    pub fn feature_len(&self) -> usize {
        match self {
            FamilyParams::Sslp(p) => 2 * p.n_servers,
            FamilyParams::Smkp(p) => p.m_coupling,
        }
    }

    /// Feature positions that are not binary and therefore get min-max
    /// scaled before entering a network.
    pub fn non_binary_features(&self) -> Vec<usize> {
        match self {
            FamilyParams::Sslp(p) => (0..p.n_servers).collect(),
            FamilyParams::Smkp(p) => (0..p.m_coupling).collect(),
        }
    }

    /// Length of one relaxed-pipeline label: the reduced dual layout
    /// `[q̃, e_phi, e_one_psi]` for the deterministic-rhs knapsack family,
    /// the general layout `[q̃, e_phi_h, e_phi_t, e_one_psi]` otherwise.
    pub fn relaxed_label_len(&self) -> usize {
        match self {
            FamilyParams::Sslp(p) => p.n_servers + 3,
            FamilyParams::Smkp(p) => p.m_coupling + 2,
        }
    }

    pub fn gen_instance(&self, seed: u64) -> Result<TwoStageProblem, FamilyError> {
        match self {
            FamilyParams::Sslp(p) => gen_sslp_instance(p, seed),
            FamilyParams::Smkp(p) => gen_smkp_instance(p, seed),
        }
    }

    /// Feature map tying a generated instance to the family's predictors.
    pub fn feature_map(&self, problem: &TwoStageProblem) -> FeatureMap {
        match self {
            FamilyParams::Sslp(p) => FeatureMap::Sslp {
                capacities: sslp_capacities_of(p, problem),
            },
            FamilyParams::Smkp(_) => {
                let s = &problem.scenarios[0];
                FeatureMap::Smkp {
                    h: s.h.clone(),
                    t: s.t.clone(),
                }
            }
        }
    }

    pub fn features(
        &self,
        problem: &TwoStageProblem,
        x: &[f64],
    ) -> Result<Vec<f64>, FamilyError> {
        Ok(self.feature_map(problem).features(x)?)
    }
}

// ---------------------------------------------------------------------------
// Labeled-example pipelines
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Labeling {
    /// Expectation of integral optima over all scenarios.
    #[default]
    Full,
    /// Integral optimum of one uniformly drawn scenario.
    Implicit,
}

/// Work counters for the labeling pipelines; implicit labeling should cost
/// `1/c` of full labeling in scenario solves.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct GenStats {
    pub n_examples: u64,
    pub n_scenario_solves: u64,
}

/// Integral optimum of a single scenario's subproblem at `x`.
pub fn scenario_value(
    problem: &TwoStageProblem,
    scenario: usize,
    x: &[f64],
) -> Result<f64, LShapedError> {
    let model = subproblem_model(&problem.scenarios[scenario], x, false);
    let sol = solve_mip(&model, &MipOptions::default()).map_err(LShapedError::from)?;
    match sol.status {
        MipStatus::Optimal => Ok(sol.objective),
        _ => Err(LShapedError::RecourseViolation { scenario }),
    }
}

fn random_x(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect()
}

/// Generates `n` integral-value examples.  Each example redraws the
/// per-instance data and a uniform binary `x` from seeds derived per index,
/// so any prefix of a run equals a shorter run with the same seed.
pub fn gen_examples(
    params: &FamilyParams,
    n: usize,
    labeling: Labeling,
    seed: u64,
) -> Result<(Dataset, GenStats), FamilyError> {
    params.validate()?;
    if n < 1 {
        return Err(FamilyError::BadParams("need at least one example".into()));
    }
    let mut data = Dataset::new(params.feature_len(), 1, params.non_binary_features());
    let mut stats = GenStats::default();
    let c = params.n_scenarios();
    for idx in 0..n {
        let ex_seed = derive_seed(seed, idx as u64);
        let problem = params.gen_instance(derive_seed(ex_seed, 1))?;
        let mut xrng = stream_rng(ex_seed, 2);
        let x = random_x(&mut xrng, params.n_x());
        let features = params.features(&problem, &x)?;
        let label = match labeling {
            Labeling::Full => {
                stats.n_scenario_solves += c as u64;
                evaluate_q(&problem, &x)?
            }
            Labeling::Implicit => {
                let mut srng = stream_rng(ex_seed, 3);
                stats.n_scenario_solves += 1;
                scenario_value(&problem, srng.gen_range(0..c), &x)?
            }
        };
        data.push(crate::surrogate::LabeledExample {
            features,
            label: vec![label],
        })
        .expect("shapes fixed above");
        stats.n_examples += 1;
    }
    Ok((data, stats))
}

/// Generates `n` relaxed-pipeline examples labeled with the expected relaxed
/// value and the dual reductions that rebuild a continuous cut; layout per
/// [`FamilyParams::relaxed_label_len`].
pub fn gen_examples_relaxed(
    params: &FamilyParams,
    n: usize,
    seed: u64,
) -> Result<(Dataset, GenStats), FamilyError> {
    params.validate()?;
    if n < 1 {
        return Err(FamilyError::BadParams("need at least one example".into()));
    }
    let mut data = Dataset::new(
        params.feature_len(),
        params.relaxed_label_len(),
        params.non_binary_features(),
    );
    let mut stats = GenStats::default();
    for idx in 0..n {
        let ex_seed = derive_seed(seed, idx as u64);
        let problem = params.gen_instance(derive_seed(ex_seed, 1))?;
        let mut xrng = stream_rng(ex_seed, 2);
        let x = random_x(&mut xrng, params.n_x());
        let features = params.features(&problem, &x)?;
        let red = evaluate_q_relaxed(&problem, &x)?;
        stats.n_scenario_solves += params.n_scenarios() as u64;
        let label = match params {
            FamilyParams::Sslp(_) => {
                let mut label = vec![red.q_tilde, red.e_phi_h];
                label.extend(&red.e_phi_t);
                label.push(red.e_one_psi);
                label
            }
            FamilyParams::Smkp(_) => {
                let mut label = vec![red.q_tilde];
                label.extend(red.e_phi.as_ref().expect("shared h and T"));
                label.push(red.e_one_psi);
                label
            }
        };
        data.push(crate::surrogate::LabeledExample { features, label })
            .expect("shapes fixed above");
        stats.n_examples += 1;
    }
    Ok((data, stats))
}
