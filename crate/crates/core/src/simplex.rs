//! Bounded-variable primal simplex.
//!
//! Solves the LP relaxation of a [`MixedModel`] (integrality is ignored) in
//! two phases with artificial variables, maintaining a dense basis inverse
//! that is refreshed periodically. The solver reports, besides the primal
//! vector, the equality-form row multipliers (`row_duals`) and the
//! nonnegative reduced costs of structural variables that finish nonbasic at
//! a finite upper bound (`upper_bound_duals`). For a second-stage program
//!
//! ```text
//!   min { q·y : W y ≥ r, 0 ≤ y ≤ 1 }
//! ```
//!
//! these are exactly the `(φ, ψ)` of the bounded dual
//! `max { φ·r − 1·ψ : φW − ψ ≤ q, φ ≥ 0, ψ ≥ 0 }`.
//!
//! Pivot selection is Dantzig's rule with ties broken by lowest variable
//! index, switching to Bland's rule after a run of degenerate steps, so a
//! repeated solve of the same model is bitwise reproducible.

use crate::model::{MixedModel, RowSense, Scenario};
use crate::subproblem_model;
use thiserror::Error;

/// Bound violation accepted on basic variables.
pub const DEFAULT_FEAS_TOL: f64 = 1e-7;
/// Reduced-cost threshold for entering candidates. Tighter than the
/// feasibility tolerance so that reported duals satisfy their sign
/// constraints to within 1e-9.
pub const DEFAULT_OPT_TOL: f64 = 1e-9;

const PIVOT_TOL: f64 = 1e-9;
const DEGENERATE_STEP: f64 = 1e-10;
const REFRESH_PERIOD: u64 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// `+∞` when infeasible, `−∞` when unbounded.
    pub objective: f64,
    pub primal: Vec<f64>,
    /// One multiplier per model row; `≥ 0` for `≥` rows at optimality.
    pub row_duals: Vec<f64>,
    /// One entry per column; nonzero only for columns nonbasic at a finite
    /// upper bound.
    pub upper_bound_duals: Vec<f64>,
    pub iterations: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    /// Pivot cap; `0` selects a generous size-dependent default. Hitting it
    /// indicates a bug, not a hard instance.
    pub max_iterations: u64,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            feas_tol: DEFAULT_FEAS_TOL,
            opt_tol: DEFAULT_OPT_TOL,
            max_iterations: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("simplex iteration limit reached after {0} pivots")]
    IterationLimit(u64),
    #[error("numerical breakdown in simplex: {0}")]
    Numerical(&'static str),
    #[error("malformed LP: {0}")]
    BadModel(String),
    #[error("relaxed subproblem terminated {0:?} instead of optimal")]
    SubproblemNotOptimal(LpStatus),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
    /// Nonbasic with both bounds infinite; rests at zero.
    Free,
}

struct Tableau {
    m: usize,
    n_struct: usize,
    n_total: usize,
    /// Column-wise coefficients of the equality system, slacks and
    /// artificials included.
    cols: Vec<Vec<(usize, f64)>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    rhs: Vec<f64>,
    state: Vec<VarState>,
    val: Vec<f64>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    pivots_since_refresh: u64,
    iterations: u64,
    degenerate_run: u64,
    opts: LpOptions,
    max_iterations: u64,
}

impl Tableau {
    fn new(model: &MixedModel, opts: LpOptions) -> Result<Self, LpError> {
        let n = model.n_cols();
        let m = model.rows.len();
        for j in 0..n {
            let (lo, hi) = (model.lower[j], model.upper[j]);
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(LpError::BadModel(format!("bad bounds on column {j}")));
            }
            if !model.objective[j].is_finite() {
                return Err(LpError::BadModel(format!("bad objective on column {j}")));
            }
        }
        for (i, row) in model.rows.iter().enumerate() {
            if !row.rhs.is_finite() || row.coeffs.iter().any(|&(_, v)| !v.is_finite()) {
                return Err(LpError::BadModel(format!("bad coefficients in row {i}")));
            }
        }

        // Columns 0..n are structural, n..n+m are slacks; artificials follow.
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n + m];
        for (i, row) in model.rows.iter().enumerate() {
            for &(j, v) in &row.coeffs {
                cols[j].push((i, v));
            }
        }
        for col in cols.iter_mut().take(n) {
            col.sort_by_key(|&(i, _)| i);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(col.len());
            for &(i, v) in col.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == i => last.1 += v,
                    _ => merged.push((i, v)),
                }
            }
            *col = merged;
        }
        let mut lower = model.lower.clone();
        let mut upper = model.upper.clone();
        let mut rhs = Vec::with_capacity(m);
        for (i, row) in model.rows.iter().enumerate() {
            cols[n + i].push((i, 1.0));
            let (lo, hi) = match row.sense {
                RowSense::Le => (0.0, f64::INFINITY),
                RowSense::Ge => (f64::NEG_INFINITY, 0.0),
                RowSense::Eq => (0.0, 0.0),
            };
            lower.push(lo);
            upper.push(hi);
            rhs.push(row.rhs);
        }

        let mut state = Vec::with_capacity(n + m);
        let mut val = Vec::with_capacity(n + m);
        for j in 0..n + m {
            let (lo, hi) = (lower[j], upper[j]);
            if lo > hi + opts.feas_tol {
                // Crossed bounds: trivially infeasible, signalled by caller.
                return Err(LpError::BadModel(format!(
                    "crossed bounds on column {j}: [{lo}, {hi}]"
                )));
            }
            // Nonbasic start at the finite bound nearest zero; ties at lower.
            let (s, v) = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => {
                    if lo.abs() <= hi.abs() {
                        (VarState::AtLower, lo)
                    } else {
                        (VarState::AtUpper, hi)
                    }
                }
                (true, false) => (VarState::AtLower, lo),
                (false, true) => (VarState::AtUpper, hi),
                (false, false) => (VarState::Free, 0.0),
            };
            state.push(s);
            val.push(v);
        }

        let mut t = Tableau {
            m,
            n_struct: n,
            n_total: n + m,
            cols,
            lower,
            upper,
            cost: vec![0.0; n + m],
            rhs,
            state,
            val,
            basis: Vec::with_capacity(m),
            binv: Vec::new(),
            pivots_since_refresh: 0,
            iterations: 0,
            degenerate_run: 0,
            max_iterations: if opts.max_iterations == 0 {
                2_000 + 200 * (n as u64 + m as u64)
            } else {
                opts.max_iterations
            },
            opts,
        };
        t.install_start_basis();
        Ok(t)
    }

    /// Slack basis where the natural slack value fits its bounds, artificial
    /// columns elsewhere; phase-1 costs cover exactly the artificials.
    fn install_start_basis(&mut self) {
        let n = self.n_struct;
        let mut activity = vec![0.0; self.m];
        for j in 0..n {
            if self.val[j] != 0.0 {
                for &(i, v) in &self.cols[j] {
                    activity[i] += v * self.val[j];
                }
            }
        }
        for i in 0..self.m {
            let natural = self.rhs[i] - activity[i];
            let slack = n + i;
            let fits = natural >= self.lower[slack] - self.opts.feas_tol
                && natural <= self.upper[slack] + self.opts.feas_tol;
            if fits {
                self.state[slack] = VarState::Basic(self.basis.len());
                self.val[slack] = natural;
                self.basis.push(slack);
            } else {
                // Slack parks at the bound nearest the natural value; the
                // artificial absorbs the residual with a positive value.
                let parked = if natural < self.lower[slack] {
                    self.state[slack] = VarState::AtLower;
                    self.lower[slack]
                } else {
                    self.state[slack] = VarState::AtUpper;
                    self.upper[slack]
                };
                self.val[slack] = parked;
                let residual = natural - parked;
                let art = self.n_total;
                self.cols.push(vec![(i, residual.signum())]);
                self.lower.push(0.0);
                self.upper.push(f64::INFINITY);
                self.cost.push(1.0);
                self.state.push(VarState::Basic(self.basis.len()));
                self.val.push(residual.abs());
                self.basis.push(art);
                self.n_total += 1;
            }
        }
        self.refactorize().expect("start basis is triangular");
    }

    /// Rebuilds the dense basis inverse and the basic values from scratch.
    fn refactorize(&mut self) -> Result<(), LpError> {
        let m = self.m;
        self.binv = vec![0.0; m * m];
        if m == 0 {
            self.pivots_since_refresh = 0;
            return Ok(());
        }
        // Gauss-Jordan on [B | I] with partial pivoting.
        let mut work = vec![0.0; m * m];
        for (pos, &j) in self.basis.iter().enumerate() {
            for &(i, v) in &self.cols[j] {
                work[i * m + pos] = v;
            }
        }
        for i in 0..m {
            self.binv[i * m + i] = 1.0;
        }
        for k in 0..m {
            let mut best = k;
            let mut best_abs = work[k * m + k].abs();
            for r in k + 1..m {
                let a = work[r * m + k].abs();
                if a > best_abs {
                    best = r;
                    best_abs = a;
                }
            }
            if best_abs < 1e-12 {
                return Err(LpError::Numerical("singular basis"));
            }
            if best != k {
                for c in 0..m {
                    work.swap(k * m + c, best * m + c);
                    self.binv.swap(k * m + c, best * m + c);
                }
            }
            let piv = work[k * m + k];
            for c in 0..m {
                work[k * m + c] /= piv;
                self.binv[k * m + c] /= piv;
            }
            for r in 0..m {
                if r == k {
                    continue;
                }
                let f = work[r * m + k];
                if f != 0.0 {
                    for c in 0..m {
                        work[r * m + c] -= f * work[k * m + c];
                        self.binv[r * m + c] -= f * self.binv[k * m + c];
                    }
                }
            }
        }
        // x_B = B⁻¹ (b − N x_N).
        let mut r = self.rhs.clone();
        for j in 0..self.n_total {
            if !matches!(self.state[j], VarState::Basic(_)) && self.val[j] != 0.0 {
                for &(i, v) in &self.cols[j] {
                    r[i] -= v * self.val[j];
                }
            }
        }
        for pos in 0..m {
            let mut x = 0.0;
            for k in 0..m {
                x += self.binv[pos * m + k] * r[k];
            }
            self.val[self.basis[pos]] = x;
        }
        self.pivots_since_refresh = 0;
        Ok(())
    }

    /// y = c_Bᵀ B⁻¹ for the current cost vector.
    fn duals(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for pos in 0..m {
            let cb = self.cost[self.basis[pos]];
            if cb != 0.0 {
                for k in 0..m {
                    y[k] += cb * self.binv[pos * m + k];
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[f64]) -> f64 {
        let mut d = self.cost[j];
        for &(i, v) in &self.cols[j] {
            d -= y[i] * v;
        }
        d
    }

    /// Improvement magnitude if `j` may enter, else `None`.
    fn violation(&self, j: usize, d: f64) -> Option<f64> {
        let tol = self.opts.opt_tol;
        match self.state[j] {
            VarState::Basic(_) => None,
            _ if self.lower[j] == self.upper[j] => None,
            VarState::AtLower => (d < -tol).then_some(-d),
            VarState::AtUpper => (d > tol).then_some(d),
            VarState::Free => (d.abs() > tol).then_some(d.abs()),
        }
    }

    fn select_entering(&self, y: &[f64], bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.n_total {
            if matches!(self.state[j], VarState::Basic(_)) {
                continue;
            }
            let d = self.reduced_cost(j, y);
            if let Some(v) = self.violation(j, d) {
                if bland {
                    return Some((j, d));
                }
                if best.map_or(true, |(_, _, bv)| v > bv) {
                    best = Some((j, d, v));
                }
            }
        }
        best.map(|(j, d, _)| (j, d))
    }

    /// One simplex step for the entering column. Returns `false` when the
    /// problem is unbounded in the improving direction.
    fn step(&mut self, j: usize, d: f64) -> Result<bool, LpError> {
        let m = self.m;
        let dir: f64 = match self.state[j] {
            VarState::AtLower => 1.0,
            VarState::AtUpper => -1.0,
            VarState::Free => {
                if d < 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            VarState::Basic(_) => unreachable!("entering column is nonbasic"),
        };
        let mut w = vec![0.0; m];
        for &(i, v) in &self.cols[j] {
            if v != 0.0 {
                for r in 0..m {
                    w[r] += self.binv[r * m + i] * v;
                }
            }
        }

        let flip_limit = if self.lower[j].is_finite() && self.upper[j].is_finite() {
            self.upper[j] - self.lower[j]
        } else {
            f64::INFINITY
        };
        let mut best_t = flip_limit;
        let mut leave: Option<usize> = None; // basis position
        for pos in 0..m {
            let beta = -dir * w[pos];
            if beta.abs() <= PIVOT_TOL {
                continue;
            }
            let bj = self.basis[pos];
            let target = if beta > 0.0 {
                self.upper[bj]
            } else {
                self.lower[bj]
            };
            if !target.is_finite() {
                continue;
            }
            let ratio = ((target - self.val[bj]) / beta).max(0.0);
            let better = ratio < best_t - 1e-12
                || (ratio < best_t + 1e-12
                    && leave.map_or(false, |cur| bj < self.basis[cur]));
            if better {
                best_t = ratio;
                leave = Some(pos);
            }
        }

        if !best_t.is_finite() {
            return Ok(false);
        }
        // The ratio test only admits pivots above PIVOT_TOL; re-check before
        // mutating anything so a numerical surprise cannot corrupt the state.
        if let Some(pos) = leave {
            if !(w[pos].abs() > PIVOT_TOL) {
                return Err(LpError::Numerical("pivot below tolerance"));
            }
        }
        let t = best_t;
        self.degenerate_run = if t <= DEGENERATE_STEP {
            self.degenerate_run + 1
        } else {
            0
        };

        // Move basic values along the direction.
        for pos in 0..m {
            let beta = -dir * w[pos];
            if beta != 0.0 {
                let bj = self.basis[pos];
                self.val[bj] += beta * t;
            }
        }

        match leave {
            None => {
                // Bound flip; basis unchanged.
                self.val[j] = if dir > 0.0 { self.upper[j] } else { self.lower[j] };
                self.state[j] = if dir > 0.0 {
                    VarState::AtUpper
                } else {
                    VarState::AtLower
                };
            }
            Some(pos) => {
                let leaving = self.basis[pos];
                let beta = -dir * w[pos];
                // Snap the leaving variable onto the bound it hit.
                let (bound_val, bound_state) = if beta > 0.0 {
                    (self.upper[leaving], VarState::AtUpper)
                } else {
                    (self.lower[leaving], VarState::AtLower)
                };
                self.val[leaving] = bound_val;
                self.state[leaving] = bound_state;
                self.val[j] += dir * t;
                self.state[j] = VarState::Basic(pos);
                self.basis[pos] = j;

                // Product-form update of B⁻¹.
                let piv = w[pos];
                let row_start = pos * m;
                for c in 0..m {
                    self.binv[row_start + c] /= piv;
                }
                for r in 0..m {
                    if r == pos {
                        continue;
                    }
                    let f = w[r];
                    if f != 0.0 {
                        for c in 0..m {
                            self.binv[r * m + c] -= f * self.binv[row_start + c];
                        }
                    }
                }
                self.pivots_since_refresh += 1;
            }
        }
        Ok(true)
    }

    /// Runs the current phase to optimality. Returns `false` on unbounded.
    fn iterate(&mut self) -> Result<bool, LpError> {
        let bland_after = 3 * (self.m as u64 + self.n_total as u64);
        loop {
            if self.iterations >= self.max_iterations {
                return Err(LpError::IterationLimit(self.iterations));
            }
            if self.pivots_since_refresh >= REFRESH_PERIOD {
                self.refactorize()?;
            }
            let y = self.duals();
            let bland = self.degenerate_run > bland_after;
            let Some((j, d)) = self.select_entering(&y, bland) else {
                return Ok(true);
            };
            self.iterations += 1;
            match self.step(j, d) {
                Ok(true) => {}
                Ok(false) => return Ok(false),
                Err(LpError::Numerical(msg)) if self.pivots_since_refresh > 0 => {
                    // A stale inverse can propose a bad pivot; the failed step
                    // left the state untouched, so rebuild and retry.
                    let _ = msg;
                    self.refactorize()?;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn objective(&self) -> f64 {
        (0..self.n_total).map(|j| self.cost[j] * self.val[j]).sum()
    }
}

/// Solves the LP relaxation of `model`.
pub fn solve_lp(model: &MixedModel, opts: &LpOptions) -> Result<LpSolution, LpError> {
    let n = model.n_cols();
    for j in 0..n {
        if model.lower[j] > model.upper[j] {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                objective: f64::INFINITY,
                primal: Vec::new(),
                row_duals: Vec::new(),
                upper_bound_duals: Vec::new(),
                iterations: 0,
            });
        }
    }
    let mut t = Tableau::new(model, *opts)?;

    // Phase 1: drive artificials to zero.
    if t.n_total > t.n_struct + t.m {
        if !t.iterate()? {
            return Err(LpError::Numerical("phase 1 unbounded"));
        }
        if t.objective() > t.opts.feas_tol {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                objective: f64::INFINITY,
                primal: Vec::new(),
                row_duals: Vec::new(),
                upper_bound_duals: Vec::new(),
                iterations: t.iterations,
            });
        }
        for j in t.n_struct + t.m..t.n_total {
            t.cost[j] = 0.0;
            t.upper[j] = 0.0; // pin artificials for phase 2
        }
    }
    for j in 0..n {
        t.cost[j] = model.objective[j];
    }
    t.degenerate_run = 0;
    if !t.iterate()? {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            objective: f64::NEG_INFINITY,
            primal: Vec::new(),
            row_duals: Vec::new(),
            upper_bound_duals: Vec::new(),
            iterations: t.iterations,
        });
    }

    // Clean recompute so the reported point and duals come from a fresh
    // inverse rather than an accumulated product form.
    if t.iterations > 0 && t.m > 0 {
        t.refactorize()?;
    }
    let y = t.duals();
    let mut psi = vec![0.0; n];
    for j in 0..n {
        if t.state[j] == VarState::AtUpper && t.upper[j].is_finite() && t.lower[j] < t.upper[j] {
            psi[j] = (-t.reduced_cost(j, &y)).max(0.0);
        }
    }
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: (0..n).map(|j| model.objective[j] * t.val[j]).sum(),
        primal: t.val[..n].to_vec(),
        row_duals: y,
        upper_bound_duals: psi,
        iterations: t.iterations,
    })
}

/// Value and duals of one scenario's relaxed second stage at `x`.
#[derive(Debug, Clone)]
pub struct RelaxedSubproblem {
    pub value: f64,
    /// Row duals `φ ≥ 0` of the coupling rows.
    pub phi: Vec<f64>,
    /// Upper-bound duals `ψ ≥ 0`, one per second-stage variable.
    pub psi: Vec<f64>,
}

/// Solves `min { q·y : W y ≥ h − T x, y ∈ relaxed Y }` for one scenario.
///
/// The relaxation must be solvable to optimality; anything else (an
/// infeasible subproblem means the instance lacks relatively complete
/// recourse) surfaces as an error.
pub fn solve_relaxed_subproblem(
    scenario: &Scenario,
    x: &[f64],
) -> Result<RelaxedSubproblem, LpError> {
    let model = subproblem_model(scenario, x, true);
    let sol = solve_lp(&model, &LpOptions::default())?;
    if sol.status != LpStatus::Optimal {
        return Err(LpError::SubproblemNotOptimal(sol.status));
    }
    Ok(RelaxedSubproblem {
        value: sol.objective,
        phi: sol.row_duals,
        psi: sol.upper_bound_duals,
    })
}
