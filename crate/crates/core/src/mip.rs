//! Branch-and-bound for [`MixedModel`] with a lazy candidate callback.
//!
//! The tree uses best-bound node selection (ties by node id) and
//! most-fractional branching (ties by lowest column index), so node counts
//! are reproducible. At every node whose LP optimum is integral the callback
//! inspects the candidate and either accepts it as an incumbent or returns
//! cut rows; cuts live in a global pool shared by all nodes.
//!
//! A returned cut that does not separate the current point would loop the
//! node forever, so a cycling guard branches the node on a still-free integer
//! column instead (or discards it when none remains) and counts the event in
//! [`CallbackStats::non_separating`].

use crate::model::{MixedModel, RowSense};
use crate::simplex::{solve_lp, LpError, LpOptions, LpStatus};
use std::collections::BTreeMap;
use std::time::Instant;
use thiserror::Error;

/// Values within this distance of an integer count as integral.
pub const INT_TOL: f64 = 1e-6;
/// Nodes whose bound is above `UB − GAP_EPS` are discarded.
const GAP_EPS: f64 = 1e-9;
/// A cut separates the candidate when violated by more than this.
const SEP_TOL: f64 = 1e-7;
/// Hard cap on LP resolves of a single node; reaching it means the callback
/// violates its contract.
const NODE_RESOLVE_CAP: u32 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MipStatus {
    Optimal,
    Infeasible,
    /// A node or time limit stopped the search; the incumbent (if any) is the
    /// best known feasible point.
    FeasibleLimit,
}

#[derive(Debug, Clone, Default)]
pub struct CallbackStats {
    pub invocations: u64,
    pub accepts: u64,
    pub cuts_added: u64,
    /// Cycling-guard triggers (callback rejected without separating).
    pub non_separating: u64,
    /// Cuts added per caller-supplied tag.
    pub by_tag: BTreeMap<u32, u64>,
}

#[derive(Debug, Clone)]
pub struct MipSolution {
    pub status: MipStatus,
    /// `+∞` when no incumbent exists.
    pub objective: f64,
    pub primal: Vec<f64>,
    /// Greatest proven lower bound on the optimum.
    pub best_bound: f64,
    pub node_count: u64,
    pub lp_solves: u64,
    pub callback: CallbackStats,
}

#[derive(Debug, Clone, Default)]
pub struct MipOptions {
    /// 0 means unlimited.
    pub max_nodes: u64,
    pub time_limit_secs: Option<f64>,
    /// Known feasible point and its objective; seeds the upper bound.
    pub initial_incumbent: Option<(Vec<f64>, f64)>,
}

/// Lazy constraint `coeffs · v ≤ rhs` over the full column space.
#[derive(Debug, Clone)]
pub struct CutRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    /// Opaque label aggregated into [`CallbackStats::by_tag`].
    pub tag: u32,
}

/// Candidate passed to the callback: the node's integral LP optimum.
pub struct Candidate<'a> {
    pub values: &'a [f64],
    pub objective: f64,
}

pub enum CallbackAction {
    Accept,
    AddCuts(Vec<CutRow>),
}

pub type CallbackError = Box<dyn std::error::Error + Send + Sync + 'static>;

#[derive(Debug, Error)]
pub enum MipError {
    #[error("LP relaxation failed: {0}")]
    Lp(#[from] LpError),
    #[error("relaxation is unbounded; add bounds or cuts before branching")]
    UnboundedRelaxation,
    #[error("integer column {0} has no finite bounds")]
    IntegerUnbounded(usize),
    #[error("callback failed: {0}")]
    Callback(#[source] CallbackError),
    #[error("callback kept returning separating cuts at one node ({NODE_RESOLVE_CAP} resolves)")]
    ResolveCap,
}

struct Node {
    id: u64,
    bound: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Open-node pool ordered by (bound, id); a plain sorted pop keeps the
/// selection rule obvious and deterministic.
struct NodePool {
    nodes: Vec<Node>,
}

impl NodePool {
    fn new() -> Self {
        NodePool { nodes: Vec::new() }
    }

    fn push(&mut self, n: Node) {
        self.nodes.push(n);
    }

    fn pop_best(&mut self) -> Option<Node> {
        let best = self
            .nodes
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.bound
                    .partial_cmp(&b.bound)
                    .expect("node bounds are finite")
                    .then(a.id.cmp(&b.id))
            })
            .map(|(i, _)| i)?;
        Some(self.nodes.swap_remove(best))
    }

    fn min_bound(&self) -> Option<f64> {
        self.nodes
            .iter()
            .map(|n| n.bound)
            .min_by(|a, b| a.partial_cmp(b).expect("finite"))
    }

    fn prune_above(&mut self, cutoff: f64) {
        self.nodes.retain(|n| n.bound < cutoff);
    }
}

fn fractional_column(model: &MixedModel, values: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for j in 0..model.n_cols() {
        if !model.integer[j] {
            continue;
        }
        let v = values[j];
        let dist = (v - v.round()).abs();
        if dist > INT_TOL && best.map_or(true, |(_, d)| dist > d) {
            best = Some((j, dist));
        }
    }
    best
}

/// Solves the MILP without a callback: every integral node becomes an
/// incumbent directly.
pub fn solve_mip(model: &MixedModel, opts: &MipOptions) -> Result<MipSolution, MipError> {
    solve_with_callback(model, opts, |_c| Ok(CallbackAction::Accept))
}

pub fn solve_with_callback<F>(
    model: &MixedModel,
    opts: &MipOptions,
    mut callback: F,
) -> Result<MipSolution, MipError>
where
    F: FnMut(&Candidate) -> Result<CallbackAction, CallbackError>,
{
    let n = model.n_cols();
    for j in 0..n {
        if model.integer[j] && !(model.lower[j].is_finite() && model.upper[j].is_finite()) {
            return Err(MipError::IntegerUnbounded(j));
        }
    }

    let started = Instant::now();
    let lp_opts = LpOptions::default();
    let mut work = model.clone();
    let base_rows = work.rows.len();
    let mut pool: Vec<CutRow> = Vec::new();

    let mut stats = CallbackStats::default();
    let mut incumbent: Option<(Vec<f64>, f64)> = opts.initial_incumbent.clone();
    let mut ub = incumbent.as_ref().map_or(f64::INFINITY, |&(_, v)| v);

    let mut open = NodePool::new();
    let mut next_id: u64 = 0;
    let mut node_count: u64 = 0;
    let mut lp_solves: u64 = 0;
    open.push(Node {
        id: next_id,
        bound: f64::NEG_INFINITY,
        lower: model.lower.clone(),
        upper: model.upper.clone(),
    });
    next_id += 1;

    let mut limit_hit = false;
    'search: while let Some(node) = open.pop_best() {
        if node.bound >= ub - GAP_EPS {
            continue;
        }
        if opts.max_nodes > 0 && node_count >= opts.max_nodes {
            limit_hit = true;
            open.push(node);
            break;
        }
        if let Some(t) = opts.time_limit_secs {
            if started.elapsed().as_secs_f64() > t {
                limit_hit = true;
                open.push(node);
                break;
            }
        }
        node_count += 1;

        work.lower.copy_from_slice(&node.lower);
        work.upper.copy_from_slice(&node.upper);
        work.rows.truncate(base_rows);
        for cut in &pool {
            work.rows.push(crate::model::RowConstraint {
                coeffs: cut.coeffs.clone(),
                sense: RowSense::Le,
                rhs: cut.rhs,
            });
        }

        let mut resolves: u32 = 0;
        loop {
            if resolves >= NODE_RESOLVE_CAP {
                return Err(MipError::ResolveCap);
            }
            resolves += 1;
            lp_solves += 1;
            let sol = solve_lp(&work, &lp_opts)?;
            match sol.status {
                LpStatus::Infeasible => continue 'search,
                LpStatus::Unbounded => return Err(MipError::UnboundedRelaxation),
                LpStatus::Optimal => {}
            }
            if sol.objective >= ub - GAP_EPS {
                continue 'search;
            }

            if let Some((j, _)) = fractional_column(model, &sol.primal) {
                branch(&mut open, &mut next_id, &node, j, sol.primal[j], sol.objective);
                continue 'search;
            }

            stats.invocations += 1;
            let action = callback(&Candidate {
                values: &sol.primal,
                objective: sol.objective,
            })
            .map_err(MipError::Callback)?;
            match action {
                CallbackAction::Accept => {
                    stats.accepts += 1;
                    if sol.objective < ub {
                        ub = sol.objective;
                        incumbent = Some((sol.primal.clone(), sol.objective));
                        open.prune_above(ub - GAP_EPS);
                    }
                    continue 'search;
                }
                CallbackAction::AddCuts(rows) => {
                    let mut separated = false;
                    for row in rows {
                        let lhs: f64 =
                            row.coeffs.iter().map(|&(j, v)| v * sol.primal[j]).sum();
                        if lhs > row.rhs + SEP_TOL {
                            work.rows.push(crate::model::RowConstraint {
                                coeffs: row.coeffs.clone(),
                                sense: RowSense::Le,
                                rhs: row.rhs,
                            });
                            stats.cuts_added += 1;
                            *stats.by_tag.entry(row.tag).or_insert(0) += 1;
                            pool.push(row);
                            separated = true;
                        }
                    }
                    if separated {
                        continue; // resolve this node against the new rows
                    }
                    // Cycling guard: branch on a free integer column, or drop
                    // the node when the candidate's domain is a single point.
                    stats.non_separating += 1;
                    let free = (0..n).find(|&j| {
                        model.integer[j] && node.lower[j] < node.upper[j] - 0.5
                    });
                    match free {
                        Some(j) => {
                            branch(
                                &mut open,
                                &mut next_id,
                                &node,
                                j,
                                sol.primal[j],
                                sol.objective,
                            );
                        }
                        None => {}
                    }
                    continue 'search;
                }
            }
        }
    }

    let open_bound = open.min_bound();
    let (status, best_bound) = if limit_hit {
        let bb = open_bound.unwrap_or(ub).min(ub);
        (MipStatus::FeasibleLimit, bb)
    } else if incumbent.is_some() {
        (MipStatus::Optimal, ub)
    } else {
        (MipStatus::Infeasible, f64::INFINITY)
    };
    let (primal, objective) = match &incumbent {
        Some((p, v)) => (p.clone(), *v),
        None => (Vec::new(), f64::INFINITY),
    };
    Ok(MipSolution {
        status,
        objective,
        primal,
        best_bound,
        node_count,
        lp_solves,
        callback: stats,
    })
}

/// Splits `node` on column `j` around value `v`; children inherit the node's
/// LP objective as their bound.
fn branch(open: &mut NodePool, next_id: &mut u64, node: &Node, j: usize, v: f64, bound: f64) {
    let vr = v.round();
    // For a fractional v this is (⌊v⌋, ⌈v⌉); for an integral v (cycling
    // guard) it splits [lo, v] | [v+1, hi], shifted down when v is at the top.
    let (left_hi, right_lo) = if (v - vr).abs() > INT_TOL {
        (v.floor(), v.ceil())
    } else if vr >= node.upper[j] - 0.5 {
        (vr - 1.0, vr)
    } else {
        (vr, vr + 1.0)
    };
    if left_hi >= node.lower[j] - 0.5 {
        let mut upper = node.upper.clone();
        upper[j] = left_hi;
        open.push(Node {
            id: *next_id,
            bound,
            lower: node.lower.clone(),
            upper,
        });
        *next_id += 1;
    }
    if right_lo <= node.upper[j] + 0.5 {
        let mut lower = node.lower.clone();
        lower[j] = right_lo;
        open.push(Node {
            id: *next_id,
            bound,
            lower,
            upper: node.upper.clone(),
        });
        *next_id += 1;
    }
}
