//! Exact branch-and-bound for [`BinaryMatchProgram`].
//!
//! Nodes are explored best-bound first. Each node fixes some pair
//! variables; fixing a pair to 1 also fixes every other pair touching
//! either unit to 0. One [`lp::LpModel`] is re-optimized from node to node
//! by changing bounds, odd-set cuts are added to it as they are found, and
//! the most fractional variable is branched on (smallest index on ties).
//! Incumbents come from a greedy start and from LP-guided dives.

mod cuts;
pub mod lp;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::ipmodel::{BinaryMatchProgram, Pair, Relation, Row, RowKind, ROW_TOLERANCE};
use crate::{Error, Result};

use self::lp::{solve_lp, LpModel, LpStatus};

/// An optimal status means the incumbent is within this of the bound.
pub const GAP_TOLERANCE: f64 = 1e-6;
pub const INTEGRALITY_TOLERANCE: f64 = 1e-6;
/// Odd-set separation rounds at the root and at every other node; cuts
/// found at the root stay in the model for the whole search.
const ROOT_CUT_ROUNDS: usize = 30;
const NODE_CUT_ROUNDS: usize = 0;
/// A dive runs at the root and then every this many nodes.
const DIVE_EVERY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub max_nodes: usize,
    /// Wall-clock budget per program, in seconds.
    pub time_limit_secs: Option<f64>,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_nodes: 1_000_000,
            time_limit_secs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    /// Limits hit; an incumbent and a bound are reported.
    FeasibleGap,
    Infeasible,
    /// Limits hit before any feasible assignment was known.
    UnknownLimit,
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchSolution {
    /// Selected pairs in variable order, oriented long/short.
    pub pairs: Vec<Pair>,
    pub objective: f64,
    pub bound: f64,
    pub gap: f64,
    pub status: Status,
    pub nodes: usize,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LpBound {
    Bound(f64),
    Infeasible,
}

/// Box bounds implied by the fixings plus degree propagation, or `None` if
/// two pairs fixed to 1 share a unit.
fn node_bounds(program: &BinaryMatchProgram, fixed: &[Option<bool>]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = program.n_vars();
    let mut lower = vec![0.0; n];
    let mut upper = vec![1.0; n];
    let mut used = vec![false; program.n_units()];
    for (v, f) in fixed.iter().enumerate() {
        match f {
            Some(true) => {
                let p = program.index().pair(v);
                if used[p.long] || used[p.short] {
                    return None;
                }
                used[p.long] = true;
                used[p.short] = true;
                lower[v] = 1.0;
            }
            Some(false) => upper[v] = 0.0,
            None => {}
        }
    }
    for v in 0..n {
        if lower[v] == 0.0 {
            let p = program.index().pair(v);
            if used[p.long] || used[p.short] {
                upper[v] = 0.0;
            }
        }
    }
    Some((lower, upper))
}

fn relax(program: &BinaryMatchProgram, fixed: &[Option<bool>]) -> Result<Option<(f64, Vec<f64>)>> {
    let Some((lower, upper)) = node_bounds(program, fixed) else {
        return Ok(None);
    };
    match solve_lp(program.objective(), program.rows(), &lower, &upper) {
        LpStatus::Optimal { value, x } => Ok(Some((value, x))),
        LpStatus::Infeasible => Ok(None),
        LpStatus::IterationLimit => Err(lp_trouble()),
    }
}

fn lp_trouble() -> Error {
    Error::Solver("LP relaxation exceeded its iteration budget".into())
}

/// The LP model over the columns still in play. Columns shown by reduced
/// costs to be zero in every improving solution can be dropped.
struct Relaxation {
    model: LpModel,
    /// Program variable behind each model column.
    cols: Vec<usize>,
    /// Cuts added so far, over program variables.
    cuts: Vec<Row>,
    n_vars: usize,
}

impl Relaxation {
    fn new(program: &BinaryMatchProgram) -> Self {
        let n = program.n_vars();
        Relaxation {
            model: LpModel::new(program.objective(), program.rows(), &vec![0.0; n], &vec![1.0; n]),
            cols: (0..n).collect(),
            cuts: Vec::new(),
            n_vars: n,
        }
    }

    fn map_rows<'a>(&self, rows: impl Iterator<Item = &'a Row>) -> Vec<Row> {
        let mut pos = vec![usize::MAX; self.n_vars];
        for (c, &v) in self.cols.iter().enumerate() {
            pos[v] = c;
        }
        rows.map(|row| Row {
            coefs: row
                .coefs
                .iter()
                .filter(|&&(v, _)| pos[v] != usize::MAX)
                .map(|&(v, a)| (pos[v], a))
                .collect(),
            ..row.clone()
        })
        .collect()
    }

    fn add_cuts(&mut self, cuts: Vec<Row>) {
        let mapped = self.map_rows(cuts.iter());
        self.model.add_rows(&mapped);
        self.cuts.extend(cuts);
    }

    /// Keeps only the columns flagged in `keep`; the rest are fixed at 0.
    fn restrict(&mut self, program: &BinaryMatchProgram, keep: &[bool]) {
        self.cols.retain(|&v| keep[v]);
        let cost: Vec<f64> = self.cols.iter().map(|&v| program.objective()[v]).collect();
        let rows = self.map_rows(program.rows().iter().chain(&self.cuts));
        let k = self.cols.len();
        self.model = LpModel::new(&cost, &rows, &vec![0.0; k], &vec![1.0; k]);
    }

    /// Re-optimizes in the box `lower ≤ x ≤ upper` over program variables:
    /// the pruning bound and the point.
    fn resolve(&mut self, lower: &[f64], upper: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
        let lo: Vec<f64> = self.cols.iter().map(|&v| lower[v]).collect();
        let up: Vec<f64> = self.cols.iter().map(|&v| upper[v]).collect();
        self.model.set_bounds(&lo, &up);
        match self.model.solve() {
            LpStatus::Optimal { x, .. } => {
                let mut full = vec![0.0; self.n_vars];
                for (c, &v) in self.cols.iter().enumerate() {
                    full[v] = x[c];
                }
                Ok(Some((self.model.bound(), full)))
            }
            LpStatus::Infeasible => Ok(None),
            LpStatus::IterationLimit => Err(lp_trouble()),
        }
    }

    /// Columns at zero whose reduced cost lifts `bound` to `cutoff`.
    fn fixable(&self, x: &[f64], bound: f64, cutoff: f64) -> Vec<bool> {
        let mut keep = vec![false; self.n_vars];
        let rc = self.model.reduced_costs();
        for (c, &v) in self.cols.iter().enumerate() {
            keep[v] = !(x[v] <= 1e-9 && bound + rc[c] >= cutoff);
        }
        keep
    }
}

fn is_integral(x: &[f64]) -> bool {
    x.iter().all(|&v| v.min(1.0 - v) <= INTEGRALITY_TOLERANCE)
}

/// Follows the relaxation down one path: repeatedly fixes the fractional
/// pair with the largest value to 1 (or to 0 if that is infeasible) until
/// the point is integral, the bound passes `cutoff`, or the path dies.
fn dive(
    program: &BinaryMatchProgram,
    relax: &mut Relaxation,
    start: (Vec<f64>, Vec<f64>),
    cutoff: f64,
) -> Result<Option<(f64, Vec<f64>)>> {
    let (mut lower, mut upper) = start;
    let mut current = relax.resolve(&lower, &upper)?;
    for _ in 0..2 * program.n_vars().min(4 * program.n_units() + 8) {
        let Some((bound, x)) = current else {
            return Ok(None);
        };
        if bound >= cutoff {
            return Ok(None);
        }
        if is_integral(&x) {
            let rounded: Vec<f64> = x.iter().map(|&v| v.round()).collect();
            return Ok(program
                .is_feasible(&rounded)
                .then(|| (program.objective_value(&rounded), rounded)));
        }
        let v = (0..x.len())
            .filter(|&v| x[v].min(1.0 - x[v]) > INTEGRALITY_TOLERANCE)
            .max_by(|&a, &b| x[a].total_cmp(&x[b]).then(b.cmp(&a)))
            .expect("point is fractional");
        let (mut lo1, mut up1) = (lower.clone(), upper.clone());
        lo1[v] = 1.0;
        let p = program.index().pair(v);
        for (w, q) in program.index().pairs().iter().enumerate() {
            if w != v && (q.long == p.long || q.long == p.short || q.short == p.long || q.short == p.short) {
                up1[w] = 0.0;
            }
        }
        let fixed_up = relax.resolve(&lo1, &up1)?;
        if fixed_up.is_some() {
            (lower, upper, current) = (lo1, up1, fixed_up);
        } else {
            upper[v] = 0.0;
            current = relax.resolve(&lower, &upper)?;
        }
    }
    Ok(None)
}

/// Optimal value of the LP relaxation with `fixed` variables pinned; a
/// lower bound on every 0-1 completion.
pub fn lp_bound(program: &BinaryMatchProgram, fixed: &[Option<bool>]) -> Result<LpBound> {
    if fixed.len() != program.n_vars() {
        return Err(Error::InvalidArgument(format!(
            "{} fixings for {} variables",
            fixed.len(),
            program.n_vars()
        )));
    }
    Ok(match relax(program, fixed)? {
        Some((value, _)) => LpBound::Bound(value),
        None => LpBound::Infeasible,
    })
}

/// Sum of row violations, each scaled by the row's largest coefficient.
fn total_violation(program: &BinaryMatchProgram, activity: &[f64]) -> f64 {
    program
        .rows()
        .iter()
        .zip(activity)
        .map(|(row, &a)| {
            let scale = row.coefs.iter().fold(1.0_f64, |s, c| s.max(c.1.abs()));
            let excess = match row.relation {
                Relation::Le => a - row.rhs,
                Relation::Ge => row.rhs - a,
                Relation::Eq => (a - row.rhs).abs(),
            };
            let tol = ROW_TOLERANCE * (1.0 + row.rhs.abs());
            if excess > tol {
                excess / scale
            } else {
                0.0
            }
        })
        .sum()
}

/// Greedy warm start: take negative-cost pairs cheapest first while degree
/// and cap rows allow, then drop pairs until every row holds. `None` if even
/// the empty matching fails.
pub fn incumbent_heuristic(program: &BinaryMatchProgram) -> Option<Vec<f64>> {
    let n = program.n_vars();
    let rows = program.rows();
    let mut by_var: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (r, row) in rows.iter().enumerate() {
        for &(v, c) in &row.coefs {
            by_var[v].push((r, c));
        }
    }
    let caps: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.kind == RowKind::Cap)
        .map(|(i, _)| i)
        .collect();

    let mut order: Vec<usize> = (0..n).filter(|&v| program.objective()[v] < 0.0).collect();
    order.sort_by(|&a, &b| {
        program.objective()[a]
            .total_cmp(&program.objective()[b])
            .then(a.cmp(&b))
    });

    let mut x = vec![0.0; n];
    let mut activity = vec![0.0; rows.len()];
    let mut used = vec![false; program.n_units()];
    for v in order {
        let p = program.index().pair(v);
        if used[p.long] || used[p.short] {
            continue;
        }
        let fits = by_var[v].iter().all(|&(r, c)| {
            !caps.contains(&r) || activity[r] + c <= rows[r].rhs + ROW_TOLERANCE
        });
        if !fits {
            continue;
        }
        used[p.long] = true;
        used[p.short] = true;
        x[v] = 1.0;
        for &(r, c) in &by_var[v] {
            activity[r] += c;
        }
    }

    let mut violation = total_violation(program, &activity);
    while violation > 0.0 {
        let selected: Vec<usize> = (0..n).filter(|&v| x[v] == 1.0).collect();
        if selected.is_empty() {
            return None;
        }
        // removal leaving the least violation; ties go to the pair whose
        // removal costs least
        let mut best: Option<(usize, f64)> = None;
        for &v in &selected {
            for &(r, c) in &by_var[v] {
                activity[r] -= c;
            }
            let after = total_violation(program, &activity);
            for &(r, c) in &by_var[v] {
                activity[r] += c;
            }
            let better = match best {
                None => true,
                Some((b, bv)) => {
                    after < bv - 1e-12
                        || (after <= bv + 1e-12 && program.objective()[v] > program.objective()[b])
                }
            };
            if better {
                best = Some((v, after));
            }
        }
        let (v, after) = best.expect("selected is non-empty");
        x[v] = 0.0;
        for &(r, c) in &by_var[v] {
            activity[r] -= c;
        }
        violation = after;
    }
    program.is_feasible(&x).then_some(x)
}

struct Node {
    bound: f64,
    seq: u64,
    fixes: Vec<(usize, bool)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // max-heap: lowest bound first, then earliest created
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.seq.cmp(&self.seq))
    }
}

/// Solves the program exactly, subject to `limits`.
pub fn solve(program: &BinaryMatchProgram, limits: &Limits) -> Result<MatchSolution> {
    let start = Instant::now();
    let n = program.n_vars();
    let deadline = limits
        .time_limit_secs
        .map(|s| start + Duration::from_secs_f64(s.max(0.0)));

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let empty = vec![0.0; n];
    if let Some(x) = incumbent_heuristic(program) {
        incumbent = Some((program.objective_value(&x), x));
    } else if program.is_feasible(&empty) {
        incumbent = Some((0.0, empty));
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq,
        fixes: Vec::new(),
    });
    let mut nodes = 0usize;
    let mut hit_limit = false;
    let mut fixed = vec![None; n];
    // odd-set cuts hold at every node, so they stay in the model
    let mut relax = Relaxation::new(program);
    let mut cut_sets = HashSet::new();
    let mut n_cuts = 0usize;
    let max_cuts = (program.n_units() / 2).max(10);

    while let Some(node) = heap.peek() {
        let cutoff = incumbent.as_ref().map_or(f64::INFINITY, |i| i.0 - GAP_TOLERANCE);
        if node.bound >= cutoff {
            heap.pop();
            continue;
        }
        if nodes >= limits.max_nodes || deadline.is_some_and(|d| Instant::now() >= d) {
            hit_limit = true;
            break;
        }
        let node = heap.pop().expect("peeked");
        nodes += 1;

        fixed.iter_mut().for_each(|f| *f = None);
        for &(v, val) in &node.fixes {
            fixed[v] = Some(val);
        }
        let Some((lower, upper)) = node_bounds(program, &fixed) else {
            continue;
        };
        let rounds = if nodes == 1 { ROOT_CUT_ROUNDS } else { NODE_CUT_ROUNDS };
        let mut relaxed = relax.resolve(&lower, &upper)?;
        for _ in 0..rounds {
            let Some((value, x)) = &relaxed else { break };
            if *value >= cutoff || is_integral(x) {
                break;
            }
            let new = cuts::separate(program, x, &mut cut_sets, max_cuts, n_cuts + 1);
            if new.is_empty() {
                break;
            }
            n_cuts += new.len();
            relax.add_cuts(new);
            relaxed = relax.resolve(&lower, &upper)?;
        }
        let Some((value, x)) = relaxed else {
            continue;
        };
        if value >= cutoff {
            continue;
        }

        let mut branch: Option<(usize, f64)> = None;
        for (v, &xv) in x.iter().enumerate() {
            let frac = xv.min(1.0 - xv);
            if frac > INTEGRALITY_TOLERANCE && branch.is_none_or(|(_, f)| frac > f) {
                branch = Some((v, frac));
            }
        }
        match branch {
            None => {
                let rounded: Vec<f64> = x.iter().map(|&v| v.round()).collect();
                if program.is_feasible(&rounded) {
                    let obj = program.objective_value(&rounded);
                    if incumbent.as_ref().is_none_or(|i| obj < i.0) {
                        incumbent = Some((obj, rounded));
                    }
                } else {
                    log::warn!("integral LP point fails exact row check; node dropped");
                }
            }
            Some((v, _)) => {
                if nodes == 1 || nodes.is_multiple_of(DIVE_EVERY) {
                    let dived = dive(program, &mut relax, (lower.clone(), upper.clone()), cutoff)?;
                    if let Some((obj, xd)) = dived {
                        if incumbent.as_ref().is_none_or(|i| obj < i.0) {
                            log::debug!("dive at node {nodes} found {obj:.4}");
                            incumbent = Some((obj, xd));
                        }
                    }
                }
                if nodes == 1 {
                    // the dive left the model at its last node; reduced costs
                    // must come from the root solve they are paired with
                    let root = match &incumbent {
                        Some(_) => relax.resolve(&lower, &upper)?,
                        None => None,
                    };
                    if let (Some((obj, _)), Some((bound, xr))) = (&incumbent, root) {
                        let keep = relax.fixable(&xr, bound, obj - GAP_TOLERANCE);
                        let kept = keep.iter().filter(|&&k| k).count();
                        if kept < n * 2 / 3 {
                            log::debug!("reduced costs fix {} of {n} pairs at 0", n - kept);
                            relax.restrict(program, &keep);
                        }
                    }
                }
                for val in [true, false] {
                    seq += 1;
                    let mut fixes = node.fixes.clone();
                    fixes.push((v, val));
                    heap.push(Node {
                        bound: value,
                        seq,
                        fixes,
                    });
                }
            }
        }
    }

    let (pivots, builds) = relax.model.work();
    log::debug!(
        "{nodes} nodes, {} rows, {pivots} pivots, {builds} tableau builds",
        relax.model.n_rows()
    );
    let open_bound = heap
        .iter()
        .map(|nd| nd.bound)
        .fold(f64::INFINITY, f64::min);
    let wall_time = start.elapsed();
    let Some((objective, x)) = incumbent else {
        let status = if hit_limit {
            Status::UnknownLimit
        } else {
            Status::Infeasible
        };
        return Ok(MatchSolution {
            pairs: Vec::new(),
            objective: f64::NAN,
            bound: if hit_limit { open_bound } else { f64::INFINITY },
            gap: f64::NAN,
            status,
            nodes,
            wall_time,
        });
    };

    let violated = program.violations(&x, ROW_TOLERANCE);
    if !violated.is_empty() {
        let names: Vec<&str> = violated.iter().map(|&r| program.rows()[r].name.as_str()).collect();
        return Err(Error::Solver(format!(
            "internal error: solution violates rows {}",
            names.join(", ")
        )));
    }
    let bound = if hit_limit { open_bound.min(objective) } else { objective };
    let gap = (objective - bound).max(0.0);
    let status = if hit_limit && gap > GAP_TOLERANCE {
        Status::FeasibleGap
    } else {
        Status::Optimal
    };
    let pairs = (0..n)
        .filter(|&v| x[v] == 1.0)
        .map(|v| program.index().pair(v))
        .collect();
    Ok(MatchSolution {
        pairs,
        objective,
        bound,
        gap,
        status,
        nodes,
        wall_time,
    })
}
