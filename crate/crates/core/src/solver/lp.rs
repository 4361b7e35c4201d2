//! Dense bounded-variable simplex for the LP relaxation.
//!
//! Rows are kept as `a·x + s = b` with one slack per row (`s ≥ 0` for `≤`
//! rows after sign normalization, `s = 0` for equalities). Every structural
//! variable has finite bounds, so the all-slack basis is dual feasible once
//! each nonbasic variable sits at the bound its cost points to. The dual
//! simplex therefore solves from scratch and also re-optimizes after bound
//! changes or appended rows without a first phase. When every variable at
//! its lower bound is already feasible the cold start uses that point and
//! the primal simplex instead. A primal pass always runs last and cleans up
//! any small dual infeasibility.
//!
//! [`LpModel`] keeps the tableau between solves. Its pruning bound is a
//! Lagrangian bound computed from the original rows with the current duals,
//! so it stays valid even if the tableau has drifted numerically, and an
//! infeasible verdict is accepted only with an aggregated-row certificate or
//! after a fresh rebuild.

use crate::ipmodel::{Relation, Row};

const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
/// Feasibility tolerance on (row-scaled) constraint residuals.
pub const FEAS_TOL: f64 = 1e-9;
/// Residual and bound agreement expected of a warm solution before it is
/// trusted without a rebuild.
const VERIFY_TOL: f64 = 1e-6;
const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub enum LpStatus {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    /// Numerical trouble: iteration budget exhausted.
    IterationLimit,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum State {
    Basic,
    Lower,
    Upper,
}

/// A row normalized to `coefs · x + s = rhs`, scaled to unit max coefficient.
#[derive(Debug, Clone)]
struct StoredRow {
    coefs: Vec<(usize, f64)>,
    rhs: f64,
    equality: bool,
}

impl StoredRow {
    fn from_row(row: &Row) -> Self {
        let scale = row.coefs.iter().fold(0.0_f64, |s, c| s.max(c.1.abs()));
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let sign = if row.relation == Relation::Ge { -1.0 } else { 1.0 };
        let f = sign / scale;
        StoredRow {
            coefs: row.coefs.iter().map(|&(v, a)| (v, a * f)).collect(),
            rhs: row.rhs * f,
            equality: row.relation == Relation::Eq,
        }
    }
}

enum Outcome {
    Done,
    Infeasible(usize),
    Limit,
}

/// Warm-startable relaxation of a fixed set of structural columns.
pub struct LpModel {
    n_struct: usize,
    m: usize,
    n: usize,
    t: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<State>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    d: Vec<f64>,
    rows: Vec<StoredRow>,
    /// Pivots since the tableau was last built from the slack basis.
    pivots: usize,
    total_pivots: usize,
    rebuilds: usize,
    bound: f64,
    /// Lagrangian reduced costs of the structural columns behind `bound`.
    reduced: Vec<f64>,
}

impl LpModel {
    /// Model for `min cost · x` subject to `rows` and finite bounds.
    pub fn new(cost: &[f64], rows: &[Row], lower: &[f64], upper: &[f64]) -> Self {
        let n_struct = cost.len();
        let mut model = LpModel {
            n_struct,
            m: 0,
            n: n_struct,
            t: Vec::new(),
            beta: Vec::new(),
            basis: Vec::new(),
            state: Vec::new(),
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            cost: cost.to_vec(),
            d: Vec::new(),
            rows: rows.iter().map(StoredRow::from_row).collect(),
            pivots: 0,
            total_pivots: 0,
            rebuilds: 0,
            bound: f64::NEG_INFINITY,
            reduced: Vec::new(),
        };
        model.rebuild();
        model
    }

    /// Pivots performed and tableau builds so far.
    pub fn work(&self) -> (usize, usize) {
        (self.total_pivots, self.rebuilds)
    }

    pub fn n_rows(&self) -> usize {
        self.m
    }

    /// Lower bound on the optimum from the last successful solve.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Reduced costs that go with [`Self::bound`]: forcing column `j` off
    /// the bound it sits at costs at least `|reduced[j]|` per unit.
    pub fn reduced_costs(&self) -> &[f64] {
        &self.reduced
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.n + j]
    }

    fn value_of_nonbasic(&self, j: usize) -> f64 {
        match self.state[j] {
            State::Upper => self.upper[j],
            _ => self.lower[j],
        }
    }

    fn resting_state(&self, j: usize, dj: f64) -> State {
        if self.upper[j] > self.lower[j] && dj < 0.0 && self.upper[j].is_finite() {
            State::Upper
        } else {
            State::Lower
        }
    }

    /// Fresh tableau on the all-slack basis with the current bounds.
    fn rebuild(&mut self) {
        let (ns, m) = (self.n_struct, self.rows.len());
        let n = ns + m;
        self.m = m;
        self.n = n;
        self.lower.truncate(ns);
        self.upper.truncate(ns);
        self.cost.truncate(ns);
        for r in &self.rows {
            self.lower.push(0.0);
            self.upper.push(if r.equality { 0.0 } else { f64::INFINITY });
            self.cost.push(0.0);
        }
        self.d = self.cost.clone();
        self.state = vec![State::Basic; n];
        // all at lower is primal feasible for most programs (the empty
        // matching); otherwise start dual feasible
        let at_lower_ok = self.rows.iter().all(|r| {
            let b = r.rhs - r.coefs.iter().map(|&(v, a)| a * self.lower[v]).sum::<f64>();
            if r.equality {
                b.abs() <= FEAS_TOL
            } else {
                b >= -FEAS_TOL
            }
        });
        for j in 0..ns {
            self.state[j] = if at_lower_ok {
                State::Lower
            } else {
                self.resting_state(j, self.d[j])
            };
        }
        self.t = vec![0.0; m * n];
        self.beta = vec![0.0; m];
        self.basis = (ns..n).collect();
        for (i, r) in self.rows.iter().enumerate() {
            let row = &mut self.t[i * n..(i + 1) * n];
            let mut b = r.rhs;
            for &(v, a) in &r.coefs {
                row[v] += a;
                let xv = match self.state[v] {
                    State::Upper => self.upper[v],
                    _ => self.lower[v],
                };
                b -= a * xv;
            }
            row[ns + i] = 1.0;
            self.beta[i] = b;
        }
        self.pivots = 0;
        self.rebuilds += 1;
    }

    /// Changes structural bounds; nonbasic columns move to the bound their
    /// reduced cost favors.
    pub fn set_bounds(&mut self, lower: &[f64], upper: &[f64]) {
        for j in 0..self.n_struct {
            if lower[j] == self.lower[j] && upper[j] == self.upper[j] {
                continue;
            }
            if self.state[j] == State::Basic {
                self.lower[j] = lower[j];
                self.upper[j] = upper[j];
                continue;
            }
            let old = self.value_of_nonbasic(j);
            self.lower[j] = lower[j];
            self.upper[j] = upper[j];
            self.state[j] = self.resting_state(j, self.d[j]);
            let delta = self.value_of_nonbasic(j) - old;
            if delta != 0.0 {
                for i in 0..self.m {
                    let a = self.t[i * self.n + j];
                    if a != 0.0 {
                        self.beta[i] -= a * delta;
                    }
                }
            }
        }
    }

    fn current_x(&self) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.n)
            .map(|j| if self.state[j] == State::Basic { 0.0 } else { self.value_of_nonbasic(j) })
            .collect();
        for i in 0..self.m {
            x[self.basis[i]] = self.beta[i];
        }
        x
    }

    /// Appends rows; each new slack enters the basis.
    pub fn add_rows(&mut self, rows: &[Row]) {
        if rows.is_empty() {
            return;
        }
        let k = rows.len();
        let (old_m, old_n) = (self.m, self.n);
        let x = self.current_x();
        let (m, n) = (old_m + k, old_n + k);
        let mut t = vec![0.0; m * n];
        for i in 0..old_m {
            t[i * n..i * n + old_n].copy_from_slice(&self.t[i * old_n..(i + 1) * old_n]);
        }
        for (offset, row) in rows.iter().enumerate() {
            let stored = StoredRow::from_row(row);
            let i = old_m + offset;
            let slack = old_n + offset;
            let mut dense = vec![0.0; n];
            let mut activity = 0.0;
            for &(v, a) in &stored.coefs {
                dense[v] += a;
                activity += a * x[v];
            }
            dense[slack] = 1.0;
            for r in 0..old_m {
                let f = dense[self.basis[r]];
                if f != 0.0 {
                    let src = &t[r * n..(r + 1) * n];
                    for (dv, &sv) in dense.iter_mut().zip(src) {
                        *dv -= f * sv;
                    }
                }
            }
            for r in 0..old_m {
                dense[self.basis[r]] = 0.0;
            }
            t[i * n..(i + 1) * n].copy_from_slice(&dense);
            self.beta.push(stored.rhs - activity);
            self.basis.push(slack);
            self.lower.push(0.0);
            self.upper.push(if stored.equality { 0.0 } else { f64::INFINITY });
            self.cost.push(0.0);
            self.d.push(0.0);
            self.state.push(State::Basic);
            self.rows.push(stored);
        }
        self.t = t;
        self.m = m;
        self.n = n;
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let n = self.n;
        let piv = self.t[r * n + q];
        {
            let row = &mut self.t[r * n..(r + 1) * n];
            for v in row.iter_mut() {
                *v /= piv;
            }
            row[q] = 1.0;
        }
        let (before, rest) = self.t.split_at_mut(r * n);
        let (prow, after) = rest.split_at_mut(n);
        for chunk in before.chunks_exact_mut(n).chain(after.chunks_exact_mut(n)) {
            let f = chunk[q];
            if f != 0.0 {
                for (v, &p) in chunk.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
                chunk[q] = 0.0;
            }
        }
        let f = self.d[q];
        if f != 0.0 {
            for (v, &p) in self.d.iter_mut().zip(prow.iter()) {
                *v -= f * p;
            }
            self.d[q] = 0.0;
        }
        // the caller records where the leaving variable ends up
        self.basis[r] = q;
        self.state[q] = State::Basic;
        self.pivots += 1;
        self.total_pivots += 1;
    }

    fn dual_phase(&mut self, budget: usize) -> Outcome {
        let mut degenerate = 0usize;
        for _ in 0..budget {
            let bland = degenerate >= DEGENERATE_RUN;
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let b = self.basis[i];
                let excess = if self.beta[i] < self.lower[b] - FEAS_TOL {
                    self.lower[b] - self.beta[i]
                } else if self.beta[i] > self.upper[b] + FEAS_TOL {
                    self.beta[i] - self.upper[b]
                } else {
                    continue;
                };
                let better = match leave {
                    None => true,
                    Some((r, _)) if bland => b < self.basis[r],
                    Some((_, e)) => excess > e,
                };
                if better {
                    leave = Some((i, excess));
                }
            }
            let Some((r, _)) = leave else {
                return Outcome::Done;
            };
            let b = self.basis[r];
            let below = self.beta[r] < self.lower[b];
            let target = if below { self.lower[b] } else { self.upper[b] };

            let mut enter: Option<(usize, f64)> = None;
            let mut best_alpha = 0.0;
            for j in 0..self.n {
                let at_lower = match self.state[j] {
                    State::Basic => continue,
                    _ if self.upper[j] <= self.lower[j] => continue,
                    State::Lower => true,
                    State::Upper => false,
                };
                let a = self.at(r, j);
                // x_b moves by -a per unit of x_j
                let eligible = match (below, at_lower) {
                    (true, true) | (false, false) => a < -PIVOT_TOL,
                    (true, false) | (false, true) => a > PIVOT_TOL,
                };
                if !eligible {
                    continue;
                }
                let ratio = self.d[j].abs() / a.abs();
                let take = match enter {
                    None => true,
                    Some((_, best)) if ratio < best - 1e-12 => true,
                    Some((q, best)) if ratio <= best + 1e-12 => {
                        if bland {
                            j < q
                        } else {
                            a.abs() > best_alpha
                        }
                    }
                    _ => false,
                };
                if take {
                    enter = Some((j, ratio));
                    best_alpha = a.abs();
                }
            }
            let Some((q, ratio)) = enter else {
                return Outcome::Infeasible(r);
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            let alpha = self.at(r, q);
            let step = (self.beta[r] - target) / alpha;
            let entering_value = self.value_of_nonbasic(q) + step;
            for i in 0..self.m {
                let a = self.at(i, q);
                if a != 0.0 {
                    self.beta[i] -= a * step;
                }
            }
            self.state[b] = if below { State::Lower } else { State::Upper };
            self.pivot(r, q);
            self.beta[r] = entering_value;
        }
        Outcome::Limit
    }

    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.n {
            let dir = match self.state[j] {
                State::Basic => continue,
                State::Lower if self.d[j] < -OPT_TOL && self.upper[j] > self.lower[j] => 1.0,
                State::Upper if self.d[j] > OPT_TOL && self.upper[j] > self.lower[j] => -1.0,
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            if best.is_none_or(|(b, _)| self.d[j].abs() > self.d[b].abs()) {
                best = Some((j, dir));
            }
        }
        best
    }

    /// Primal simplex from a primal feasible basis.
    fn primal_phase(&mut self, budget: usize) -> Outcome {
        let mut degenerate = 0usize;
        for _ in 0..budget {
            let bland = degenerate >= DEGENERATE_RUN;
            let Some((q, dir)) = self.choose_entering(bland) else {
                return Outcome::Done;
            };

            let mut step = self.upper[q] - self.lower[q];
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let alpha = self.at(i, q) * dir;
                let b = self.basis[i];
                let limit = if alpha > PIVOT_TOL {
                    (self.beta[i] - self.lower[b]) / alpha
                } else if alpha < -PIVOT_TOL && self.upper[b].is_finite() {
                    (self.upper[b] - self.beta[i]) / -alpha
                } else {
                    continue;
                };
                let limit = limit.max(0.0);
                let take = if limit < step - 1e-12 {
                    true
                } else if limit <= step + 1e-12 {
                    match leave {
                        None => false,
                        Some((r, _)) if bland => b < self.basis[r],
                        Some((_, ra)) => alpha.abs() > ra.abs(),
                    }
                } else {
                    false
                };
                if take {
                    step = step.min(limit);
                    leave = Some((i, alpha));
                }
            }
            if !step.is_finite() {
                // structural columns are boxed and slacks cost nothing
                return Outcome::Limit;
            }
            if step <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            if step > 0.0 {
                for i in 0..self.m {
                    let a = self.at(i, q);
                    if a != 0.0 {
                        self.beta[i] -= a * dir * step;
                    }
                }
            }
            match leave {
                None => {
                    // bound flip
                    self.state[q] = if dir > 0.0 { State::Upper } else { State::Lower };
                }
                Some((r, alpha)) => {
                    let entering_value = self.value_of_nonbasic(q) + dir * step;
                    let b = self.basis[r];
                    self.state[b] = if alpha > 0.0 { State::Lower } else { State::Upper };
                    self.pivot(r, q);
                    self.beta[r] = entering_value;
                }
            }
        }
        Outcome::Limit
    }

    /// Row `r` of the basis inverse, which sits in the slack columns.
    fn inverse_row(&self, r: usize) -> Vec<f64> {
        let start = r * self.n + self.n_struct;
        self.t[start..start + self.m].to_vec()
    }

    /// True if the aggregate of the original rows weighted by `y` cannot be
    /// met inside the variable bounds.
    fn certifies_infeasible(&self, y: &[f64]) -> bool {
        let mut g = vec![0.0; self.n_struct];
        let mut rhs = 0.0;
        let (mut lo, mut hi, mut size) = (0.0, 0.0, 0.0);
        for (k, row) in self.rows.iter().enumerate() {
            let yk = y[k];
            if yk == 0.0 {
                continue;
            }
            for &(v, a) in &row.coefs {
                g[v] += yk * a;
            }
            rhs += yk * row.rhs;
            size += (yk * row.rhs).abs();
            let (sl, su) = (0.0, if row.equality { 0.0 } else { f64::INFINITY });
            if yk > 0.0 {
                hi += yk * su;
                lo += yk * sl;
            } else {
                lo += yk * su;
                hi += yk * sl;
            }
        }
        for (j, &gj) in g.iter().enumerate() {
            let (a, b) = (gj * self.lower[j], gj * self.upper[j]);
            lo += a.min(b);
            hi += a.max(b);
            size += a.abs().max(b.abs());
        }
        let tol = 1e-7 * (1.0 + size);
        rhs < lo - tol || rhs > hi + tol
    }

    /// Lagrangian bound from the duals of the current basis, evaluated on
    /// the original rows.
    fn lagrangian_bound(&self) -> (f64, Vec<f64>) {
        let mut rc = self.cost[..self.n_struct].to_vec();
        let mut value = 0.0;
        for (k, row) in self.rows.iter().enumerate() {
            let mut yk = -self.d[self.n_struct + k];
            if !row.equality {
                yk = yk.min(0.0);
            }
            if yk == 0.0 {
                continue;
            }
            value += yk * row.rhs;
            for &(v, a) in &row.coefs {
                rc[v] -= yk * a;
            }
        }
        for (j, &c) in rc.iter().enumerate() {
            value += if c < 0.0 { c * self.upper[j] } else { c * self.lower[j] };
        }
        (value, rc)
    }

    fn verified(&self, x: &[f64], value: f64, bound: f64) -> bool {
        let rows_ok = self.rows.iter().all(|row| {
            let a: f64 = row.coefs.iter().map(|&(v, c)| c * x[v]).sum();
            if row.equality {
                (a - row.rhs).abs() <= VERIFY_TOL
            } else {
                a <= row.rhs + VERIFY_TOL
            }
        });
        rows_ok && bound >= value - VERIFY_TOL * (1.0 + value.abs())
    }

    /// One solve from the current basis. A `fresh` tableau is trusted as is;
    /// a warm one must pass the certificate and residual checks.
    fn attempt(&mut self, fresh: bool) -> Option<LpStatus> {
        let budget = 50 * (self.m + self.n) + 1000;
        match self.dual_phase(budget) {
            Outcome::Done => {}
            Outcome::Infeasible(r) => {
                let y = self.inverse_row(r);
                return (fresh || self.certifies_infeasible(&y)).then_some(LpStatus::Infeasible);
            }
            Outcome::Limit => return None,
        }
        if !matches!(self.primal_phase(budget), Outcome::Done) {
            return None;
        }
        let raw = self.current_x();
        let x: Vec<f64> = (0..self.n_struct)
            .map(|j| raw[j].clamp(self.lower[j], self.upper[j]))
            .collect();
        let value: f64 = self.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
        let (bound, reduced) = self.lagrangian_bound();
        if !fresh && !self.verified(&x, value, bound) {
            return None;
        }
        self.bound = bound.min(value);
        self.reduced = reduced;
        Some(LpStatus::Optimal { value, x })
    }

    /// Re-optimizes from the current basis, rebuilding from the slack basis
    /// if the warm result cannot be trusted.
    pub fn solve(&mut self) -> LpStatus {
        let fresh = self.pivots == 0;
        if let Some(status) = self.attempt(fresh) {
            return status;
        }
        if !fresh {
            log::debug!("warm LP solve rejected; rebuilding the tableau");
            self.rebuild();
            if let Some(status) = self.attempt(true) {
                return status;
            }
        }
        LpStatus::IterationLimit
    }
}

/// Minimizes `cost · x` subject to `rows` and `lower ≤ x ≤ upper` (finite
/// bounds), starting from the slack basis.
pub fn solve_lp(cost: &[f64], rows: &[Row], lower: &[f64], upper: &[f64]) -> LpStatus {
    LpModel::new(cost, rows, lower, upper).solve()
}
