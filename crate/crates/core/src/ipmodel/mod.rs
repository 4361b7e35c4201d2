//! The 0-1 pairing program for one stratum.
//!
//! One binary variable per candidate pair, objective `ω - λ` per pair, the
//! `L` degree rows first, then any number of balance, cap and separation
//! rows. Rows that compare the two sides of the match (fine, near-fine and
//! mean balance, separation) use a fixed orientation per pair: the unit
//! with the higher instrument value is the "long" side.

mod mps;

use std::collections::HashMap;

use serde::Serialize;

use crate::distance::DistanceMatrix;
use crate::{Error, Result};

pub use mps::{export_mps, parse_mps, read_solution, MpsModel, MpsRow};

/// Feasibility tolerance used when checking rows against a 0-1 assignment.
pub const ROW_TOLERANCE: f64 = 1e-9;

/// A candidate pair, stored with its orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Pair {
    pub long: usize,
    pub short: usize,
}

impl Pair {
    pub fn lo(&self) -> usize {
        self.long.min(self.short)
    }

    pub fn hi(&self) -> usize {
        self.long.max(self.short)
    }

    pub fn contains(&self, unit: usize) -> bool {
        self.long == unit || self.short == unit
    }
}

/// Bijection between variable positions and unordered unit pairs.
#[derive(Debug, Clone)]
pub struct PairVarIndex {
    n_units: usize,
    pairs: Vec<Pair>,
    lookup: HashMap<(usize, usize), usize>,
}

impl PairVarIndex {
    /// All `L choose 2` pairs in lexicographic `(ℓ, m)` order, `ℓ < m`.
    pub fn complete(n_units: usize) -> Self {
        let pairs = (0..n_units)
            .flat_map(|l| (l + 1..n_units).map(move |m| Pair { long: l, short: m }))
            .collect();
        Self::from_pairs(n_units, pairs)
    }

    fn from_pairs(n_units: usize, pairs: Vec<Pair>) -> Self {
        let lookup = pairs
            .iter()
            .enumerate()
            .map(|(v, p)| ((p.lo(), p.hi()), v))
            .collect();
        PairVarIndex {
            n_units,
            pairs,
            lookup,
        }
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pair(&self, var: usize) -> Pair {
        self.pairs[var]
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    /// Variable position of the unordered pair `{a, b}`, if it is a candidate.
    pub fn position(&self, a: usize, b: usize) -> Option<usize> {
        self.lookup.get(&(a.min(b), a.max(b))).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// Provenance of a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Degree,
    FineBalance,
    Cap,
    MeanBalance,
    Separation,
    NearFine,
    PairCount,
    /// Odd-set inequality added by the solver.
    OddSet,
}

impl RowKind {
    fn prefix(self) -> &'static str {
        match self {
            RowKind::Degree => "D",
            RowKind::FineBalance => "FB",
            RowKind::Cap => "CAP",
            RowKind::MeanBalance => "MB",
            RowKind::Separation => "SEP",
            RowKind::NearFine => "NF",
            RowKind::PairCount => "PC",
            RowKind::OddSet => "OS",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub name: String,
    pub kind: RowKind,
    /// Nonzero coefficients, sorted by variable.
    pub coefs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coefs.iter().map(|&(v, c)| c * x[v]).sum()
    }

    pub fn is_satisfied(&self, activity: f64, tol: f64) -> bool {
        let slack = tol * (1.0 + self.rhs.abs());
        match self.relation {
            Relation::Le => activity <= self.rhs + slack,
            Relation::Ge => activity >= self.rhs - slack,
            Relation::Eq => (activity - self.rhs).abs() <= slack,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BinaryMatchProgram {
    index: PairVarIndex,
    objective: Vec<f64>,
    rows: Vec<Row>,
    counters: HashMap<RowKind, usize>,
}

/// `η = ω - λ` for every pair, with only the degree rows.
pub fn new_program(distances: &DistanceMatrix, lambda: f64) -> Result<BinaryMatchProgram> {
    let n = distances.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "a pairing program needs at least 2 units, got {n}"
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    let index = PairVarIndex::complete(n);
    let objective = index
        .pairs()
        .iter()
        .map(|p| distances.get(p.long, p.short) - lambda)
        .collect();
    let mut program = BinaryMatchProgram {
        index,
        objective,
        rows: Vec::new(),
        counters: HashMap::new(),
    };
    program.rebuild_degree_rows();
    Ok(program)
}

impl BinaryMatchProgram {
    pub fn index(&self) -> &PairVarIndex {
        &self.index
    }

    pub fn n_units(&self) -> usize {
        self.index.n_units()
    }

    pub fn n_vars(&self) -> usize {
        self.index.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    fn rebuild_degree_rows(&mut self) {
        let n = self.n_units();
        let mut touching: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (v, p) in self.index.pairs().iter().enumerate() {
            touching[p.long].push((v, 1.0));
            touching[p.short].push((v, 1.0));
        }
        let degree: Vec<Row> = touching
            .into_iter()
            .enumerate()
            .map(|(u, mut coefs)| {
                coefs.sort_by_key(|c| c.0);
                Row {
                    name: format!("D{}", u + 1),
                    kind: RowKind::Degree,
                    coefs,
                    relation: Relation::Le,
                    rhs: 1.0,
                }
            })
            .collect();
        let rest: Vec<Row> = self
            .rows
            .drain(..)
            .filter(|r| r.kind != RowKind::Degree)
            .collect();
        self.rows = degree;
        self.rows.extend(rest);
    }

    fn push_row(&mut self, kind: RowKind, coefs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        let k = self.counters.entry(kind).or_insert(0);
        *k += 1;
        let coefs = coefs.into_iter().filter(|&(_, c)| c != 0.0).collect();
        self.rows.push(Row {
            name: format!("{}{}", kind.prefix(), k),
            kind,
            coefs,
            relation,
            rhs,
        });
    }

    fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.n_units() {
            return Err(Error::InvalidArgument(format!(
                "{what} has {len} entries for {} units",
                self.n_units()
            )));
        }
        Ok(())
    }

    /// `f(long) - f(short)` for every pair.
    fn side_coefs(&self, f: impl Fn(usize) -> f64) -> Vec<(usize, f64)> {
        self.index
            .pairs()
            .iter()
            .enumerate()
            .map(|(v, p)| (v, f(p.long) - f(p.short)))
            .collect()
    }

    /// Orients every pair so the higher-instrument unit is the long side
    /// (ties keep the lower index as long). Must precede any side rows.
    pub fn orient_by(&mut self, instrument: &[f64]) -> Result<()> {
        self.check_len("instrument", instrument.len())?;
        if self.rows.iter().any(|r| r.kind != RowKind::Degree) {
            return Err(Error::InvalidArgument(
                "orientation must be set before side rows are added".into(),
            ));
        }
        for p in &mut self.index.pairs {
            let (lo, hi) = (p.lo(), p.hi());
            *p = if instrument[lo] >= instrument[hi] {
                Pair { long: lo, short: hi }
            } else {
                Pair { long: hi, short: lo }
            };
        }
        Ok(())
    }

    /// `Σ a (w_long - w_short) = 0` for a 0/1 indicator `w`.
    pub fn add_fine_balance(&mut self, w: &[f64]) -> Result<()> {
        self.check_len("indicator", w.len())?;
        check_binary(w)?;
        let coefs = self.side_coefs(|u| w[u]);
        self.push_row(RowKind::FineBalance, coefs, Relation::Eq, 0.0);
        Ok(())
    }

    /// `Σ a h ≤ H` over flagged pairs; `flags` is indexed by variable.
    pub fn add_cap(&mut self, flags: &[bool], limit: i64) -> Result<()> {
        if flags.len() != self.n_vars() {
            return Err(Error::InvalidArgument(format!(
                "cap flags have {} entries for {} pair variables",
                flags.len(),
                self.n_vars()
            )));
        }
        if limit < 0 {
            return Err(Error::InvalidArgument(format!(
                "cap limit must be nonnegative, got {limit}"
            )));
        }
        let coefs = flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(v, _)| (v, 1.0))
            .collect();
        self.push_row(RowKind::Cap, coefs, Relation::Le, limit as f64);
        Ok(())
    }

    /// [`Self::add_cap`] with flags computed from each oriented pair.
    pub fn add_cap_where(&mut self, flag: impl Fn(Pair) -> bool, limit: i64) -> Result<()> {
        let flags: Vec<bool> = self.index.pairs().iter().map(|&p| flag(p)).collect();
        self.add_cap(&flags, limit)
    }

    /// Side means of `v` within `ε`: two rows
    /// `Σ a (v_long - v_short - ε) ≤ 0` and `Σ a (v_short - v_long - ε) ≤ 0`.
    pub fn add_mean_balance(&mut self, v: &[f64], epsilon: f64) -> Result<()> {
        self.check_len("values", v.len())?;
        check_finite(v)?;
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mean-balance epsilon must be positive, got {epsilon}"
            )));
        }
        let diff = self.side_coefs(|u| v[u]);
        let up = diff.iter().map(|&(k, d)| (k, d - epsilon)).collect();
        let down = diff.iter().map(|&(k, d)| (k, -d - epsilon)).collect();
        self.push_row(RowKind::MeanBalance, up, Relation::Le, 0.0);
        self.push_row(RowKind::MeanBalance, down, Relation::Le, 0.0);
        Ok(())
    }

    /// Mean within-pair gap in `v` at least `φ`:
    /// `Σ a (v_long - v_short - φ) ≥ 0`.
    pub fn add_separation(&mut self, v: &[f64], phi: f64) -> Result<()> {
        self.check_len("instrument", v.len())?;
        check_finite(v)?;
        if !(phi.is_finite() && phi >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "separation phi must be nonnegative, got {phi}"
            )));
        }
        let coefs = self
            .side_coefs(|u| v[u])
            .into_iter()
            .map(|(k, d)| (k, d - phi))
            .collect();
        self.push_row(RowKind::Separation, coefs, Relation::Ge, 0.0);
        Ok(())
    }

    /// `|Σ a (w_long - w_short)| ≤ ε` as two rows.
    pub fn add_near_fine_balance(&mut self, w: &[f64], epsilon: i64) -> Result<()> {
        self.check_len("indicator", w.len())?;
        check_binary(w)?;
        if epsilon < 0 {
            return Err(Error::InvalidArgument(format!(
                "near-fine epsilon must be nonnegative, got {epsilon}"
            )));
        }
        let diff = self.side_coefs(|u| w[u]);
        let neg = diff.iter().map(|&(k, d)| (k, -d)).collect();
        self.push_row(RowKind::NearFine, diff, Relation::Le, epsilon as f64);
        self.push_row(RowKind::NearFine, neg, Relation::Le, epsilon as f64);
        Ok(())
    }

    /// Number of selected pairs related to `count`.
    pub fn add_pair_count(&mut self, count: u64, relation: Relation) -> Result<()> {
        let coefs = (0..self.n_vars()).map(|v| (v, 1.0)).collect();
        self.push_row(RowKind::PairCount, coefs, relation, count as f64);
        Ok(())
    }

    /// Removes variables forbidden by a cap row with limit zero. Returns the
    /// number of variables removed. The feasible set is unchanged.
    pub fn prune_forbidden(&mut self) -> usize {
        let mut forbidden = vec![false; self.n_vars()];
        for row in &self.rows {
            if row.kind == RowKind::Cap
                && row.rhs == 0.0
                && row.coefs.iter().all(|&(_, c)| c >= 0.0)
            {
                for &(v, _) in &row.coefs {
                    forbidden[v] = true;
                }
            }
        }
        let removed = forbidden.iter().filter(|&&f| f).count();
        if removed == 0 {
            return 0;
        }
        let mut remap = vec![usize::MAX; self.n_vars()];
        let mut pairs = Vec::with_capacity(self.n_vars() - removed);
        let mut objective = Vec::with_capacity(pairs.capacity());
        for v in 0..self.n_vars() {
            if !forbidden[v] {
                remap[v] = pairs.len();
                pairs.push(self.index.pair(v));
                objective.push(self.objective[v]);
            }
        }
        for row in &mut self.rows {
            row.coefs = row
                .coefs
                .iter()
                .filter(|&&(v, _)| !forbidden[v])
                .map(|&(v, c)| (remap[v], c))
                .collect();
        }
        self.index = PairVarIndex::from_pairs(self.n_units(), pairs);
        self.objective = objective;
        removed
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Indices of rows violated by `x`.
    pub fn violations(&self, x: &[f64], tol: f64) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.is_satisfied(r.activity(x), tol))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_feasible(&self, x: &[f64]) -> bool {
        self.violations(x, ROW_TOLERANCE).is_empty()
    }

    /// 0/1 vector selecting the given unordered pairs. Fails if a pair is
    /// not a candidate.
    pub fn selection(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.n_vars()];
        for &(a, b) in pairs {
            let v = self.index.position(a, b).ok_or_else(|| {
                Error::InvalidArgument(format!("({a}, {b}) is not a candidate pair"))
            })?;
            x[v] = 1.0;
        }
        Ok(x)
    }

    /// Pretty JSON with one entry per row, for debugging.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Var<'a> {
            name: String,
            pair: &'a Pair,
            cost: f64,
        }
        #[derive(Serialize)]
        struct Dump<'a> {
            n_units: usize,
            variables: Vec<Var<'a>>,
            rows: &'a [Row],
        }
        let variables = self
            .index
            .pairs()
            .iter()
            .enumerate()
            .map(|(v, p)| Var {
                name: self.var_name(v),
                pair: p,
                cost: self.objective[v],
            })
            .collect();
        serde_json::to_string_pretty(&Dump {
            n_units: self.n_units(),
            variables,
            rows: &self.rows,
        })
        .expect("program serializes")
    }

    /// `p_{ℓ}_{m}` with 1-based unit numbers, `ℓ < m`.
    pub fn var_name(&self, var: usize) -> String {
        let p = self.index.pair(var);
        format!("p_{}_{}", p.lo() + 1, p.hi() + 1)
    }
}

fn check_binary(w: &[f64]) -> Result<()> {
    match w.iter().position(|&x| x != 0.0 && x != 1.0) {
        Some(i) => Err(Error::InvalidArgument(format!(
            "indicator entry {i} is {}, expected 0 or 1",
            w[i]
        ))),
        None => Ok(()),
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::InvalidArgument(format!("value {i} is not finite"))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(n: usize, d: f64) -> DistanceMatrix {
        DistanceMatrix::from_fn(n, |_, _| d).unwrap()
    }

    /// Every matching (set of disjoint pairs) on `n` units, as pair lists.
    fn matchings(n: usize) -> Vec<Vec<(usize, usize)>> {
        fn rec(u: usize, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
            let n = used.len();
            if u == n {
                out.push(cur.clone());
                return;
            }
            if used[u] {
                return rec(u + 1, used, cur, out);
            }
            rec(u + 1, used, cur, out);
            used[u] = true;
            for m in u + 1..n {
                if !used[m] {
                    used[m] = true;
                    cur.push((u, m));
                    rec(u + 1, used, cur, out);
                    cur.pop();
                    used[m] = false;
                }
            }
            used[u] = false;
        }
        let mut out = Vec::new();
        rec(0, &mut vec![false; n], &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn matching_counts() {
        // telephone numbers
        let counts: Vec<usize> = (1..=6).map(|n| matchings(n).len()).collect();
        assert_eq!(counts, vec![1, 2, 4, 10, 26, 76]);
    }

    #[test]
    fn three_units_flat_costs() {
        let p = new_program(&flat(3, 5.0), 2.0).unwrap();
        assert_eq!(p.n_vars(), 3);
        assert!(p.objective().iter().all(|&c| c == 3.0));
        assert_eq!(p.rows().len(), 3);
        assert!(p.rows().iter().all(|r| r.kind == RowKind::Degree
            && r.relation == Relation::Le
            && r.rhs == 1.0
            && r.coefs.len() == 2));
    }

    #[test]
    fn two_units() {
        let p = new_program(&flat(2, 1.0), 0.0).unwrap();
        assert_eq!(p.n_vars(), 1);
        assert_eq!(p.rows().len(), 2);
        assert!(new_program(&DistanceMatrix::from_fn(1, |_, _| 0.0).unwrap(), 0.0).is_err());
    }

    #[test]
    fn complete_index_is_a_bijection() {
        let idx = PairVarIndex::complete(7);
        assert_eq!(idx.len(), 21);
        for v in 0..idx.len() {
            let p = idx.pair(v);
            assert!(p.lo() < p.hi());
            assert_eq!(idx.position(p.hi(), p.lo()), Some(v));
        }
    }

    #[test]
    fn fine_balance_row_by_enumeration() {
        let mut p = new_program(&flat(4, 1.0), 0.0).unwrap();
        p.add_fine_balance(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        let row = p.rows().last().unwrap().clone();
        let value = |pairs: &[(usize, usize)]| row.activity(&p.selection(pairs).unwrap());
        // index orientation: lower index is the long side
        assert_eq!(value(&[(0, 1), (2, 3)]), 0.0);
        assert_eq!(value(&[(0, 2)]), 1.0);
        assert_eq!(value(&[(0, 2), (1, 3)]), 2.0);
        let feasible = matchings(4)
            .into_iter()
            .filter(|m| p.is_feasible(&p.selection(m).unwrap()))
            .count();
        // empty, (0,1), (2,3), (0,1)+(2,3)
        assert_eq!(feasible, 4);
    }

    #[test]
    fn fine_balance_follows_instrument_orientation() {
        let mut p = new_program(&flat(4, 1.0), 0.0).unwrap();
        p.orient_by(&[10.0, 0.0, 0.0, 10.0]).unwrap();
        p.add_fine_balance(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        // (0,2): long 0 (w=1) vs short 2; (1,3): long 3 (w=0) vs short 1 (w=1)
        assert!(p.is_feasible(&p.selection(&[(0, 2), (1, 3)]).unwrap()));
        assert!(!p.is_feasible(&p.selection(&[(0, 2)]).unwrap()));
    }

    #[test]
    fn fine_balance_zero_indicator_is_vacuous() {
        let mut p = new_program(&flat(4, 1.0), 0.0).unwrap();
        p.add_fine_balance(&[0.0; 4]).unwrap();
        assert!(p.rows().last().unwrap().coefs.is_empty());
        assert!(p.add_fine_balance(&[0.0, 2.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn cap_rows() {
        let mut p = new_program(&flat(4, 1.0), 0.0).unwrap();
        assert!(p.add_cap(&[false; 6], -1).is_err());
        p.add_cap(&[false; 6], 0).unwrap();
        assert!(matchings(4).iter().all(|m| p.is_feasible(&p.selection(m).unwrap())));
        p.add_cap_where(|pair| pair.lo() == 0, 0).unwrap();
        assert!(!p.is_feasible(&p.selection(&[(0, 3)]).unwrap()));
        assert!(p.is_feasible(&p.selection(&[(1, 3)]).unwrap()));
    }

    #[test]
    fn mean_balance_by_enumeration() {
        let v = [0.0, 10.0, 0.0, 10.0];
        let mut p = new_program(&flat(4, 1.0), 0.0).unwrap();
        p.orient_by(&v).unwrap();
        p.add_mean_balance(&v, 1.0).unwrap();
        assert!(!p.is_feasible(&p.selection(&[(0, 1), (2, 3)]).unwrap()));
        assert!(p.is_feasible(&p.selection(&[(0, 2), (1, 3)]).unwrap()));
        for m in matchings(4) {
            let x = p.selection(&m).unwrap();
            let long: f64 = m.iter().map(|&(a, b)| v[a].max(v[b])).sum();
            let short: f64 = m.iter().map(|&(a, b)| v[a].min(v[b])).sum();
            let oracle = (long - short).abs() <= 1.0 * m.len() as f64;
            assert_eq!(p.is_feasible(&x), oracle, "{m:?}");
        }
        assert!(p.add_mean_balance(&v, 0.0).is_err());
    }

    #[test]
    fn mean_balance_equal_values_always_hold() {
        let mut p = new_program(&flat(2, 1.0), 0.0).unwrap();
        p.add_mean_balance(&[3.0, 3.0], 1e-6).unwrap();
        assert!(p.is_feasible(&[1.0]));
    }

    #[test]
    fn separation_row_holds_with_equality() {
        let v = [40.0, 27.0];
        let mut p = new_program(&flat(2, 1.0), 0.0).unwrap();
        p.orient_by(&v).unwrap();
        p.add_separation(&v, 13.0).unwrap();
        let row = p.rows().last().unwrap();
        assert_eq!(row.activity(&[1.0]), 0.0);
        assert!(p.is_feasible(&[1.0]));
        let mut q = new_program(&flat(2, 1.0), 0.0).unwrap();
        q.orient_by(&v).unwrap();
        q.add_separation(&v, 13.5).unwrap();
        assert!(!q.is_feasible(&[1.0]));
    }

    #[test]
    fn near_fine_by_enumeration() {
        let w = [1.0, 1.0, 0.0, 0.0];
        let mut p = new_program(&flat(4, 1.0), 0.0).unwrap();
        p.add_near_fine_balance(&w, 1).unwrap();
        for m in matchings(4) {
            let x = p.selection(&m).unwrap();
            let imbalance: f64 = m.iter().map(|&(a, b)| w[a] - w[b]).sum();
            assert_eq!(p.is_feasible(&x), imbalance.abs() <= 1.0, "{m:?}");
        }
        // two mixed pairs with the same orientation
        assert!(!p.is_feasible(&p.selection(&[(0, 2), (1, 3)]).unwrap()));
        assert!(p.is_feasible(&p.selection(&[(0, 2)]).unwrap()));

        let mut single = new_program(&flat(4, 1.0), 0.0).unwrap();
        single.add_near_fine_balance(&[1.0, 0.0, 0.0, 0.0], 1).unwrap();
        assert!(matchings(4).iter().all(|m| single.is_feasible(&single.selection(m).unwrap())));
    }

    #[test]
    fn near_fine_zero_matches_fine_balance() {
        let w = [1.0, 0.0, 1.0, 0.0, 0.0];
        let mut a = new_program(&flat(5, 1.0), 0.0).unwrap();
        let mut b = a.clone();
        a.add_near_fine_balance(&w, 0).unwrap();
        b.add_fine_balance(&w).unwrap();
        for m in matchings(5) {
            assert_eq!(
                a.is_feasible(&a.selection(&m).unwrap()),
                b.is_feasible(&b.selection(&m).unwrap())
            );
        }
        let mut c = new_program(&flat(4, 1.0), 0.0).unwrap();
        c.add_near_fine_balance(&[1.0, 1.0, 0.0, 0.0], 4).unwrap();
        assert!(matchings(4).iter().all(|m| c.is_feasible(&c.selection(m).unwrap())));
    }

    #[test]
    fn pruning_keeps_feasible_set() {
        let v = [40.0, 20.0, 35.0, 24.0, 30.0];
        let d = DistanceMatrix::from_fn(5, |i, j| (i + 2 * j) as f64).unwrap();
        let mut full = new_program(&d, 3.0).unwrap();
        full.orient_by(&v).unwrap();
        full.add_cap_where(|p| v[p.long] - v[p.short] < 12.0, 0).unwrap();
        full.add_fine_balance(&[1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let mut pruned = full.clone();
        let removed = pruned.prune_forbidden();
        assert!(removed > 0);
        assert_eq!(pruned.n_vars(), full.n_vars() - removed);
        for m in matchings(5) {
            let fx = full.selection(&m).unwrap();
            let feasible_full = full.is_feasible(&fx);
            match pruned.selection(&m) {
                Ok(px) => {
                    assert_eq!(pruned.is_feasible(&px), feasible_full);
                    assert!((pruned.objective_value(&px) - full.objective_value(&fx)).abs() < 1e-12);
                }
                Err(_) => assert!(!feasible_full),
            }
        }
    }

    #[test]
    fn orientation_after_side_rows_rejected() {
        let mut p = new_program(&flat(3, 1.0), 0.0).unwrap();
        p.add_fine_balance(&[1.0, 0.0, 0.0]).unwrap();
        assert!(p.orient_by(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn json_dump_carries_provenance() {
        let mut p = new_program(&flat(3, 1.0), 0.0).unwrap();
        p.add_fine_balance(&[1.0, 0.0, 0.0]).unwrap();
        let json = p.to_json();
        assert!(json.contains("\"fine_balance\""));
        assert!(json.contains("\"p_1_2\""));
    }
}
