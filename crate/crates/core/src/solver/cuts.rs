//! Odd-set inequalities `Σ_{e ⊆ S} a_e ≤ (|S| − 1) / 2` for odd unit sets
//! `S`. Every matching satisfies them, so they can be added to any node's
//! relaxation.
//!
//! With degree slack `s_v = 1 − x(δ(v))` the row is equivalent to
//! `x(δ(S)) + s(S) ≥ 1`. Adding a sink joined to each unit by an edge of
//! weight `s_v` turns this into a minimum odd cut, found exactly among the
//! fundamental cuts of a Gomory–Hu tree built with Gusfield's method.
//! Triangles are also checked directly since they are cheap.
//!
//! Balance rows with integer coefficients give a second family. Adding a
//! row `r·a ≤ b` (or `=`) to the degree rows of a unit set `S` and halving
//! gives `Σ ⌊(|e ∩ S| + r_e) / 2⌋ a_e ≤ ⌊(|S| + b) / 2⌋`, valid for any `S`.
//! With `S` the units on one side of a fine-balance indicator this says an
//! odd category cannot be matched completely.

use std::collections::HashSet;

use crate::ipmodel::{BinaryMatchProgram, Relation, Row, RowKind};

const FRACTIONAL: f64 = 1e-6;
const MIN_VIOLATION: f64 = 1e-4;

struct Candidate {
    units: Vec<usize>,
    violation: f64,
    /// Balance row combined with the degree rows, if any.
    with_row: Option<usize>,
}

/// Dense max-flow network over at most a few hundred nodes.
struct Network {
    n: usize,
    cap: Vec<f64>,
    adj: Vec<Vec<usize>>,
}

impl Network {
    fn new(n: usize) -> Self {
        Network {
            n,
            cap: vec![0.0; n * n],
            adj: vec![Vec::new(); n],
        }
    }

    fn add_edge(&mut self, a: usize, b: usize, w: f64) {
        if self.cap[a * self.n + b] == 0.0 {
            self.adj[a].push(b);
            self.adj[b].push(a);
        }
        self.cap[a * self.n + b] += w;
        self.cap[b * self.n + a] += w;
    }

    /// Max-flow value from `s` to `t` and the source side of a minimum cut.
    fn min_cut(&self, s: usize, t: usize) -> (f64, Vec<bool>) {
        let n = self.n;
        let mut residual = self.cap.clone();
        let mut flow = 0.0;
        loop {
            let mut prev = vec![usize::MAX; n];
            prev[s] = s;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                if u == t {
                    break;
                }
                for &v in &self.adj[u] {
                    if prev[v] == usize::MAX && residual[u * n + v] > 1e-12 {
                        prev[v] = u;
                        queue.push_back(v);
                    }
                }
            }
            if prev[t] == usize::MAX {
                let side = prev.iter().map(|&p| p != usize::MAX).collect();
                return (flow, side);
            }
            let mut push = f64::INFINITY;
            let mut v = t;
            while v != s {
                let u = prev[v];
                push = push.min(residual[u * n + v]);
                v = u;
            }
            let mut v = t;
            while v != s {
                let u = prev[v];
                residual[u * n + v] -= push;
                residual[v * n + u] += push;
                v = u;
            }
            flow += push;
        }
    }

    fn cut_value(&self, side: &[bool]) -> f64 {
        let mut total = 0.0;
        for u in (0..self.n).filter(|&u| side[u]) {
            for &v in &self.adj[u] {
                if !side[v] {
                    total += self.cap[u * self.n + v];
                }
            }
        }
        total
    }
}

/// Odd unit sets `S` with their value of `x(δ(S)) + s(S)`, one per
/// fundamental cut of a Gomory–Hu tree that splits the units oddly.
fn odd_cuts(program: &BinaryMatchProgram, x: &[f64]) -> Vec<(Vec<usize>, f64)> {
    let index = program.index();
    let n_units = program.n_units();
    let sink = n_units;
    let mut net = Network::new(n_units + 1);
    let mut degree = vec![0.0; n_units];
    for (v, p) in index.pairs().iter().enumerate() {
        if x[v] > 1e-9 {
            net.add_edge(p.lo(), p.hi(), x[v]);
            degree[p.lo()] += x[v];
            degree[p.hi()] += x[v];
        }
    }
    for (u, &d) in degree.iter().enumerate() {
        let slack = (1.0 - d).max(0.0);
        if slack > 1e-9 {
            net.add_edge(u, sink, slack);
        }
    }

    // Gusfield: parent links form a Gomory–Hu tree
    let nodes = n_units + 1;
    let mut parent = vec![0usize; nodes];
    for s in 1..nodes {
        let t = parent[s];
        let (_, side) = net.min_cut(s, t);
        for i in (s + 1)..nodes {
            if side[i] && parent[i] == t {
                parent[i] = s;
            }
        }
        if side[parent[t]] {
            parent[s] = parent[t];
            parent[t] = s;
        }
    }

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for s in 1..nodes {
        if parent[s] != s {
            children[parent[s]].push(s);
        }
    }
    let mut out = Vec::new();
    for s in 1..nodes {
        // subtree below the edge (s, parent[s])
        let mut side = vec![false; nodes];
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            if side[u] {
                continue;
            }
            side[u] = true;
            stack.extend(children[u].iter().copied());
        }
        if side[sink] {
            side.iter_mut().for_each(|b| *b = !*b);
        }
        let units: Vec<usize> = (0..n_units).filter(|&u| side[u]).collect();
        if units.len() >= 3 && units.len() % 2 == 1 {
            out.push((units, net.cut_value(&side)));
        }
    }
    out
}

/// Violated odd-set rows for the point `x`, most violated first, skipping
/// unit sets already in `seen`. Returned rows are unnamed beyond a counter
/// starting at `first_id`.
pub(crate) fn separate(
    program: &BinaryMatchProgram,
    x: &[f64],
    seen: &mut HashSet<Vec<usize>>,
    max_cuts: usize,
    first_id: usize,
) -> Vec<Row> {
    let index = program.index();
    let n_units = program.n_units();
    let fractional: Vec<usize> = (0..x.len())
        .filter(|&v| x[v] > FRACTIONAL && x[v] < 1.0 - FRACTIONAL)
        .collect();
    if fractional.is_empty() {
        return Vec::new();
    }

    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_units];
    for &v in &fractional {
        let p = index.pair(v);
        adj[p.lo()].push(p.hi());
        adj[p.hi()].push(p.lo());
    }
    let value = |a: usize, b: usize| index.position(a, b).map_or(0.0, |v| x[v]);

    let mut found = Vec::new();
    for &v in &fractional {
        let p = index.pair(v);
        let (a, b) = (p.lo(), p.hi());
        for &c in &adj[a] {
            if c <= b {
                continue;
            }
            let total = x[v] + value(a, c) + value(b, c);
            if total > 1.0 + MIN_VIOLATION {
                found.push(Candidate {
                    units: vec![a, b, c],
                    violation: total - 1.0,
                    with_row: None,
                });
            }
        }
    }

    for (units, cut) in odd_cuts(program, x) {
        let violation = 1.0 - cut;
        if violation > MIN_VIOLATION && units.len() > 3 {
            found.push(Candidate {
                units,
                violation,
                with_row: None,
            });
        }
    }

    for cand in parity_candidates(program, x) {
        found.push(cand);
    }

    found.sort_by(|a, b| b.violation.total_cmp(&a.violation).then(a.units.cmp(&b.units)));
    let mut rows = Vec::new();
    for cand in found {
        if rows.len() >= max_cuts {
            break;
        }
        let mut key = cand.units.clone();
        if let Some(r) = cand.with_row {
            key.push(usize::MAX - r);
        }
        if !seen.insert(key) {
            continue;
        }
        let (coefs, rhs) = match cand.with_row {
            None => odd_set_row(program, &cand.units),
            Some(r) => parity_row(program, &cand.units, r).expect("candidate rows are integral"),
        };
        rows.push(Row {
            name: format!("OS{}", first_id + rows.len()),
            kind: RowKind::OddSet,
            coefs,
            relation: Relation::Le,
            rhs,
        });
    }
    rows
}

fn membership(n_units: usize, units: &[usize]) -> Vec<bool> {
    let mut in_set = vec![false; n_units];
    for &u in units {
        in_set[u] = true;
    }
    in_set
}

fn odd_set_row(program: &BinaryMatchProgram, units: &[usize]) -> (Vec<(usize, f64)>, f64) {
    let in_set = membership(program.n_units(), units);
    let coefs = program
        .index()
        .pairs()
        .iter()
        .enumerate()
        .filter(|(_, p)| in_set[p.long] && in_set[p.short])
        .map(|(v, _)| (v, 1.0))
        .collect();
    (coefs, ((units.len() - 1) / 2) as f64)
}

/// Integer coefficients of a `≤` or `=` balance row, densified.
fn integral_row(program: &BinaryMatchProgram, r: usize) -> Option<(Vec<i64>, i64)> {
    let row = &program.rows()[r];
    let integral = |v: f64| (v - v.round()).abs() < 1e-9;
    if row.relation == Relation::Ge || !integral(row.rhs) || !row.coefs.iter().all(|c| integral(c.1)) {
        return None;
    }
    let mut dense = vec![0i64; program.n_vars()];
    for &(v, c) in &row.coefs {
        dense[v] = c.round() as i64;
    }
    Some((dense, row.rhs.round() as i64))
}

/// Degree rows of `units` plus balance row `r`, halved and rounded down.
fn parity_row(program: &BinaryMatchProgram, units: &[usize], r: usize) -> Option<(Vec<(usize, f64)>, f64)> {
    let (dense, b) = integral_row(program, r)?;
    let in_set = membership(program.n_units(), units);
    let coefs = program
        .index()
        .pairs()
        .iter()
        .enumerate()
        .filter_map(|(v, p)| {
            let a = i64::from(in_set[p.long]) + i64::from(in_set[p.short]) + dense[v];
            let k = a.div_euclid(2);
            (k != 0).then_some((v, k as f64))
        })
        .collect();
    Some((coefs, (units.len() as i64 + b).div_euclid(2) as f64))
}

/// Unit sets read off each balance row: units that sit on the `+1` side of
/// some pair, their complement, and each of those less its least matched
/// unit when that fixes the parity.
fn parity_candidates(program: &BinaryMatchProgram, x: &[f64]) -> Vec<Candidate> {
    let n_units = program.n_units();
    let mut degree = vec![0.0; n_units];
    for (v, p) in program.index().pairs().iter().enumerate() {
        degree[p.long] += x[v];
        degree[p.short] += x[v];
    }
    let mut out = Vec::new();
    for (r, row) in program.rows().iter().enumerate() {
        if !matches!(row.kind, RowKind::FineBalance | RowKind::NearFine) {
            continue;
        }
        let Some((dense, b)) = integral_row(program, r) else {
            continue;
        };
        let mut plus = vec![false; n_units];
        for (v, p) in program.index().pairs().iter().enumerate() {
            match dense[v] {
                1 => plus[p.long] = true,
                -1 => plus[p.short] = true,
                _ => {}
            }
        }
        for side in [true, false] {
            let base: Vec<usize> = (0..n_units).filter(|&u| plus[u] == side).collect();
            let mut sets = Vec::new();
            if (base.len() as i64 + b) % 2 != 0 {
                sets.push(base);
            } else if let Some(&drop) = base
                .iter()
                .min_by(|&&a, &&c| degree[a].total_cmp(&degree[c]).then(a.cmp(&c)))
            {
                sets.push(base.iter().copied().filter(|&u| u != drop).collect());
            }
            for units in sets {
                if units.is_empty() {
                    continue;
                }
                let (coefs, rhs) = parity_row(program, &units, r).expect("row is integral");
                let lhs: f64 = coefs.iter().map(|&(v, k)| k * x[v]).sum();
                let violation = lhs - rhs;
                if violation > MIN_VIOLATION {
                    out.push(Candidate {
                        units,
                        violation,
                        with_row: Some(r),
                    });
                }
            }
        }
    }
    out
}
