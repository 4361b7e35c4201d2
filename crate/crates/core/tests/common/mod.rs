//! Oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use ivmatch::cohort::{Access, Cohort};
use ivmatch::config::RunConfig;
use ivmatch::diagnostics::MatchedStudy;
use ivmatch::distance::DistanceMatrix;
use ivmatch::ipmodel::{new_program, BinaryMatchProgram, Relation};
use ivmatch::synthetic::{self, SyntheticSpec};

/// Every partial matching of `n` units, as lists of `(lo, hi)` pairs.
pub fn matchings(n: usize) -> Vec<Vec<(usize, usize)>> {
    fn extend(
        used: &mut Vec<bool>,
        from: usize,
        current: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        let Some(a) = (from..used.len()).find(|&u| !used[u]) else {
            out.push(current.clone());
            return;
        };
        used[a] = true;
        extend(used, a + 1, current, out);
        for b in a + 1..used.len() {
            if !used[b] {
                used[b] = true;
                current.push((a, b));
                extend(used, a + 1, current, out);
                current.pop();
                used[b] = false;
            }
        }
        used[a] = false;
    }
    let mut out = Vec::new();
    extend(&mut vec![false; n], 0, &mut Vec::new(), &mut out);
    out
}

/// Row check written against the raw coefficients, independent of the
/// program's own feasibility test.
pub fn satisfies(program: &BinaryMatchProgram, x: &[f64]) -> bool {
    program.rows().iter().all(|row| {
        let lhs: f64 = row.coefs.iter().map(|&(v, c)| c * x[v]).sum();
        let tol = 1e-7 * (1.0 + row.rhs.abs());
        match row.relation {
            Relation::Le => lhs <= row.rhs + tol,
            Relation::Ge => lhs >= row.rhs - tol,
            Relation::Eq => (lhs - row.rhs).abs() <= tol,
        }
    })
}

/// Best feasible matching by enumeration: `(objective, pairs)`, or `None`
/// when no matching satisfies every row. Pairs that are not candidates of
/// the program are skipped.
pub fn brute_force(program: &BinaryMatchProgram) -> Option<(f64, Vec<(usize, usize)>)> {
    let index = program.index();
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    'outer: for m in matchings(program.n_units()) {
        let mut x = vec![0.0; program.n_vars()];
        for &(a, b) in &m {
            match index.position(a, b) {
                Some(v) => x[v] = 1.0,
                None => continue 'outer,
            }
        }
        if !satisfies(program, &x) {
            continue;
        }
        let value: f64 = program.objective().iter().zip(&x).map(|(c, v)| c * v).sum();
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, m));
        }
    }
    best
}

/// A program over at most `max_units` units with one row of every side family and
/// occasionally a pair-count floor that can make it infeasible.
pub fn random_program(rng: &mut ChaCha8Rng, max_units: usize) -> BinaryMatchProgram {
    let n = rng.random_range(2..=max_units);
    let d: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.random_range(0.0..10.0)).collect())
        .collect();
    let dist = DistanceMatrix::from_fn(n, |i, j| if i == j { 0.0 } else { d[i.min(j)][i.max(j)] })
        .expect("distances");
    let lambda = rng.random_range(0.0..10.0);
    let inst: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(20..50u32))).collect();
    let bits = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect() };

    let mut p = new_program(&dist, lambda).expect("program");
    p.orient_by(&inst).expect("orient");
    let flags: Vec<bool> = (0..p.n_vars()).map(|_| rng.random_bool(0.3)).collect();
    p.add_cap(&flags, rng.random_range(0..=2)).expect("cap");
    if rng.random_bool(0.3) {
        let h = f64::from(rng.random_range(0..12u32));
        p.add_cap_where(|pair| inst[pair.long] - inst[pair.short] < h, 0).expect("hard cap");
        p.prune_forbidden();
    }
    let w = bits(rng);
    p.add_fine_balance(&w).expect("fine");
    let w = bits(rng);
    p.add_near_fine_balance(&w, rng.random_range(0..=1)).expect("near-fine");
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
    p.add_mean_balance(&v, rng.random_range(0.5..5.0)).expect("mean");
    p.add_separation(&inst, rng.random_range(0.0..15.0)).expect("separation");
    if rng.random_bool(0.25) {
        p.add_pair_count(rng.random_range(1..=(n as u64 / 2 + 1)), Relation::Ge).expect("count");
    }
    p
}

fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

/// `P(Bin(n, p) ≤ k)` as an explicit sum of terms computed in log space.
pub fn binom_cdf(n: u64, k: u64, p: f64) -> f64 {
    if k >= n {
        return 1.0;
    }
    let terms: Vec<f64> = (0..=k)
        .map(|j| ln_choose(n, j) + j as f64 * p.ln() + (n - j) as f64 * (1.0 - p).ln())
        .collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()).exp()
}

/// `P(Bin(n, p) ≥ k)`.
pub fn binom_sf(n: u64, k: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    binom_cdf(n, n - k, 1.0 - p)
}

/// A seeded synthetic cohort with the instrument attached, and its config.
pub fn synthetic_cohort(units: usize, hospitals: usize, years: usize, seed: u64) -> (Cohort, RunConfig) {
    let text = synthetic::generate(&SyntheticSpec {
        units,
        hospitals,
        years,
        seed,
    });
    let config = synthetic::config("cohort.csv");
    let mut cohort = Cohort::ingest(text.as_bytes(), &config.schema, Access::Design).expect("ingest");
    cohort.compute_alos().expect("alos");
    (cohort, config)
}

/// Re-derives every design rule of the synthetic config from the raw unit
/// records and returns a description of each breach.
pub fn recount(cohort: &Cohort, config: &RunConfig, study: &MatchedStudy) -> Vec<String> {
    let m = &config.matching;
    let mut problems = Vec::new();
    let mut seen = vec![false; cohort.len()];
    let mut by_stratum: HashMap<&str, Vec<(usize, usize)>> = HashMap::new();
    for p in &study.pairs {
        for u in [p.long, p.short] {
            if std::mem::replace(&mut seen[u], true) {
                problems.push(format!("unit {} is used twice", cohort.units[u].id));
            }
        }
        if cohort.units[p.long].exact_keys != cohort.units[p.short].exact_keys {
            problems.push(format!("pair {}-{} crosses strata", p.long, p.short));
        }
        by_stratum.entry(p.stratum.as_str()).or_default().push((p.long, p.short));
    }
    let inst = |u: usize| cohort.units[u].instrument.expect("instrument");
    let nominal = |name: &str| cohort.nominal_names.iter().position(|n| n == name).expect("nominal");
    let covariate = |name: &str| cohort.covariate_names.iter().position(|n| n == name).expect("covariate");

    for (key, pairs) in &by_stratum {
        let units = study
            .strata
            .iter()
            .find(|s| s.key == *key)
            .map(|s| s.units)
            .expect("stratum summary");
        let mut gaps = 0.0;
        for &(l, s) in pairs {
            let gap = inst(l) - inst(s);
            if gap < m.separation_hours {
                problems.push(format!("{key}: pair gap {gap} below {}", m.separation_hours));
            }
            gaps += gap;
        }
        if let Some(phi) = m.mean_separation_hours {
            let mean = gaps / pairs.len() as f64;
            if mean < phi - 1e-9 {
                problems.push(format!("{key}: mean gap {mean} below {phi}"));
            }
        }
        let side_count = |col: usize, cat: &str| {
            let long = pairs.iter().filter(|&&(l, _)| cohort.units[l].nominal[col] == cat).count() as i64;
            let short = pairs.iter().filter(|&&(_, s)| cohort.units[s].nominal[col] == cat).count() as i64;
            long - short
        };
        for var in &m.fine_balance {
            let col = nominal(var);
            for cat in cohort.categories(col) {
                let d = side_count(col, &cat);
                if d != 0 {
                    problems.push(format!("{key}: {var}={cat} differs by {d}"));
                }
            }
        }
        for rule in &m.near_fine {
            let col = nominal(&rule.variable);
            for cat in cohort.categories(col) {
                let d = side_count(col, &cat);
                if d.abs() > rule.epsilon {
                    problems.push(format!("{key}: {}={cat} differs by {d}", rule.variable));
                }
            }
        }
        for rule in &m.caps {
            let var = rule.mismatch.as_deref().expect("mismatch cap");
            let col = nominal(var);
            let count = pairs
                .iter()
                .filter(|&&(l, s)| cohort.units[l].nominal[col] != cohort.units[s].nominal[col])
                .count() as i64;
            let limit = match (rule.count, rule.fraction) {
                (Some(c), _) => c,
                (None, Some(f)) => (f * units as f64).floor() as i64,
                _ => unreachable!(),
            };
            if count > limit {
                problems.push(format!("{key}: {count} {var} mismatches over {limit}"));
            }
        }
        for rule in &m.mean_balance {
            let k = covariate(&rule.variable);
            let all: Vec<f64> = cohort.units.iter().map(|u| u.covariates[k]).collect();
            let mean_all = all.iter().sum::<f64>() / all.len() as f64;
            let sd = (all.iter().map(|v| (v - mean_all).powi(2)).sum::<f64>() / (all.len() - 1) as f64).sqrt();
            let eps = rule.epsilon.unwrap_or_else(|| rule.epsilon_sd.expect("epsilon") * sd);
            let n = pairs.len() as f64;
            let long = pairs.iter().map(|&(l, _)| cohort.units[l].covariates[k]).sum::<f64>() / n;
            let short = pairs.iter().map(|&(_, s)| cohort.units[s].covariates[k]).sum::<f64>() / n;
            if (long - short).abs() > eps * (1.0 + 1e-9) {
                problems.push(format!("{key}: {} means differ by {}", rule.variable, long - short));
            }
        }
    }
    problems
}
