//! End-to-end driver: ingest, instrument, strata, distances, programs,
//! solve, reports and inference.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use crate::cohort::{join_key, Access, Cohort};
use crate::config::{CapRule, Lambda, RunConfig, DEFAULT_EPSILON_SD};
use crate::diagnostics::{
    balance_report, separation_sweep, std_dev, strength_report, BalanceReport, DayBins,
    MatchedPair, MatchedStudy, StratumSummary, StrengthReport, SweepTable,
};
use crate::distance::{robust_mahalanobis, DistanceMatrix};
use crate::inference::{tabulate, three_part_test, ThreePartTest};
use crate::ipmodel::{new_program, BinaryMatchProgram, ROW_TOLERANCE};
use crate::solver::{self, Limits, MatchSolution, Status};
use crate::{exec, Error, Result};

/// Units solved together: one exact-match stratum, or one part of a split
/// stratum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratumPlan {
    pub key: String,
    /// Indices into `Cohort::units`.
    pub members: Vec<usize>,
}

/// A built program ready to solve.
#[derive(Debug, Clone)]
pub struct StratumJob {
    pub plan: StratumPlan,
    pub program: BinaryMatchProgram,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub jobs: Vec<StratumJob>,
    pub lambda: f64,
    /// Units in strata too small to pair.
    pub unpaired: Vec<usize>,
}

/// Reads the cohort named in the config and attaches the instrument.
pub fn load_cohort(config: &RunConfig, access: Access) -> Result<Cohort> {
    let file = fs::File::open(&config.input).map_err(|e| Error::io(&config.input, e))?;
    let mut cohort = Cohort::ingest(std::io::BufReader::new(file), &config.schema, access)?;
    cohort.compute_alos()?;
    info!("{} units read from {}", cohort.len(), config.input.display());
    Ok(cohort)
}

fn instrument(cohort: &Cohort, u: usize) -> Result<f64> {
    cohort.units[u].instrument.ok_or_else(|| {
        Error::InvalidArgument(format!("unit {:?} has no instrument value", cohort.units[u].id))
    })
}

/// Pairs `(i, j)` among `values` with `|v_i − v_j| ≥ gap`.
fn candidate_pairs(values: &[f64], gap: f64) -> usize {
    let n = values.len();
    if gap <= 0.0 {
        return n * n.saturating_sub(1) / 2;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| n - sorted[i + 1..].partition_point(|&w| w - v < gap) - (i + 1))
        .sum()
}

fn nominal(cohort: &Cohort, name: &str) -> Result<usize> {
    cohort
        .nominal_index(name)
        .ok_or_else(|| Error::Config(format!("{name:?} is not a nominal column")))
}

fn covariate(cohort: &Cohort, name: &str) -> Result<usize> {
    cohort
        .covariate_index(name)
        .ok_or_else(|| Error::Config(format!("{name:?} is not a covariate column")))
}

/// Exact-match strata, with any stratum whose candidate pair count exceeds
/// the configured maximum split on the `split_on` column.
pub fn plan_strata(cohort: &Cohort, config: &RunConfig) -> Result<Vec<StratumPlan>> {
    let max = config.solver.max_pair_variables;
    let gap = config.matching.separation_hours;
    let mut plans = Vec::new();
    for stratum in cohort.stratify() {
        let key = stratum.key_string();
        let values = stratum
            .members
            .iter()
            .map(|&u| instrument(cohort, u))
            .collect::<Result<Vec<_>>>()?;
        let count = candidate_pairs(&values, gap);
        if count <= max {
            plans.push(StratumPlan {
                key,
                members: stratum.members,
            });
            continue;
        }
        let Some(split) = config.solver.split_on.as_deref() else {
            return Err(Error::Config(format!(
                "stratum {key:?} has {count} candidate pairs, over the limit of {max}; set solver.split_on"
            )));
        };
        let col = nominal(cohort, split)?;
        warn!("stratum {key:?}: {count} candidate pairs, splitting on {split}");
        let mut parts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for &u in &stratum.members {
            parts.entry(cohort.units[u].nominal[col].as_str()).or_default().push(u);
        }
        for (cat, members) in parts {
            let sub_key = join_key(&[key.clone(), format!("{split}={cat}")]);
            let values = members
                .iter()
                .map(|&u| instrument(cohort, u))
                .collect::<Result<Vec<_>>>()?;
            let count = candidate_pairs(&values, gap);
            if count > max {
                return Err(Error::Config(format!(
                    "stratum {sub_key:?} still has {count} candidate pairs after splitting"
                )));
            }
            plans.push(StratumPlan { key: sub_key, members });
        }
    }
    Ok(plans)
}

fn distance_columns(cohort: &Cohort, config: &RunConfig) -> Result<Vec<usize>> {
    match &config.distance.covariates {
        Some(names) => names.iter().map(|n| covariate(cohort, n)).collect(),
        None => Ok((0..cohort.covariate_names.len()).collect()),
    }
}

fn stratum_distances(cohort: &Cohort, plan: &StratumPlan, cols: &[usize]) -> Result<DistanceMatrix> {
    if cols.is_empty() {
        return DistanceMatrix::from_fn(plan.members.len(), |_, _| 0.0);
    }
    let rows: Vec<Vec<f64>> = plan
        .members
        .iter()
        .map(|&u| cols.iter().map(|&k| cohort.units[u].covariates[k]).collect())
        .collect();
    let d = robust_mahalanobis(&rows)?;
    if d.rank_deficient {
        warn!("stratum {:?}: covariate rank covariance is singular, using a pseudo-inverse", plan.key);
    }
    Ok(d)
}

fn indicator(cohort: &Cohort, members: &[usize], col: usize, category: &str) -> Vec<f64> {
    members
        .iter()
        .map(|&u| f64::from(u8::from(cohort.units[u].nominal[col] == category)))
        .collect()
}

fn cap_flags(
    cohort: &Cohort,
    members: &[usize],
    inst: &[f64],
    rule: &CapRule,
) -> Result<Box<dyn Fn(crate::ipmodel::Pair) -> bool>> {
    if let Some(var) = &rule.mismatch {
        let col = nominal(cohort, var)?;
        let cats: Vec<String> = members.iter().map(|&u| cohort.units[u].nominal[col].clone()).collect();
        return Ok(Box::new(move |p| cats[p.long] != cats[p.short]));
    }
    let below = rule.instrument_gap_below.unwrap_or(0.0);
    let inst = inst.to_vec();
    Ok(Box::new(move |p| inst[p.long] - inst[p.short] < below))
}

/// Builds the pairing program for one stratum. With `prune`, pairs
/// forbidden by zero-limit caps (including the hard separation) are
/// dropped from the variable set; the feasible set is the same either way.
pub fn build_program(
    cohort: &Cohort,
    plan: &StratumPlan,
    distances: &DistanceMatrix,
    lambda: f64,
    config: &RunConfig,
    prune: bool,
) -> Result<BinaryMatchProgram> {
    let m = &config.matching;
    let members = &plan.members;
    let inst = members
        .iter()
        .map(|&u| instrument(cohort, u))
        .collect::<Result<Vec<_>>>()?;
    let mut program = new_program(distances, lambda)?;
    program.orient_by(&inst)?;

    if m.separation_hours > 0.0 {
        let h = m.separation_hours;
        program.add_cap_where(|p| inst[p.long] - inst[p.short] < h, 0)?;
    }
    for rule in &m.caps {
        let flag = cap_flags(cohort, members, &inst, rule)?;
        program.add_cap_where(flag, rule.limit_for(members.len()))?;
    }
    if prune {
        let removed = program.prune_forbidden();
        log::debug!("stratum {:?}: pruned {removed} forbidden pairs", plan.key);
    }

    for var in &m.fine_balance {
        let col = nominal(cohort, var)?;
        let cats = cohort.categories(col);
        for cat in cats.iter().take(cats.len().saturating_sub(1)) {
            let w = indicator(cohort, members, col, cat);
            if w.iter().any(|&x| x != w[0]) {
                program.add_fine_balance(&w)?;
            }
        }
    }
    for rule in &m.near_fine {
        let col = nominal(cohort, &rule.variable)?;
        let cats = cohort.categories(col);
        for cat in cats.iter().take(cats.len().saturating_sub(1)) {
            let w = indicator(cohort, members, col, cat);
            if w.iter().any(|&x| x != w[0]) {
                program.add_near_fine_balance(&w, rule.epsilon)?;
            }
        }
    }
    for rule in &m.mean_balance {
        let k = covariate(cohort, &rule.variable)?;
        let epsilon = match rule.epsilon {
            Some(e) => e,
            None => {
                let all: Vec<f64> = cohort.units.iter().map(|u| u.covariates[k]).collect();
                rule.epsilon_sd.unwrap_or(DEFAULT_EPSILON_SD) * std_dev(&all)
            }
        };
        if epsilon > 0.0 {
            let v: Vec<f64> = members.iter().map(|&u| cohort.units[u].covariates[k]).collect();
            program.add_mean_balance(&v, epsilon)?;
        }
    }
    if let Some(phi) = m.mean_separation_hours {
        program.add_separation(&inst, phi)?;
    }
    Ok(program)
}

fn resolve_lambda(config: &RunConfig, distances: &[DistanceMatrix]) -> f64 {
    match config.matching.lambda {
        Lambda::Value(l) => l,
        Lambda::Rule(_) => {
            let mut all: Vec<f64> = distances.iter().flat_map(|d| d.upper_triangle()).collect();
            crate::cohort::median(&mut all).unwrap_or(0.0)
        }
    }
}

/// Plans strata, computes distances and λ, and builds one program per
/// stratum with at least two units.
pub fn prepare(cohort: &Cohort, config: &RunConfig) -> Result<Prepared> {
    let plans = plan_strata(cohort, config)?;
    let cols = distance_columns(cohort, config)?;
    let (plans, small): (Vec<_>, Vec<_>) = plans.into_iter().partition(|p| p.members.len() >= 2);
    let unpaired = small.into_iter().flat_map(|p| p.members).collect();
    let distances = exec::map(&plans, |p| stratum_distances(cohort, p, &cols))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let lambda = resolve_lambda(config, &distances);
    info!("{} strata, lambda = {lambda:.4}", plans.len());
    let indices: Vec<usize> = (0..plans.len()).collect();
    let jobs = exec::map(&indices, |&i| {
        build_program(cohort, &plans[i], &distances[i], lambda, config, true).map(|program| StratumJob {
            plan: plans[i].clone(),
            program,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        jobs,
        lambda,
        unpaired,
    })
}

pub fn solve_job(job: &StratumJob, limits: &Limits) -> Result<MatchSolution> {
    solver::solve(&job.program, limits)
}

/// Solves every stratum and merges the results into a study. The cohort
/// must carry instrument values; outcomes are not consulted.
pub fn match_cohort(cohort: &Cohort, config: &RunConfig) -> Result<MatchedStudy> {
    let prepared = prepare(cohort, config)?;
    let limits = config.solver.limits();
    let solutions = exec::map(&prepared.jobs, |job| solve_job(job, &limits))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    merge(cohort, config, prepared, solutions)
}

fn merge(
    cohort: &Cohort,
    config: &RunConfig,
    prepared: Prepared,
    solutions: Vec<MatchSolution>,
) -> Result<MatchedStudy> {
    let mut used = vec![false; cohort.len()];
    let mut pairs = Vec::new();
    let mut strata = Vec::new();
    let mut limited = Vec::new();
    for (job, sol) in prepared.jobs.iter().zip(solutions) {
        let key = &job.plan.key;
        match sol.status {
            Status::Optimal => {}
            Status::FeasibleGap => warn!("stratum {key:?}: stopped at a limit with gap {:.3e}", sol.gap),
            Status::UnknownLimit => limited.push(key.clone()),
            Status::Infeasible => {
                return Err(Error::Infeasible(format!("stratum {key:?} has no feasible pairing")))
            }
        }
        for p in &sol.pairs {
            let (long, short) = (job.plan.members[p.long], job.plan.members[p.short]);
            used[long] = true;
            used[short] = true;
            pairs.push(MatchedPair {
                stratum: key.clone(),
                long,
                short,
            });
        }
        strata.push(StratumSummary {
            key: key.clone(),
            units: job.plan.members.len(),
            candidate_pairs: job.program.n_vars(),
            pairs: sol.pairs.len(),
            objective: sol.objective,
            bound: sol.bound,
            gap: sol.gap,
            status: sol.status,
            nodes: sol.nodes,
        });
    }
    if !limited.is_empty() {
        if config.solver.allow_gap {
            warn!("no feasible pairing found before the limit in {} strata", limited.len());
        } else {
            return Err(Error::LimitReached(limited));
        }
    }
    let discarded = (0..cohort.len()).filter(|&u| !used[u]).collect();
    info!("{} pairs formed", pairs.len());
    Ok(MatchedStudy {
        pairs,
        discarded,
        strata,
        lambda: prepared.lambda,
    })
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn day_bins(config: &RunConfig) -> DayBins {
    DayBins {
        start: config.report.day_start_hours,
        width: config.report.day_width_hours,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchRun {
    pub study: MatchedStudy,
    pub balance: BalanceReport,
    pub strength: StrengthReport,
    pub files: Vec<PathBuf>,
}

fn strata_csv(study: &MatchedStudy) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record([
        "stratum_key", "units", "candidate_pairs", "pairs", "objective", "bound", "gap", "status", "nodes",
    ]);
    for s in &study.strata {
        let status = match s.status {
            Status::Optimal => "optimal",
            Status::FeasibleGap => "feasible_gap",
            Status::Infeasible => "infeasible",
            Status::UnknownLimit => "unknown_limit",
        };
        let _ = w.write_record([
            s.key.clone(),
            s.units.to_string(),
            s.candidate_pairs.to_string(),
            s.pairs.to_string(),
            format!("{:.6}", s.objective),
            format!("{:.6}", s.bound),
            format!("{:.3e}", s.gap),
            status.to_string(),
            s.nodes.to_string(),
        ]);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

/// Builds and solves the match, then writes `pairs.csv`, `strata.csv`,
/// `balance.*` and `strength.*` to the output directory. The outcome column
/// is never read.
pub fn run_match(config: &RunConfig) -> Result<MatchRun> {
    let cohort = load_cohort(config, Access::Design)?;
    let study = match_cohort(&cohort, config)?;
    let balance = balance_report(&study, &cohort);
    let strength = strength_report(&study, &cohort, day_bins(config))?;
    let dir = &config.output_dir;
    ensure_dir(dir)?;
    let files = vec![
        write(dir, "pairs.csv", &study.to_csv(&cohort))?,
        write(dir, "strata.csv", &strata_csv(&study))?,
        write(dir, "balance.csv", &balance.to_csv())?,
        write(dir, "balance.txt", &balance.to_text())?,
        write(dir, "strength.csv", &strength.to_csv())?,
        write(dir, "strength.txt", &strength.to_text())?,
    ];
    Ok(MatchRun {
        study,
        balance,
        strength,
        files,
    })
}

fn read_study(path: &Path, cohort: &Cohort) -> Result<MatchedStudy> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MatchedStudy::from_csv(&text, cohort)
}

/// Tabulates outcomes for a saved study and runs the three-part test over
/// the Γ grid; writes `inference.csv` and `inference.txt`.
pub fn run_infer(config: &RunConfig, study_path: &Path) -> Result<ThreePartTest> {
    let cohort = load_cohort(config, Access::Analysis)?;
    let study = read_study(study_path, &cohort)?;
    let table = tabulate(&study, &cohort)?;
    let inf = &config.inference;
    let result = three_part_test(&table, inf.delta0_for(table.pairs()), inf.alpha, &inf.gammas)?;
    ensure_dir(&config.output_dir)?;
    write(&config.output_dir, "inference.csv", &result.to_csv())?;
    write(&config.output_dir, "inference.txt", &result.summary())?;
    Ok(result)
}

/// Separation sweep over the configured thresholds; writes `sweep.csv` and
/// `sweep.txt`.
pub fn run_sweep(config: &RunConfig) -> Result<SweepTable> {
    let cohort = load_cohort(config, Access::Design)?;
    let table = separation_sweep(&cohort, config, &config.sweep.thresholds)?;
    ensure_dir(&config.output_dir)?;
    write(&config.output_dir, "sweep.csv", &table.to_csv())?;
    write(&config.output_dir, "sweep.txt", &table.to_text())?;
    Ok(table)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CheckReport {
    pub strata: usize,
    pub pairs: usize,
    pub violations: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Verifies a study against every constraint of the configured design by
/// rebuilding each stratum's unpruned program and evaluating its rows.
pub fn check_study(cohort: &Cohort, config: &RunConfig, study: &MatchedStudy) -> Result<CheckReport> {
    let plans = plan_strata(cohort, config)?;
    let mut report = CheckReport {
        strata: plans.len(),
        pairs: study.len(),
        violations: Vec::new(),
    };
    let mut by_key: HashMap<&str, Vec<&MatchedPair>> = HashMap::new();
    for p in &study.pairs {
        by_key.entry(p.stratum.as_str()).or_default().push(p);
    }
    for plan in &plans {
        let Some(pairs) = by_key.remove(plan.key.as_str()) else {
            continue;
        };
        let local: HashMap<usize, usize> =
            plan.members.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let mut selected = Vec::new();
        for p in pairs {
            match (local.get(&p.long), local.get(&p.short)) {
                (Some(&a), Some(&b)) => {
                    if instrument(cohort, p.long)? < instrument(cohort, p.short)? {
                        report.violations.push(format!(
                            "pair ({}, {}): long unit has the lower instrument",
                            cohort.units[p.long].id, cohort.units[p.short].id
                        ));
                    }
                    selected.push((a, b));
                }
                _ => report.violations.push(format!(
                    "pair ({}, {}) is not within stratum {:?}",
                    cohort.units[p.long].id, cohort.units[p.short].id, plan.key
                )),
            }
        }
        let zero = DistanceMatrix::from_fn(plan.members.len(), |_, _| 0.0)?;
        let program = build_program(cohort, plan, &zero, 0.0, config, false)?;
        let x = program.selection(&selected)?;
        for r in program.violations(&x, ROW_TOLERANCE) {
            let row = &program.rows()[r];
            report.violations.push(format!(
                "stratum {:?}: row {} ({:?}) has activity {} against {:?} {}",
                plan.key,
                row.name,
                row.kind,
                row.activity(&x),
                row.relation,
                row.rhs
            ));
        }
    }
    for key in by_key.keys() {
        report.violations.push(format!("stratum {key:?} is not part of the design"));
    }
    Ok(report)
}

pub fn run_check(config: &RunConfig, study_path: &Path) -> Result<CheckReport> {
    let cohort = load_cohort(config, Access::Design)?;
    let study = read_study(study_path, &cohort)?;
    check_study(&cohort, config, &study)
}

/// MPS text for the pruned program of one stratum.
pub fn export_stratum_mps(config: &RunConfig, stratum_key: &str) -> Result<String> {
    let cohort = load_cohort(config, Access::Design)?;
    let prepared = prepare(&cohort, config)?;
    let job = prepared
        .jobs
        .iter()
        .find(|j| j.plan.key == stratum_key)
        .ok_or_else(|| Error::InvalidArgument(format!("no stratum with key {stratum_key:?}")))?;
    Ok(crate::ipmodel::export_mps(&job.program, stratum_key))
}
