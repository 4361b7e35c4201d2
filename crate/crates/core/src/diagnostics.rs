//! Matched-study aggregation and design reports: covariate balance,
//! instrument strength and the separation sweep.
//!
//! Every report is a pure view of a [`MatchedStudy`] plus the cohort it
//! indexes into.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::cohort::Cohort;
use crate::config::RunConfig;
use crate::solver::Status;
use crate::{Error, Result};

/// One matched pair; unit fields index `Cohort::units`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatchedPair {
    pub stratum: String,
    /// Unit with the higher instrument value.
    pub long: usize,
    pub short: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumSummary {
    pub key: String,
    pub units: usize,
    /// Pair variables left after pruning.
    pub candidate_pairs: usize,
    pub pairs: usize,
    pub objective: f64,
    pub bound: f64,
    pub gap: f64,
    pub status: Status,
    pub nodes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MatchedStudy {
    pub pairs: Vec<MatchedPair>,
    /// Units left unpaired, in cohort order.
    pub discarded: Vec<usize>,
    pub strata: Vec<StratumSummary>,
    pub lambda: f64,
}

impl MatchedStudy {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `pair_id,long_unit_id,short_unit_id,stratum_key`, pairs numbered from 1.
    pub fn to_csv(&self, cohort: &Cohort) -> String {
        let mut out = String::from("pair_id,long_unit_id,short_unit_id,stratum_key\n");
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for (i, p) in self.pairs.iter().enumerate() {
            let _ = w.write_record([
                (i + 1).to_string().as_str(),
                &cohort.units[p.long].id,
                &cohort.units[p.short].id,
                &p.stratum,
            ]);
        }
        out.push_str(&String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default());
        out
    }

    /// Reads a pair file written by [`MatchedStudy::to_csv`], resolving ids
    /// against `cohort`. Per-stratum solver summaries are not stored and come
    /// back empty.
    pub fn from_csv(text: &str, cohort: &Cohort) -> Result<MatchedStudy> {
        let index: HashMap<&str, usize> = cohort
            .units
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id.as_str(), i))
            .collect();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        let expected = ["pair_id", "long_unit_id", "short_unit_id", "stratum_key"];
        if header.iter().ne(expected) {
            return Err(Error::Format {
                what: "pair file",
                detail: format!("expected header {}", expected.join(",")),
            });
        }
        let mut used = vec![false; cohort.len()];
        let mut pairs = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let row = i + 1;
            let lookup = |col: usize| -> Result<usize> {
                let id = record.get(col).unwrap_or("");
                index.get(id).copied().ok_or_else(|| Error::Format {
                    what: "pair file",
                    detail: format!("row {row}: unknown unit id {id:?}"),
                })
            };
            let (long, short) = (lookup(1)?, lookup(2)?);
            for u in [long, short] {
                if std::mem::replace(&mut used[u], true) {
                    return Err(Error::Format {
                        what: "pair file",
                        detail: format!("row {row}: unit {:?} appears twice", cohort.units[u].id),
                    });
                }
            }
            pairs.push(MatchedPair {
                stratum: record.get(3).unwrap_or("").to_string(),
                long,
                short,
            });
        }
        let discarded = (0..cohort.len()).filter(|&u| !used[u]).collect();
        Ok(MatchedStudy {
            pairs,
            discarded,
            strata: Vec::new(),
            lambda: f64::NAN,
        })
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values.iter().copied());
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanRow {
    pub variable: String,
    pub long_mean: f64,
    pub short_mean: f64,
    /// (long − short) / pre-match standard deviation over the whole cohort.
    pub std_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryRow {
    pub variable: String,
    pub category: String,
    pub long: usize,
    pub short: usize,
}

/// Pair cross-tabulation of a nominal variable: `counts[a][b]` pairs have
/// long unit in category `a` and short unit in `b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossTab {
    pub variable: String,
    pub categories: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl CrossTab {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Fraction of pairs on the diagonal (both units in the same category).
    pub fn diagonal_fraction(&self) -> Option<f64> {
        let total = self.total();
        let diag: usize = (0..self.categories.len()).map(|i| self.counts[i][i]).sum();
        (total > 0).then(|| diag as f64 / total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub pairs: usize,
    pub instrument: MeanRow,
    pub covariates: Vec<MeanRow>,
    pub categories: Vec<CategoryRow>,
    pub crosstabs: Vec<CrossTab>,
}

fn mean_row(name: &str, study: &MatchedStudy, all: &[f64]) -> MeanRow {
    let long_mean = mean(study.pairs.iter().map(|p| all[p.long]));
    let short_mean = mean(study.pairs.iter().map(|p| all[p.short]));
    let sd = std_dev(all);
    let diff = long_mean - short_mean;
    let std_diff = if sd > 0.0 {
        diff / sd
    } else if diff == 0.0 || diff.is_nan() {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    };
    MeanRow {
        variable: name.to_string(),
        long_mean,
        short_mean,
        std_diff,
    }
}

/// Covariate means by side, category counts by side and pair cross-tabs of
/// every nominal variable.
pub fn balance_report(study: &MatchedStudy, cohort: &Cohort) -> BalanceReport {
    let instrument: Vec<f64> = cohort
        .units
        .iter()
        .map(|u| u.instrument.unwrap_or(f64::NAN))
        .collect();
    let covariates = cohort
        .covariate_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let col: Vec<f64> = cohort.units.iter().map(|u| u.covariates[k]).collect();
            mean_row(name, study, &col)
        })
        .collect();

    let mut categories = Vec::new();
    let mut crosstabs = Vec::new();
    for (k, name) in cohort.nominal_names.iter().enumerate() {
        let cats = cohort.categories(k);
        let pos: HashMap<&str, usize> =
            cats.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let mut counts = vec![vec![0usize; cats.len()]; cats.len()];
        for p in &study.pairs {
            let a = pos[cohort.units[p.long].nominal[k].as_str()];
            let b = pos[cohort.units[p.short].nominal[k].as_str()];
            counts[a][b] += 1;
        }
        for (i, c) in cats.iter().enumerate() {
            categories.push(CategoryRow {
                variable: name.clone(),
                category: c.clone(),
                long: counts[i].iter().sum(),
                short: counts.iter().map(|row| row[i]).sum(),
            });
        }
        crosstabs.push(CrossTab {
            variable: name.clone(),
            categories: cats,
            counts,
        });
    }

    BalanceReport {
        pairs: study.len(),
        instrument: mean_row("anticipated_los", study, &instrument),
        covariates,
        categories,
        crosstabs,
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v:.4}")
    }
}

impl BalanceReport {
    /// Columns `section,variable,level,long,short,value`. Mean rows carry
    /// the standardized difference in `value`; cross-tab rows carry the
    /// long and short categories and the pair count.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record(["section", "variable", "level", "long", "short", "value"]);
        let mut mean_rows = vec![("instrument", &self.instrument)];
        mean_rows.extend(self.covariates.iter().map(|r| ("covariate", r)));
        for (section, r) in mean_rows {
            let _ = w.write_record([
                section,
                &r.variable,
                "",
                &fmt_num(r.long_mean),
                &fmt_num(r.short_mean),
                &fmt_num(r.std_diff),
            ]);
        }
        for c in &self.categories {
            let _ = w.write_record([
                "category",
                &c.variable,
                &c.category,
                &c.long.to_string(),
                &c.short.to_string(),
                "",
            ]);
        }
        for t in &self.crosstabs {
            for (a, row) in t.counts.iter().enumerate() {
                for (b, n) in row.iter().enumerate() {
                    let _ = w.write_record([
                        "crosstab",
                        &t.variable,
                        "",
                        &t.categories[a],
                        &t.categories[b],
                        &n.to_string(),
                    ]);
                }
            }
            let diag = t.diagonal_fraction().map_or("NA".to_string(), fmt_num);
            let _ = w.write_record(["crosstab_diagonal", &t.variable, "", "", "", &diag]);
        }
        String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Matched pairs: {}\n", self.pairs);
        let _ = writeln!(out, "{:<24}{:>12}{:>12}{:>12}", "Means", "long", "short", "std diff");
        for r in std::iter::once(&self.instrument).chain(&self.covariates) {
            let _ = writeln!(
                out,
                "{:<24}{:>12}{:>12}{:>12}",
                r.variable,
                fmt_num(r.long_mean),
                fmt_num(r.short_mean),
                fmt_num(r.std_diff)
            );
        }
        if !self.categories.is_empty() {
            let _ = writeln!(out, "\n{:<24}{:>12}{:>12}", "Counts", "long", "short");
            for c in &self.categories {
                let label = format!("{}={}", c.variable, c.category);
                let _ = writeln!(out, "{label:<24}{:>12}{:>12}", c.long, c.short);
            }
        }
        for t in &self.crosstabs {
            let _ = writeln!(out, "\nPairs by {} (rows long, columns short)", t.variable);
            let _ = write!(out, "{:<16}", "");
            for c in &t.categories {
                let _ = write!(out, "{c:>12}");
            }
            out.push('\n');
            for (c, row) in t.categories.iter().zip(&t.counts) {
                let _ = write!(out, "{c:<16}");
                for n in row {
                    let _ = write!(out, "{n:>12}");
                }
                out.push('\n');
            }
            if let Some(f) = t.diagonal_fraction() {
                let _ = writeln!(out, "same category: {:.1}%", 100.0 * f);
            }
        }
        out
    }
}

/// Length of stay in whole days: day 0 is `[0, start)`, day `d ≥ 1` is
/// `[start + (d−1)·width, start + d·width)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DayBins {
    pub start: f64,
    pub width: f64,
}

impl Default for DayBins {
    fn default() -> Self {
        DayBins {
            start: 12.0,
            width: 24.0,
        }
    }
}

impl DayBins {
    pub fn day(&self, hours: f64) -> u32 {
        if hours < self.start {
            0
        } else {
            1 + ((hours - self.start) / self.width).floor() as u32
        }
    }

    /// Cross-tab class: 0 = at most one day, 1 = two days, 2 = three or more.
    fn class(&self, hours: f64) -> usize {
        (self.day(hours).max(1) - 1).min(2) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrengthReport {
    pub pairs: usize,
    /// Percent of long units staying more than one day.
    pub long_pct: f64,
    pub short_pct: f64,
    /// Pair counts by actual stay; rows long, columns short; classes
    /// `≤1 day`, `2 days`, `≥3 days`.
    pub days: [[usize; 3]; 3],
    /// Pairs with long at two days and short at most one day, and the reverse.
    pub discordant: (usize, usize),
    /// `discordant.0 / discordant.1`; `None` when the denominator is zero.
    pub discordant_odds: Option<f64>,
}

pub const DAY_CLASSES: [&str; 3] = ["<=1 day", "2 days", ">=3 days"];

pub fn strength_report(study: &MatchedStudy, cohort: &Cohort, bins: DayBins) -> Result<StrengthReport> {
    let los = |u: usize| {
        cohort.units[u].los.ok_or_else(|| {
            Error::InvalidArgument(format!("unit {:?} has no observed length of stay", cohort.units[u].id))
        })
    };
    let mut days = [[0usize; 3]; 3];
    let (mut long_over, mut short_over) = (0usize, 0usize);
    for p in &study.pairs {
        let (a, b) = (los(p.long)?, los(p.short)?);
        long_over += usize::from(bins.day(a) >= 2);
        short_over += usize::from(bins.day(b) >= 2);
        days[bins.class(a)][bins.class(b)] += 1;
    }
    let n = study.len();
    let pct = |k: usize| if n == 0 { f64::NAN } else { 100.0 * k as f64 / n as f64 };
    let discordant = (days[1][0], days[0][1]);
    Ok(StrengthReport {
        pairs: n,
        long_pct: pct(long_over),
        short_pct: pct(short_over),
        days,
        discordant,
        discordant_odds: (discordant.1 > 0).then(|| discordant.0 as f64 / discordant.1 as f64),
    })
}

impl StrengthReport {
    /// Columns `measure,value`, then the day cross-tab as `long_days,short_days,pairs`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("measure,value\n");
        let _ = writeln!(out, "pairs,{}", self.pairs);
        let _ = writeln!(out, "long_pct_over_one_day,{}", fmt_num(self.long_pct));
        let _ = writeln!(out, "short_pct_over_one_day,{}", fmt_num(self.short_pct));
        let _ = writeln!(out, "difference_pct,{}", fmt_num(self.long_pct - self.short_pct));
        let _ = writeln!(out, "discordant_long_longer,{}", self.discordant.0);
        let _ = writeln!(out, "discordant_short_longer,{}", self.discordant.1);
        let odds = self.discordant_odds.map_or("undefined".to_string(), fmt_num);
        let _ = writeln!(out, "discordant_odds,{odds}");
        out.push_str("\nlong_days,short_days,pairs\n");
        for (a, row) in self.days.iter().enumerate() {
            for (b, n) in row.iter().enumerate() {
                let _ = writeln!(out, "{},{},{n}", DAY_CLASSES[a], DAY_CLASSES[b]);
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Matched pairs: {}", self.pairs);
        let _ = writeln!(out, "Staying more than one day: long {:.1}%, short {:.1}%, difference {:.1}%",
            self.long_pct, self.short_pct, self.long_pct - self.short_pct);
        let _ = writeln!(out, "\nActual stay in pairs (rows long, columns short)");
        let _ = write!(out, "{:<12}", "");
        for c in DAY_CLASSES {
            let _ = write!(out, "{c:>12}");
        }
        out.push('\n');
        for (c, row) in DAY_CLASSES.iter().zip(&self.days) {
            let _ = write!(out, "{c:<12}");
            for n in row {
                let _ = write!(out, "{n:>12}");
            }
            out.push('\n');
        }
        match self.discordant_odds {
            Some(o) => {
                let _ = writeln!(out, "\nDiscordant odds {}/{} = {o:.1} to 1", self.discordant.0, self.discordant.1);
            }
            None => {
                let _ = writeln!(out, "\nDiscordant odds undefined ({}/0)", self.discordant.0);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum SweepOutcome {
    Matched {
        pairs: usize,
        long_pct: f64,
        short_pct: f64,
    },
    Infeasible { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepColumn {
    pub threshold: f64,
    pub outcome: SweepOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub columns: Vec<SweepColumn>,
}

/// Re-runs the match once per hard-separation threshold with everything else
/// fixed. The mean-separation target keeps its offset from the hard
/// threshold (clamped at 0). A threshold whose run is infeasible or hits a
/// solver limit gets an infeasible column.
pub fn separation_sweep(cohort: &Cohort, config: &RunConfig, thresholds: &[f64]) -> Result<SweepTable> {
    if let Some(t) = thresholds.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::InvalidArgument(format!("sweep threshold {t} is negative")));
    }
    let bins = DayBins {
        start: config.report.day_start_hours,
        width: config.report.day_width_hours,
    };
    let mut columns = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut c = config.clone();
        let base = config.matching.separation_hours;
        c.matching.separation_hours = t;
        c.matching.mean_separation_hours = config
            .matching
            .mean_separation_hours
            .map(|phi| (t + (phi - base)).max(0.0));
        log::info!("sweep: separation {t} h");
        let outcome = match crate::pipeline::match_cohort(cohort, &c) {
            Ok(study) => {
                let s = strength_report(&study, cohort, bins)?;
                SweepOutcome::Matched {
                    pairs: s.pairs,
                    long_pct: s.long_pct,
                    short_pct: s.short_pct,
                }
            }
            Err(e @ (Error::Infeasible(_) | Error::LimitReached(_))) => SweepOutcome::Infeasible {
                reason: e.to_string(),
            },
            Err(e) => return Err(e),
        };
        columns.push(SweepColumn { threshold: t, outcome });
    }
    Ok(SweepTable { columns })
}

impl SweepTable {
    pub fn pair_counts(&self) -> Vec<Option<usize>> {
        self.columns
            .iter()
            .map(|c| match c.outcome {
                SweepOutcome::Matched { pairs, .. } => Some(pairs),
                SweepOutcome::Infeasible { .. } => None,
            })
            .collect()
    }

    fn rows(&self) -> Vec<(&'static str, Vec<String>)> {
        let cell = |f: &dyn Fn(usize, f64, f64) -> String| -> Vec<String> {
            self.columns
                .iter()
                .map(|c| match c.outcome {
                    SweepOutcome::Matched { pairs, long_pct, short_pct } => f(pairs, long_pct, short_pct),
                    SweepOutcome::Infeasible { .. } => "infeasible".to_string(),
                })
                .collect()
        };
        vec![
            ("long_pct", cell(&|_, l, _| format!("{l:.1}"))),
            ("short_pct", cell(&|_, _, s| format!("{s:.1}"))),
            ("difference_pct", cell(&|_, l, s| format!("{:.1}", l - s))),
            ("pairs", cell(&|n, _, _| n.to_string())),
        ]
    }

    /// One column per threshold; rows are the long and short percent staying
    /// more than one day, their difference and the number of pairs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("hours");
        for c in &self.columns {
            let _ = write!(out, ",{}", c.threshold);
        }
        out.push('\n');
        for (name, cells) in self.rows() {
            let _ = writeln!(out, "{name},{}", cells.join(","));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<18}", "Separation (h)");
        for c in &self.columns {
            let _ = write!(out, "{:>12}", c.threshold);
        }
        out.push('\n');
        let labels = ["Long %", "Short %", "Difference %", "Number of pairs"];
        for (label, (_, cells)) in labels.iter().zip(self.rows()) {
            let _ = write!(out, "{label:<18}");
            for c in cells {
                let _ = write!(out, "{c:>12}");
            }
            out.push('\n');
        }
        out
    }
}
