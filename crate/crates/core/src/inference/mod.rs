//! Randomization inference for matched pairs with a binary outcome.
//!
//! The short-instrument unit of each pair is the treated side. Tests use
//! exact binomial tails: no effect (McNemar), attributable effects via the
//! least-rejectable adjusted table, and sensitivity bounds for hidden
//! biases of magnitude Γ.

pub mod binomial;

use std::fmt::Write as _;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cohort::Cohort;
use crate::diagnostics::MatchedStudy;
use crate::{Error, Result};

/// Cross-tabulation of pair outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairedOutcomeTable {
    /// Both units had the event.
    pub n11: u64,
    /// Only the treated (short) unit had the event.
    pub d_t: u64,
    /// Only the control (long) unit had the event.
    pub d_c: u64,
    /// Neither unit had the event.
    pub n00: u64,
}

impl PairedOutcomeTable {
    pub fn new(n11: u64, d_t: u64, d_c: u64, n00: u64) -> Self {
        PairedOutcomeTable { n11, d_t, d_c, n00 }
    }

    pub fn pairs(&self) -> u64 {
        self.n11 + self.d_t + self.d_c + self.n00
    }

    /// `n_10`, the number of discordant pairs.
    pub fn discordant(&self) -> u64 {
        self.d_t + self.d_c
    }

    /// Events among treated units.
    pub fn treated_events(&self) -> u64 {
        self.n11 + self.d_t
    }

    /// The same table with treated and control roles exchanged.
    pub fn swapped(&self) -> Self {
        PairedOutcomeTable::new(self.n11, self.d_c, self.d_t, self.n00)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Treatment (short side) causes events.
    TreatedCauses,
    /// Control (long side) causes events.
    ControlCauses,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::TreatedCauses => "treated_causes",
            Direction::ControlCauses => "control_causes",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AttributableHypothesis {
    pub delta0: u64,
    pub direction: Direction,
}

impl AttributableHypothesis {
    pub fn new(delta0: u64, direction: Direction) -> Self {
        AttributableHypothesis { delta0, direction }
    }

    /// Largest Δ₀ that the observed table can carry in this direction.
    pub fn max_compatible(table: &PairedOutcomeTable, direction: Direction) -> u64 {
        match direction {
            Direction::TreatedCauses => table.n11 + table.d_t,
            Direction::ControlCauses => table.n11 + table.d_c,
        }
    }

    pub fn is_compatible(&self, table: &PairedOutcomeTable) -> bool {
        self.delta0 <= Self::max_compatible(table, self.direction)
    }
}

/// Bounds on a one-sided P-value under biases of at most Γ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensitivityResult {
    pub gamma: f64,
    pub p_lower: f64,
    pub p_upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McNemar {
    pub p_value: f64,
    /// No discordant pairs; the P-value is 1 by convention.
    pub degenerate: bool,
    /// Continuity-corrected normal approximation, for cross-checking only.
    pub normal_approx: f64,
}

/// Exact McNemar test. One-sided is the lower tail `P(Bin(n_10, ½) ≤ d_T)`;
/// two-sided doubles the smaller tail, capped at 1.
pub fn mcnemar_test(table: &PairedOutcomeTable, sided: Sided) -> McNemar {
    let n = table.discordant();
    if n == 0 {
        return McNemar {
            p_value: 1.0,
            degenerate: true,
            normal_approx: 1.0,
        };
    }
    let lower = binomial::cdf(n, table.d_t, 0.5);
    let upper = binomial::sf(n, table.d_t, 0.5);
    let std_normal = Normal::standard();
    let mean = n as f64 / 2.0;
    let sd = (n as f64).sqrt() / 2.0;
    let approx_lower = std_normal.cdf((table.d_t as f64 + 0.5 - mean) / sd);
    let approx_upper = 1.0 - std_normal.cdf((table.d_t as f64 - 0.5 - mean) / sd);
    let (p_value, normal_approx) = match sided {
        Sided::One => (lower, approx_lower),
        Sided::Two => (
            (2.0 * lower.min(upper)).min(1.0),
            (2.0 * approx_lower.min(approx_upper)).min(1.0),
        ),
    };
    McNemar {
        p_value,
        degenerate: false,
        normal_approx,
    }
}

/// Least-rejectable table for an attributable-effect hypothesis: attribute
/// to as many doubly-affected pairs as possible (each becomes discordant on
/// the other side), then to single-event pairs on the causing side (each
/// becomes event-free).
pub fn adjust_table(
    table: &PairedOutcomeTable,
    hyp: &AttributableHypothesis,
) -> Result<PairedOutcomeTable> {
    if !hyp.is_compatible(table) {
        return Err(Error::Incompatible(format!(
            "Δ₀ = {} exceeds the {} events available for {}",
            hyp.delta0,
            AttributableHypothesis::max_compatible(table, hyp.direction),
            hyp.direction.label()
        )));
    }
    let oriented = match hyp.direction {
        Direction::TreatedCauses => *table,
        Direction::ControlCauses => table.swapped(),
    };
    let k = hyp.delta0.min(oriented.n11);
    let rest = hyp.delta0 - k;
    let adjusted = PairedOutcomeTable::new(
        oriented.n11 - k,
        oriented.d_t - rest,
        oriented.d_c + k,
        oriented.n00 + rest,
    );
    Ok(match hyp.direction {
        Direction::TreatedCauses => adjusted,
        Direction::ControlCauses => adjusted.swapped(),
    })
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("Γ must be >= 1, got {gamma}")))
    }
}

/// One-sided test of "Δ ≥ Δ₀ in this direction" on the adjusted table, with
/// P-value bounds for biases up to Γ. The statistic is the causing side's
/// discordant count, small values reject.
pub fn attributable_test(
    table: &PairedOutcomeTable,
    hyp: &AttributableHypothesis,
    gamma: f64,
) -> Result<SensitivityResult> {
    check_gamma(gamma)?;
    let adjusted = adjust_table(table, hyp)?;
    let (n, c) = match hyp.direction {
        Direction::TreatedCauses => (adjusted.discordant(), adjusted.d_t),
        Direction::ControlCauses => (adjusted.discordant(), adjusted.d_c),
    };
    Ok(lower_tail_bounds(n, c, gamma))
}

fn lower_tail_bounds(n: u64, c: u64, gamma: f64) -> SensitivityResult {
    if n == 0 {
        return SensitivityResult {
            gamma,
            p_lower: 1.0,
            p_upper: 1.0,
        };
    }
    let p_plus = gamma / (1.0 + gamma);
    let p_minus = 1.0 / (1.0 + gamma);
    SensitivityResult {
        gamma,
        p_lower: binomial::cdf(n, c, p_plus),
        p_upper: binomial::cdf(n, c, p_minus),
    }
}

/// Two-sided test of no effect with bounds for biases up to Γ: each bound
/// doubles the smaller of the matching one-sided bounds, capped at 1. At
/// Γ = 1 both equal the two-sided McNemar P-value.
pub fn no_effect_sensitivity(table: &PairedOutcomeTable, gamma: f64) -> Result<SensitivityResult> {
    check_gamma(gamma)?;
    let n = table.discordant();
    if n == 0 {
        return Ok(SensitivityResult {
            gamma,
            p_lower: 1.0,
            p_upper: 1.0,
        });
    }
    let p_plus = gamma / (1.0 + gamma);
    let p_minus = 1.0 / (1.0 + gamma);
    let low_tail = (binomial::cdf(n, table.d_t, p_plus), binomial::cdf(n, table.d_t, p_minus));
    let high_tail = (binomial::sf(n, table.d_t, p_minus), binomial::sf(n, table.d_t, p_plus));
    Ok(SensitivityResult {
        gamma,
        p_lower: (2.0 * low_tail.0.min(high_tail.0)).min(1.0),
        p_upper: (2.0 * low_tail.1.min(high_tail.1)).min(1.0),
    })
}

/// Γ equivalent to an unobserved covariate that multiplies the odds of
/// treatment by `lambda` and the odds of the outcome by `delta`.
pub fn amplify(lambda: f64, delta: f64) -> Result<f64> {
    if !(lambda > 1.0 && delta > 1.0) || !lambda.is_finite() || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "amplify needs both factors > 1, got ({lambda}, {delta})"
        )));
    }
    Ok((lambda * delta + 1.0) / (lambda + delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    NoEffect,
    TreatedCauses,
    ControlCauses,
}

impl Part {
    pub fn label(self) -> &'static str {
        match self {
            Part::NoEffect => "no_effect",
            Part::TreatedCauses => "treated_causes",
            Part::ControlCauses => "control_causes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartResult {
    pub part: Part,
    pub delta0: u64,
    /// False when Δ₀ is more than the data can carry; the part is then
    /// rejected with P = 0 at every Γ.
    pub compatible: bool,
    pub bounds: Vec<SensitivityResult>,
    /// Smallest Γ on the grid whose upper P-value bound exceeds α.
    pub tipping_gamma: Option<f64>,
}

impl PartResult {
    pub fn rejected_at(&self, index: usize, alpha: f64) -> bool {
        self.bounds[index].p_upper <= alpha
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThreePartTest {
    pub table: PairedOutcomeTable,
    pub delta0: u64,
    pub alpha: f64,
    pub gammas: Vec<f64>,
    pub parts: Vec<PartResult>,
}

fn part_result(
    part: Part,
    delta0: u64,
    alpha: f64,
    gammas: &[f64],
    bound: impl Fn(f64) -> Result<SensitivityResult>,
    compatible: bool,
) -> Result<PartResult> {
    let bounds = if compatible {
        gammas.iter().map(|&g| bound(g)).collect::<Result<Vec<_>>>()?
    } else {
        gammas
            .iter()
            .map(|&gamma| SensitivityResult {
                gamma,
                p_lower: 0.0,
                p_upper: 0.0,
            })
            .collect()
    };
    let tipping_gamma = bounds.iter().find(|b| b.p_upper > alpha).map(|b| b.gamma);
    Ok(PartResult {
        part,
        delta0,
        compatible,
        bounds,
        tipping_gamma,
    })
}

/// Tests no effect (two-sided) and, when `delta0 > 0`, effects of at least
/// Δ₀ in each direction, all at level α without multiplicity correction
/// since at most one of the three can be true. Each part is evaluated on
/// every Γ in `gammas`.
pub fn three_part_test(
    table: &PairedOutcomeTable,
    delta0: u64,
    alpha: f64,
    gammas: &[f64],
) -> Result<ThreePartTest> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("α must lie in (0, 1), got {alpha}")));
    }
    if gammas.is_empty() {
        return Err(Error::InvalidArgument("empty Γ grid".into()));
    }
    for &g in gammas {
        check_gamma(g)?;
    }
    let mut parts = vec![part_result(
        Part::NoEffect,
        0,
        alpha,
        gammas,
        |g| no_effect_sensitivity(table, g),
        true,
    )?];
    if delta0 > 0 {
        for (part, direction) in [
            (Part::TreatedCauses, Direction::TreatedCauses),
            (Part::ControlCauses, Direction::ControlCauses),
        ] {
            let hyp = AttributableHypothesis::new(delta0, direction);
            parts.push(part_result(
                part,
                delta0,
                alpha,
                gammas,
                |g| attributable_test(table, &hyp, g),
                hyp.is_compatible(table),
            )?);
        }
    }
    Ok(ThreePartTest {
        table: *table,
        delta0,
        alpha,
        gammas: gammas.to_vec(),
        parts,
    })
}

impl ThreePartTest {
    pub fn part(&self, part: Part) -> Option<&PartResult> {
        self.parts.iter().find(|p| p.part == part)
    }

    /// One row per (part, Γ).
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("part,delta0,gamma,p_lower,p_upper,compatible,rejected\n");
        for part in &self.parts {
            for (i, b) in part.bounds.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{:e},{:e},{},{}",
                    part.part.label(),
                    part.delta0,
                    b.gamma,
                    b.p_lower,
                    b.p_upper,
                    part.compatible,
                    part.rejected_at(i, self.alpha)
                );
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let t = &self.table;
        let mut out = String::new();
        let _ = writeln!(out, "Matched pairs: {}", t.pairs());
        let _ = writeln!(out, "                      short: no event   short: event");
        let _ = writeln!(out, "  long: no event      {:>15}   {:>12}", t.n00, t.d_t);
        let _ = writeln!(out, "  long: event         {:>15}   {:>12}", t.d_c, t.n11);
        let _ = writeln!(out, "Level α = {}", self.alpha);
        for part in &self.parts {
            let name = match part.part {
                Part::NoEffect => "No effect (two-sided)".to_string(),
                Part::TreatedCauses => format!("Short side causes >= {} events", part.delta0),
                Part::ControlCauses => format!("Long side causes >= {} events", part.delta0),
            };
            let _ = writeln!(out, "\n{name}");
            if !part.compatible {
                let _ = writeln!(out, "  incompatible with the observed table: rejected");
                continue;
            }
            for (i, b) in part.bounds.iter().enumerate() {
                let verdict = if part.rejected_at(i, self.alpha) { "rejected" } else { "not rejected" };
                if b.gamma == 1.0 {
                    let _ = writeln!(out, "  Γ = 1: P = {:.3e} ({verdict})", b.p_upper);
                } else {
                    let _ = writeln!(
                        out,
                        "  Γ = {}: P in [{:.3e}, {:.3e}] ({verdict})",
                        b.gamma, b.p_lower, b.p_upper
                    );
                }
            }
            match part.tipping_gamma {
                Some(g) => {
                    let _ = writeln!(out, "  smallest Γ on the grid with upper bound > α: {g}");
                }
                None => {
                    let _ = writeln!(out, "  rejected at every Γ on the grid");
                }
            }
        }
        out
    }
}

/// Counts pair outcomes; the short unit is the treated side.
pub fn tabulate(study: &MatchedStudy, cohort: &Cohort) -> Result<PairedOutcomeTable> {
    let mut table = PairedOutcomeTable::new(0, 0, 0, 0);
    for (i, pair) in study.pairs.iter().enumerate() {
        let outcome = |unit: usize| {
            cohort.units[unit].outcome.ok_or_else(|| Error::MissingOutcome {
                pair: i + 1,
                unit: cohort.units[unit].id.clone(),
            })
        };
        match (outcome(pair.short)?, outcome(pair.long)?) {
            (true, true) => table.n11 += 1,
            (true, false) => table.d_t += 1,
            (false, true) => table.d_c += 1,
            (false, false) => table.n00 += 1,
        }
    }
    Ok(table)
}
