//! Run configuration, read from a TOML file.
//!
//! ```toml
//! input = "cohort.csv"          # relative to the config file
//! output_dir = "out"
//!
//! [schema]
//! id = "id"
//! hour = "hour"
//! los = "los"
//! outcome = "readmit"
//! covariates = ["weight", "gest_age"]
//! nominal = ["lbw", "sex"]
//! exact_keys = ["hospital", "year"]
//!
//! [distance]
//! covariates = ["weight", "gest_age"]   # default: all covariates
//!
//! [matching]
//! lambda = "median"                     # or a number
//! separation_hours = 12.0               # every pair: ALOS gap >= this
//! mean_separation_hours = 13.0          # mean ALOS gap >= this
//! fine_balance = ["lbw", "sex"]
//! near_fine = [{ variable = "race", epsilon = 1 }]
//! mean_balance = [{ variable = "weight", epsilon_sd = 0.005 }]
//! caps = [{ mismatch = "lbw", fraction = 0.2 }]
//!
//! [solver]
//! max_nodes = 1000000
//! time_limit_secs = 600.0
//! max_pair_variables = 2000000
//! split_on = "site"                     # nominal column for oversized strata
//! allow_gap = false
//!
//! [inference]
//! delta0 = 500                          # or delta0_fraction = 0.0062
//! alpha = 0.05
//! gammas = [1.0, 1.5, 1.85, 1.9]
//!
//! [sweep]
//! thresholds = [0.0, 9.0, 12.0, 15.0]
//!
//! [report]
//! day_start_hours = 12.0
//! day_width_hours = 24.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::Schema;
use crate::solver::Limits;
use crate::{Error, Result};

/// Default mean-balance tolerance, as a multiple of the pre-match standard
/// deviation of the balanced variable.
pub const DEFAULT_EPSILON_SD: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub schema: Schema,
    #[serde(default)]
    pub distance: DistanceConfig,
    #[serde(default)]
    pub matching: MatchingConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceConfig {
    pub covariates: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Lambda {
    Value(f64),
    Rule(LambdaRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// Median of all within-stratum distances before matching.
    Median,
}

impl Default for Lambda {
    fn default() -> Self {
        Lambda::Rule(LambdaRule::Median)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NearFineRule {
    pub variable: String,
    pub epsilon: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanBalanceRule {
    pub variable: String,
    /// Absolute tolerance; takes precedence over `epsilon_sd`.
    pub epsilon: Option<f64>,
    pub epsilon_sd: Option<f64>,
}

/// A pair-level cap `Σ a h ≤ H`. Exactly one flag predicate and at most one
/// of `count` / `fraction` (of stratum units, floored); no limit means 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapRule {
    /// Flags pairs whose two units differ on this nominal variable.
    pub mismatch: Option<String>,
    /// Flags pairs whose instrument gap is below this many hours.
    pub instrument_gap_below: Option<f64>,
    pub count: Option<i64>,
    pub fraction: Option<f64>,
}

impl CapRule {
    pub fn limit_for(&self, stratum_units: usize) -> i64 {
        match (self.count, self.fraction) {
            (Some(c), _) => c,
            (None, Some(f)) => (f * stratum_units as f64).floor() as i64,
            (None, None) => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    pub lambda: Lambda,
    pub separation_hours: f64,
    pub mean_separation_hours: Option<f64>,
    pub fine_balance: Vec<String>,
    pub near_fine: Vec<NearFineRule>,
    pub mean_balance: Vec<MeanBalanceRule>,
    pub caps: Vec<CapRule>,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig {
            lambda: Lambda::default(),
            separation_hours: 12.0,
            mean_separation_hours: Some(13.0),
            fine_balance: Vec::new(),
            near_fine: Vec::new(),
            mean_balance: Vec::new(),
            caps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_nodes: usize,
    pub time_limit_secs: Option<f64>,
    pub max_pair_variables: usize,
    pub split_on: Option<String>,
    pub allow_gap: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let limits = Limits::default();
        SolverConfig {
            max_nodes: limits.max_nodes,
            time_limit_secs: limits.time_limit_secs,
            max_pair_variables: 2_000_000,
            split_on: None,
            allow_gap: false,
        }
    }
}

impl SolverConfig {
    pub fn limits(&self) -> Limits {
        Limits {
            max_nodes: self.max_nodes,
            time_limit_secs: self.time_limit_secs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub delta0: Option<u64>,
    pub delta0_fraction: Option<f64>,
    pub alpha: f64,
    pub gammas: Vec<f64>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            delta0: None,
            delta0_fraction: None,
            alpha: 0.05,
            gammas: vec![1.0],
        }
    }
}

impl InferenceConfig {
    /// Attributable effect in pairs-count units for a study of `pairs` pairs.
    pub fn delta0_for(&self, pairs: u64) -> u64 {
        match (self.delta0, self.delta0_fraction) {
            (Some(d), _) => d,
            (None, Some(f)) => (f * pairs as f64).round() as u64,
            (None, None) => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub thresholds: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            thresholds: vec![0.0, 9.0, 12.0, 15.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub day_start_hours: f64,
    pub day_width_hours: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            day_start_hours: 12.0,
            day_width_hours: 24.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if config.input.is_relative() {
            config.input = base.join(&config.input);
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.matching;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(m.separation_hours >= 0.0) {
            return bad(format!("separation_hours must be >= 0, got {}", m.separation_hours));
        }
        if let Some(phi) = m.mean_separation_hours {
            if !(phi >= 0.0) {
                return bad(format!("mean_separation_hours must be >= 0, got {phi}"));
            }
        }
        if let Lambda::Value(l) = m.lambda {
            if !(l.is_finite() && l >= 0.0) {
                return bad(format!("lambda must be >= 0, got {l}"));
            }
        }
        for rule in &m.near_fine {
            if rule.epsilon < 0 {
                return bad(format!("near_fine epsilon for {} must be >= 0", rule.variable));
            }
        }
        for rule in &m.mean_balance {
            let eps = rule.epsilon.or(rule.epsilon_sd);
            if eps.is_some_and(|e| !(e > 0.0)) {
                return bad(format!("mean_balance epsilon for {} must be > 0", rule.variable));
            }
        }
        for cap in &m.caps {
            if cap.mismatch.is_some() == cap.instrument_gap_below.is_some() {
                return bad("cap needs exactly one of mismatch / instrument_gap_below".into());
            }
            if cap.count.is_some() && cap.fraction.is_some() {
                return bad("cap takes count or fraction, not both".into());
            }
            if cap.count.is_some_and(|c| c < 0) {
                return bad("cap count must be >= 0".into());
            }
            if cap.fraction.is_some_and(|f| !(0.0..=1.0).contains(&f)) {
                return bad("cap fraction must lie in [0, 1]".into());
            }
            if cap.instrument_gap_below.is_some_and(|g| !(g >= 0.0)) {
                return bad("instrument_gap_below must be >= 0".into());
            }
        }
        let inf = &self.inference;
        if inf.delta0.is_some() && inf.delta0_fraction.is_some() {
            return bad("give delta0 or delta0_fraction, not both".into());
        }
        if inf.delta0_fraction.is_some_and(|f| !(0.0..=1.0).contains(&f)) {
            return bad("delta0_fraction must lie in [0, 1]".into());
        }
        if !(inf.alpha > 0.0 && inf.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", inf.alpha));
        }
        if inf.gammas.iter().any(|g| !(*g >= 1.0 && g.is_finite())) {
            return bad("every gamma must be >= 1".into());
        }
        if self.sweep.thresholds.iter().any(|t| !(*t >= 0.0)) {
            return bad("sweep thresholds must be >= 0".into());
        }
        if !(self.report.day_width_hours > 0.0) {
            return bad("day_width_hours must be > 0".into());
        }
        Ok(())
    }
}
