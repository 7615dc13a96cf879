//! Study configuration (TOML). Relative paths resolve against the directory
//! holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::delay::{FillUnobserved, MatchOptions, SynthesisOptions};
use crate::gtfs::{parse_time, Seconds};
use crate::indices::{BootstrapMode, PercentileDirection};
use crate::router::{consecutive_windows, Percentile, RouterConfig, MORNING_SHARES};
use crate::street::{AccessParams, DesertMetric, DesertRadii};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub gtfs: PathBuf,
    pub nodes: PathBuf,
    pub edges: PathBuf,
    pub cells: PathBuf,
    pub schools: PathBuf,
    /// Observation CSV per service day.
    #[serde(default)]
    pub observations: BTreeMap<NaiveDate, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouterSection {
    pub percentile: Percentile,
    /// `HH:MM:SS`, or `"none"` for no outbound deadline.
    pub deadline: String,
    pub transfer_slack_s: u32,
    pub strict_window_exclusion: bool,
    pub morning_start: String,
    pub morning_shares: Vec<f64>,
    pub evening_start: String,
    pub evening_shares: Vec<f64>,
}

impl Default for RouterSection {
    fn default() -> Self {
        RouterSection {
            percentile: Percentile::P25,
            deadline: "08:40:00".into(),
            transfer_slack_s: 60,
            strict_window_exclusion: false,
            morning_start: "06:00:00".into(),
            morning_shares: MORNING_SHARES.to_vec(),
            evening_start: "16:00:00".into(),
            evening_shares: vec![0.125; 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelaySection {
    pub fill_unobserved: FillUnobserved,
    pub decreasing_slack_s: u32,
    pub match_tolerance_s: u32,
    pub include_rail: bool,
}

impl Default for DelaySection {
    fn default() -> Self {
        let m = MatchOptions::default();
        DelaySection { fill_unobserved: FillUnobserved::Scheduled, decreasing_slack_s: 0, match_tolerance_s: m.tolerance_s, include_rail: m.include_rail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesertSection {
    pub metric: DesertMetric,
    pub bus_m: f64,
    pub rail_m: f64,
}

impl Default for DesertSection {
    fn default() -> Self {
        let r = DesertRadii::default();
        DesertSection { metric: DesertMetric::Radius, bus_m: r.bus_m, rail_m: r.rail_m }
    }
}

impl DesertSection {
    pub fn radii(&self) -> DesertRadii {
        DesertRadii { bus_m: self.bus_m, rail_m: self.rail_m }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndicesSection {
    pub bootstrap_iterations: usize,
    pub seed: u64,
    pub bootstrap_mode: BootstrapMode,
    pub percentile_direction: PercentileDirection,
}

impl Default for IndicesSection {
    fn default() -> Self {
        IndicesSection { bootstrap_iterations: 1000, seed: 1, bootstrap_mode: BootstrapMode::Cells, percentile_direction: PercentileDirection::Attains }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub inputs: Inputs,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub days: Vec<NaiveDate>,
    #[serde(default = "default_thresholds")]
    pub thresholds_min: Vec<u32>,
    #[serde(default = "default_cell_size")]
    pub cell_size_m: f64,
    #[serde(default)]
    pub router: RouterSection,
    #[serde(default)]
    pub access: AccessParams,
    #[serde(default)]
    pub delay: DelaySection,
    #[serde(default)]
    pub desert: DesertSection,
    #[serde(default)]
    pub indices: IndicesSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_thresholds() -> Vec<u32> {
    vec![60, 90, 120]
}

fn default_cell_size() -> f64 {
    250.0
}

fn parse_clock(field: &str, s: &str) -> Result<Seconds, ConfigError> {
    parse_time(s).ok_or_else(|| ConfigError::Invalid(format!("{field}: bad time {s:?}")))
}

impl StudyConfig {
    /// Read, resolve relative paths and validate.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg: StudyConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), source: Box::new(e) })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.inputs.gtfs);
        fix(&mut self.inputs.nodes);
        fix(&mut self.inputs.edges);
        fix(&mut self.inputs.cells);
        fix(&mut self.inputs.schools);
        self.inputs.observations.values_mut().for_each(fix);
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.days.is_empty() {
            return Err(ConfigError::Invalid("day list is empty".into()));
        }
        if self.thresholds_min.is_empty() || self.thresholds_min.contains(&0) {
            return Err(ConfigError::Invalid("thresholds must be positive and non-empty".into()));
        }
        if self.cell_size_m.is_nan() || self.cell_size_m <= 0.0 {
            return Err(ConfigError::Invalid("cell_size_m must be positive".into()));
        }
        if self.indices.bootstrap_iterations == 0 {
            return Err(ConfigError::Invalid("bootstrap_iterations must be positive".into()));
        }
        self.router_config()?.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn router_config(&self) -> Result<RouterConfig, ConfigError> {
        let r = &self.router;
        let deadline = match r.deadline.as_str() {
            "none" => None,
            s => Some(parse_clock("router.deadline", s)?),
        };
        Ok(RouterConfig {
            morning: consecutive_windows(parse_clock("router.morning_start", &r.morning_start)?, &r.morning_shares),
            evening: consecutive_windows(parse_clock("router.evening_start", &r.evening_start)?, &r.evening_shares),
            percentile: r.percentile,
            deadline,
            transfer_slack_s: r.transfer_slack_s,
            strict_window_exclusion: r.strict_window_exclusion,
        })
    }

    pub fn match_options(&self) -> MatchOptions {
        MatchOptions { tolerance_s: self.delay.match_tolerance_s, include_rail: self.delay.include_rail }
    }

    pub fn synthesis_options(&self) -> SynthesisOptions {
        SynthesisOptions { fill_unobserved: self.delay.fill_unobserved, decreasing_slack_s: self.delay.decreasing_slack_s }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
days = ["2025-12-22"]

[inputs]
gtfs = "gtfs"
nodes = "street/nodes.csv"
edges = "street/edges.csv"
cells = "cells.csv"
schools = "/abs/schools.csv"

[inputs.observations]
2025-12-22 = "obs/2025-12-22.csv"
"#;

    #[test]
    fn defaults_and_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("study.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let cfg = StudyConfig::load(&path).unwrap();
        assert_eq!(cfg.inputs.gtfs, dir.path().join("gtfs"));
        assert_eq!(cfg.inputs.schools, PathBuf::from("/abs/schools.csv"));
        assert_eq!(cfg.output_dir, dir.path().join("out"));
        let day = NaiveDate::from_ymd_opt(2025, 12, 22).unwrap();
        assert_eq!(cfg.inputs.observations[&day], dir.path().join("obs/2025-12-22.csv"));
        assert_eq!(cfg.thresholds_min, vec![60, 90, 120]);
        assert_eq!(cfg.router_config().unwrap(), RouterConfig::default());
        assert_eq!(cfg.access, AccessParams::default());
    }

    #[test]
    fn rejects_bad_shares_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("study.toml");
        std::fs::write(&path, format!("{MINIMAL}\n[router]\nmorning_shares = [0.5, 0.4]\n")).unwrap();
        assert!(matches!(StudyConfig::load(&path), Err(ConfigError::Invalid(_))));
        std::fs::write(&path, format!("{MINIMAL}\n[router]\nspeed = 3\n")).unwrap();
        assert!(matches!(StudyConfig::load(&path), Err(ConfigError::Parse { .. })));
        std::fs::write(&path, MINIMAL.replace(r#"days = ["2025-12-22"]"#, "days = []")).unwrap();
        assert!(matches!(StudyConfig::load(&path), Err(ConfigError::Invalid(_))));
    }
}
