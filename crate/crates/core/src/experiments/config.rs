//! Experiment configuration: defaults, the flat key-value config file
//! format, and validation.
//!
//! Config files are plain text, one `key = value` per line, `#` comments;
//! keys match the `ExperimentConfig` field names exactly. List values are
//! comma-separated. CLI flags override file values.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Environment variable naming the default dataset directory.
pub const DATA_DIR_ENV: &str = "SEMCOM_DATA_DIR";

/// Parameter swept while everything else stays at its default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepAxis {
    #[default]
    None,
    Snr,
    ChannelUses,
    TrojanRatio,
    LabelPairs,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::Snr => "snr",
            SweepAxis::ChannelUses => "channel-uses",
            SweepAxis::TrojanRatio => "trojan-ratio",
            SweepAxis::LabelPairs => "label-pairs",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "none" => Ok(SweepAxis::None),
            "snr" => Ok(SweepAxis::Snr),
            "channel-uses" => Ok(SweepAxis::ChannelUses),
            "trojan-ratio" => Ok(SweepAxis::TrojanRatio),
            "label-pairs" => Ok(SweepAxis::LabelPairs),
            other => Err(Error::Config(format!(
                "unknown axis '{other}' (expected none, snr, channel-uses, trojan-ratio or label-pairs)"
            ))),
        }
    }

    /// Default sweep values for the axis.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Snr => vec![0.0, 3.0, 5.0, 8.0, 10.0],
            SweepAxis::ChannelUses => vec![25.0, 50.0, 75.0, 100.0],
            SweepAxis::TrojanRatio => vec![0.0, 0.125, 0.25, 0.365, 0.5],
            SweepAxis::None | SweepAxis::LabelPairs => Vec::new(),
        }
    }
}

/// Full harness configuration: the default condition, training settings,
/// data source, sweep declaration, and output policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub snr_db: f64,
    pub n_c: usize,
    pub trojan_ratio: f64,
    pub non_target: u8,
    pub target: u8,
    /// Master seeds; one full run per (condition, seed).
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub epochs_ae_per_round: usize,
    pub epochs_clf_per_round: usize,
    pub batch_size: usize,
    pub w: f64,
    pub data_dir: PathBuf,
    pub synthetic: bool,
    pub synthetic_per_class: usize,
    /// Stratified training-subset size; 0 trains on the full set.
    pub train_subset: usize,
    pub axis: SweepAxis,
    /// Explicit axis values; empty means the axis defaults.
    pub axis_values: Vec<f64>,
    /// Number of label pairs sampled for the grid; 0 runs all 90.
    pub label_pairs: usize,
    pub eval_repeats: u32,
    pub out_dir: PathBuf,
    /// Worker threads for sweep conditions; 0 uses the runtime default.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let data_dir = std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("data/mnist"));
        ExperimentConfig {
            snr_db: 5.0,
            n_c: 75,
            trojan_ratio: 0.25,
            non_target: 4,
            target: 9,
            seeds: vec![1],
            rounds: 5,
            epochs_ae_per_round: 10,
            epochs_clf_per_round: 5,
            batch_size: 64,
            w: 0.2,
            data_dir,
            synthetic: false,
            synthetic_per_class: 40,
            train_subset: 10_000,
            axis: SweepAxis::None,
            axis_values: Vec::new(),
            label_pairs: 0,
            eval_repeats: 1,
            out_dir: PathBuf::from("results"),
            jobs: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean '{value}' for key '{key}'"
        ))),
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "snr_db" => {
                self.snr_db = if value == "inf" {
                    f64::INFINITY
                } else {
                    parse_num(key, value)?
                }
            }
            "n_c" => self.n_c = parse_num(key, value)?,
            "trojan_ratio" => self.trojan_ratio = parse_num(key, value)?,
            "non_target" => self.non_target = parse_num(key, value)?,
            "target" => self.target = parse_num(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "rounds" => self.rounds = parse_num(key, value)?,
            "epochs_ae_per_round" => self.epochs_ae_per_round = parse_num(key, value)?,
            "epochs_clf_per_round" => self.epochs_clf_per_round = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "w" => self.w = parse_num(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "synthetic" => self.synthetic = parse_bool(key, value)?,
            "synthetic_per_class" => self.synthetic_per_class = parse_num(key, value)?,
            "train_subset" => self.train_subset = parse_num(key, value)?,
            "axis" => self.axis = SweepAxis::parse(value)?,
            "axis_values" => self.axis_values = parse_list(key, value)?,
            "label_pairs" => self.label_pairs = parse_num(key, value)?,
            "eval_repeats" => self.eval_repeats = parse_num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "jobs" => self.jobs = parse_num(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown config key '{other}'"
                )))
            }
        }
        Ok(())
    }

    /// Loads assignments from a config file on top of `self`.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{display}:{}: expected 'key = value', got '{raw}'",
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{display}:{}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// The sweep values actually used: explicit ones, or the axis defaults.
    pub fn effective_axis_values(&self) -> Vec<f64> {
        if self.axis_values.is_empty() {
            self.axis.default_values()
        } else {
            self.axis_values.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.n_c == 0 {
            return Err(Error::Config("n_c must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.trojan_ratio) {
            return Err(Error::Config(format!(
                "trojan_ratio {} outside [0, 1]",
                self.trojan_ratio
            )));
        }
        if self.non_target > 9 || self.target > 9 {
            return Err(Error::Config("labels must be digits 0..=9".into()));
        }
        if self.non_target == self.target {
            return Err(Error::Config(
                "non_target and target labels must differ".into(),
            ));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::Config(format!("invalid snr_db {}", self.snr_db)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.eval_repeats == 0 {
            return Err(Error::Config("eval_repeats must be at least 1".into()));
        }
        if self.synthetic && self.synthetic_per_class == 0 {
            return Err(Error::Config(
                "synthetic_per_class must be positive in synthetic mode".into(),
            ));
        }
        match self.axis {
            SweepAxis::Snr => {
                for &v in &self.effective_axis_values() {
                    if v.is_nan() {
                        return Err(Error::Config("NaN snr axis value".into()));
                    }
                }
            }
            SweepAxis::ChannelUses => {
                for &v in &self.effective_axis_values() {
                    if v < 1.0 || v.fract() != 0.0 {
                        return Err(Error::Config(format!(
                            "channel-uses axis value {v} must be a positive integer"
                        )));
                    }
                }
            }
            SweepAxis::TrojanRatio => {
                for &v in &self.effective_axis_values() {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Config(format!(
                            "trojan-ratio axis value {v} outside [0, 1]"
                        )));
                    }
                }
            }
            SweepAxis::None | SweepAxis::LabelPairs => {}
        }
        Ok(())
    }
}
