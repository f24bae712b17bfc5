//! Experiment orchestration: paired clean/poisoned runs, parameter sweeps
//! over SNR, channel uses and Trojan ratio, the label-pair grid, and CSV
//! emission.
//!
//! Seeding policy: every run is driven by one master seed. Data
//! subsampling, parameter init, poison selection, training noise and each
//! evaluation pass draw from independent labeled substreams derived from
//! it, so a source of randomness can be varied in isolation and the whole
//! run reproduces bitwise from `(config, seed)`. Paired clean/poisoned
//! runs share the data subset and init stream, which keeps their
//! comparison matched.
//!
//! Sweep conditions are independent jobs executed on a bounded worker
//! pool; results merge in declaration order regardless of completion
//! order, so parallel and serial execution emit identical CSV bytes.

mod config;
mod output;

pub use config::{ExperimentConfig, SweepAxis, DATA_DIR_ENV};
pub use output::{write_grid_outputs, write_sweep_outputs, GridFiles, SweepFiles};

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::backdoor::{build_poisoned_testset, default_trigger, poison_dataset, PoisonConfig};
use crate::channel::{ChannelConfig, NoiseSource};
use crate::data::{load_idx, subsample, synthetic_fixture, Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::metrics::{
    eval_attack_success, eval_clean_accuracy, eval_no_attack, eval_reconstruction, ConditionDesc,
    Counted, MetricsReport,
};
use crate::pipeline::{train_pipeline, TrainConfig, TrainingState};
use crate::seed::derive_seed;

/// The expected MNIST file names inside the data directory.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// One point in parameter space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition {
    pub snr_db: f64,
    pub n_c: usize,
    pub trojan_ratio: f64,
    pub non_target: u8,
    pub target: u8,
}

impl Condition {
    pub fn from_defaults(cfg: &ExperimentConfig) -> Self {
        Condition {
            snr_db: cfg.snr_db,
            n_c: cfg.n_c,
            trojan_ratio: cfg.trojan_ratio,
            non_target: cfg.non_target,
            target: cfg.target,
        }
    }

    fn desc(&self, seed: u64) -> ConditionDesc {
        ConditionDesc {
            snr_db: self.snr_db,
            n_c: self.n_c,
            trojan_ratio: self.trojan_ratio,
            non_target: self.non_target,
            target: self.target,
            seed,
        }
    }
}

/// Train and test sets as loaded from disk (or synthesized), before any
/// per-run subsampling.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Loads MNIST IDX files from the configured directory, or builds the
/// synthetic fixture pair in synthetic mode.
pub fn load_source_data(cfg: &ExperimentConfig) -> Result<LoadedData> {
    if cfg.synthetic {
        let test_per_class = (cfg.synthetic_per_class / 4).max(2);
        return Ok(LoadedData {
            train: synthetic_fixture(cfg.synthetic_per_class, 1_000_003),
            test: retag(synthetic_fixture(test_per_class, 2_000_003), SplitTag::Test)?,
        });
    }
    let missing: Vec<String> = MNIST_FILES
        .iter()
        .filter(|name| !cfg.data_dir.join(name).is_file())
        .map(|name| cfg.data_dir.join(name).display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "MNIST files not found: {} (set {DATA_DIR_ENV} or --data-dir to a directory holding \
             the uncompressed IDX files, or pass --synthetic)",
            missing.join(", ")
        )));
    }
    Ok(LoadedData {
        train: load_idx(
            &cfg.data_dir.join(MNIST_FILES[0]),
            &cfg.data_dir.join(MNIST_FILES[1]),
            SplitTag::Train,
        )?,
        test: load_idx(
            &cfg.data_dir.join(MNIST_FILES[2]),
            &cfg.data_dir.join(MNIST_FILES[3]),
            SplitTag::Test,
        )?,
    })
}

fn retag(data: Dataset, split: SplitTag) -> Result<Dataset> {
    Dataset::new(data.features().clone(), data.labels().to_vec(), split)
}

/// The per-run training subset: the desk-scale stratified subsample, or
/// the full set when `train_subset` is 0. Shared by both twins of a run.
pub fn training_subset(cfg: &ExperimentConfig, data: &LoadedData, seed: u64) -> Result<Dataset> {
    if cfg.train_subset == 0 || cfg.train_subset >= data.train.len() {
        Ok(data.train.clone())
    } else {
        subsample(&data.train, cfg.train_subset, true, derive_seed(seed, "subsample", 0))
    }
}

fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        rounds: cfg.rounds,
        epochs_ae_per_round: cfg.epochs_ae_per_round,
        epochs_clf_per_round: cfg.epochs_clf_per_round,
        batch_size: cfg.batch_size,
        w: cfg.w,
        seed: derive_seed(seed, "train", 0),
    }
}

fn poison_config(cond: &Condition, seed: u64) -> Result<PoisonConfig> {
    PoisonConfig::new(
        default_trigger(),
        cond.trojan_ratio,
        cond.non_target,
        cond.target,
        derive_seed(seed, "poison", 0),
    )
}

/// Trains the clean twin of a run (no poisoning).
pub fn train_clean_twin(
    cfg: &ExperimentConfig,
    cond: &Condition,
    seed: u64,
    subset: &Dataset,
) -> Result<TrainingState> {
    let channel = ChannelConfig::new(cond.snr_db, cond.n_c)?;
    train_pipeline(subset, &train_config(cfg, seed), channel)
}

/// Both reports of one run plus its wall time.
#[derive(Debug, Clone)]
pub struct ConditionOutcome {
    pub condition: Condition,
    pub seed: u64,
    /// Metrics of the poisoned pipeline (includes the twin's no-attack
    /// accuracy for side-by-side reading).
    pub attack: MetricsReport,
    /// Metrics of the clean twin.
    pub clean: MetricsReport,
    pub wall_time_s: f64,
}

/// Trains one poisoned pipeline and one clean pipeline on the same data
/// subset and init stream, then evaluates all measures. The no-attack
/// accuracy always comes from the clean twin.
pub fn run_condition(
    cfg: &ExperimentConfig,
    cond: &Condition,
    seed: u64,
    data: &LoadedData,
) -> Result<ConditionOutcome> {
    let subset = training_subset(cfg, data, seed)?;
    let clean_state = train_clean_twin(cfg, cond, seed, &subset)?;
    run_condition_with_clean(cfg, cond, seed, data, &subset, &clean_state)
}

/// As [`run_condition`], with the clean twin supplied by the caller.
/// Sweeps reuse one clean twin across conditions that share
/// `(snr_db, n_c, seed)`, which is exact: the clean twin never sees the
/// poisoning parameters.
pub fn run_condition_with_clean(
    cfg: &ExperimentConfig,
    cond: &Condition,
    seed: u64,
    data: &LoadedData,
    subset: &Dataset,
    clean_state: &TrainingState,
) -> Result<ConditionOutcome> {
    let start = Instant::now();
    let poison = poison_config(cond, seed)?;

    // A zero Trojan ratio poisons nothing: the attack twin's training
    // inputs and streams are identical to the clean twin's, so the models
    // are identical and retraining is skipped.
    let attack_state_owned;
    let attack_state = if cond.trojan_ratio == 0.0 {
        clean_state
    } else {
        let poisoned_train = poison_dataset(subset, &poison)?;
        let channel = ChannelConfig::new(cond.snr_db, cond.n_c)?;
        attack_state_owned = train_pipeline(poisoned_train.data(), &train_config(cfg, seed), channel)?;
        &attack_state_owned
    };

    let poisoned_test = build_poisoned_testset(&data.test, &poison)?;
    let repeats = cfg.eval_repeats;

    let attack_model = &attack_state.model;
    let clean_model = &clean_state.model;
    let p_a = eval_attack_success(
        attack_model,
        &poisoned_test,
        &mut NoiseSource::derived(seed, "eval-attack", 0),
        repeats,
    )?;
    let clean_acc = eval_clean_accuracy(
        attack_model,
        &data.test,
        cond.non_target,
        &mut NoiseSource::derived(seed, "eval-clean", 0),
        repeats,
    )?;
    let (recon_clean, recon_poisoned) = eval_reconstruction(
        attack_model,
        &data.test,
        &poisoned_test,
        &mut NoiseSource::derived(seed, "eval-recon", 0),
        repeats,
    )?;
    let (p_na, na_confusion) = eval_no_attack(
        clean_model,
        &data.test,
        &mut NoiseSource::derived(seed, "eval-noattack", 0),
        repeats,
    )?;
    let (recon_clean_na, _) = eval_reconstruction(
        clean_model,
        &data.test,
        &poisoned_test,
        &mut NoiseSource::derived(seed, "eval-recon-noattack", 0),
        repeats,
    )?;

    let attack = MetricsReport {
        condition: cond.desc(seed),
        attack_success: p_a,
        clean_non_target_acc: clean_acc.non_target,
        clean_overall_acc: clean_acc.overall,
        no_attack_acc: p_na,
        recon_mse_clean: Some(recon_clean),
        recon_mse_poisoned: recon_poisoned,
        recon_mse_clean_no_attack: Some(recon_clean_na),
        confusion: clean_acc.confusion,
        eval_repeats: repeats,
    };
    let clean_cond = Condition {
        trojan_ratio: 0.0,
        ..*cond
    };
    let clean = MetricsReport {
        condition: clean_cond.desc(seed),
        attack_success: Counted::undefined(),
        clean_non_target_acc: na_confusion.per_label(cond.non_target),
        clean_overall_acc: p_na,
        no_attack_acc: p_na,
        recon_mse_clean: Some(recon_clean_na),
        recon_mse_poisoned: None,
        recon_mse_clean_no_attack: Some(recon_clean_na),
        confusion: na_confusion,
        eval_repeats: repeats,
    };
    Ok(ConditionOutcome {
        condition: *cond,
        seed,
        attack,
        clean,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// One sweep row: a finished run or a recorded failure. The sweep always
/// covers the declared axis exactly; failures do not abort it.
#[derive(Debug, Clone)]
pub enum SweepRow {
    Done(Box<ConditionOutcome>),
    Failed {
        condition: Condition,
        seed: u64,
        error: String,
    },
}

impl SweepRow {
    pub fn condition(&self) -> &Condition {
        match self {
            SweepRow::Done(o) => &o.condition,
            SweepRow::Failed { condition, .. } => condition,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            SweepRow::Done(o) => o.seed,
            SweepRow::Failed { seed, .. } => *seed,
        }
    }

    pub fn outcome(&self) -> Option<&ConditionOutcome> {
        match self {
            SweepRow::Done(o) => Some(o),
            SweepRow::Failed { .. } => None,
        }
    }
}

/// Results of a one-axis sweep, in declaration order.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn failures(&self) -> Vec<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| matches!(r, SweepRow::Failed { .. }))
            .collect()
    }
}

fn condition_for_axis_value(cfg: &ExperimentConfig, axis: SweepAxis, value: f64) -> Condition {
    let mut cond = Condition::from_defaults(cfg);
    match axis {
        SweepAxis::Snr => cond.snr_db = value,
        SweepAxis::ChannelUses => cond.n_c = value as usize,
        SweepAxis::TrojanRatio => cond.trojan_ratio = value,
        SweepAxis::None | SweepAxis::LabelPairs => {}
    }
    cond
}

fn run_in_pool<T: Send>(jobs: usize, op: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        Ok(op())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(pool.install(op))
    }
}

/// Sweeps the declared axis, all other parameters at their defaults, one
/// run per (axis value, seed). Conditions execute as independent parallel
/// jobs; a failed condition is recorded and the sweep continues.
pub fn run_sweep(cfg: &ExperimentConfig, data: &LoadedData) -> Result<SweepResult> {
    cfg.validate()?;
    if cfg.axis == SweepAxis::LabelPairs {
        return Err(Error::Config(
            "label-pairs sweeps are produced by the label grid".into(),
        ));
    }
    let values = if cfg.axis == SweepAxis::None {
        vec![f64::NAN] // single run at the defaults; value is unused
    } else {
        cfg.effective_axis_values()
    };
    if values.is_empty() {
        return Err(Error::Config("sweep axis has no values".into()));
    }

    let jobs: Vec<(Condition, u64)> = values
        .iter()
        .flat_map(|&v| {
            let cond = condition_for_axis_value(cfg, cfg.axis, v);
            cfg.seeds.iter().map(move |&s| (cond, s))
        })
        .collect();

    // Per-seed training subsets and per-(snr, n_c, seed) clean twins are
    // shared across conditions; both are exact reuses, not approximations.
    let rows = run_in_pool(cfg.jobs, || -> Result<Vec<SweepRow>> {
        let mut subsets: HashMap<u64, Arc<Dataset>> = HashMap::new();
        for &seed in &cfg.seeds {
            subsets.insert(seed, Arc::new(training_subset(cfg, data, seed)?));
        }
        let mut clean_keys: Vec<(u64, usize, u64)> = jobs
            .iter()
            .map(|(c, s)| (c.snr_db.to_bits(), c.n_c, *s))
            .collect();
        clean_keys.sort_unstable();
        clean_keys.dedup();
        let clean_twins: HashMap<(u64, usize, u64), Arc<Result<TrainingState>>> = clean_keys
            .into_par_iter()
            .map(|key| {
                let (snr_bits, n_c, seed) = key;
                let cond = Condition {
                    snr_db: f64::from_bits(snr_bits),
                    n_c,
                    ..Condition::from_defaults(cfg)
                };
                let state = train_clean_twin(cfg, &cond, seed, &subsets[&seed]);
                (key, Arc::new(state))
            })
            .collect();

        Ok(jobs
            .par_iter()
            .map(|(cond, seed)| {
                let key = (cond.snr_db.to_bits(), cond.n_c, *seed);
                let clean = match clean_twins[&key].as_ref() {
                    Ok(state) => state,
                    Err(e) => {
                        return SweepRow::Failed {
                            condition: *cond,
                            seed: *seed,
                            error: format!("clean twin: {e}"),
                        }
                    }
                };
                match run_condition_with_clean(cfg, cond, *seed, data, &subsets[seed], clean) {
                    Ok(outcome) => SweepRow::Done(Box::new(outcome)),
                    Err(e) => SweepRow::Failed {
                        condition: *cond,
                        seed: *seed,
                        error: e.to_string(),
                    },
                }
            })
            .collect())
    })??;

    Ok(SweepResult {
        axis: cfg.axis,
        rows,
    })
}

/// One label-grid cell: attack success for an ordered (non-target, target)
/// pair at otherwise default parameters.
#[derive(Debug, Clone)]
pub struct GridEntry {
    pub non_target: u8,
    pub target: u8,
    pub seed: u64,
    pub attack_success: Counted,
    pub error: Option<String>,
}

/// Attack success across label pairs: per-pair counts, the 10x10 value
/// matrix (diagonal undefined), histogram counts and summary statistics.
#[derive(Debug, Clone)]
pub struct LabelGridResult {
    pub entries: Vec<GridEntry>,
    pub matrix: [[Option<f64>; 10]; 10],
    /// `(bin_lo, bin_hi, count)` over [0, 1].
    pub histogram: Vec<(f64, f64, usize)>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
}

pub const GRID_HISTOGRAM_BINS: usize = 20;

/// All 90 ordered label pairs, or a seeded subsample of `count` of them.
pub fn grid_pairs(count: usize, seed: u64) -> Vec<(u8, u8)> {
    let mut pairs: Vec<(u8, u8)> = (0..10u8)
        .flat_map(|nt| (0..10u8).filter(move |&t| t != nt).map(move |t| (nt, t)))
        .collect();
    if count > 0 && count < pairs.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "grid-pairs", 0));
        pairs.shuffle(&mut rng);
        pairs.truncate(count);
        pairs.sort_unstable();
    }
    pairs
}

/// Evaluates attack success for every selected label pair, defaults
/// otherwise. Only the poisoned pipeline is trained per pair; the
/// no-attack twin plays no part in attack success.
pub fn run_label_grid(cfg: &ExperimentConfig, data: &LoadedData) -> Result<LabelGridResult> {
    cfg.validate()?;
    let pairs = grid_pairs(cfg.label_pairs, cfg.seeds[0]);
    let jobs: Vec<((u8, u8), u64)> = pairs
        .iter()
        .flat_map(|&p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();

    let entries = run_in_pool(cfg.jobs, || -> Result<Vec<GridEntry>> {
        let mut subsets: HashMap<u64, Arc<Dataset>> = HashMap::new();
        for &seed in &cfg.seeds {
            subsets.insert(seed, Arc::new(training_subset(cfg, data, seed)?));
        }
        Ok(jobs
            .par_iter()
            .map(|&((non_target, target), seed)| {
                let cond = Condition {
                    non_target,
                    target,
                    ..Condition::from_defaults(cfg)
                };
                let result = (|| -> Result<Counted> {
                    let poison = poison_config(&cond, seed)?;
                    let poisoned_train = poison_dataset(&subsets[&seed], &poison)?;
                    let channel = ChannelConfig::new(cond.snr_db, cond.n_c)?;
                    let state =
                        train_pipeline(poisoned_train.data(), &train_config(cfg, seed), channel)?;
                    let poisoned_test = build_poisoned_testset(&data.test, &poison)?;
                    eval_attack_success(
                        &state.model,
                        &poisoned_test,
                        &mut NoiseSource::derived(seed, "eval-attack", 0),
                        cfg.eval_repeats,
                    )
                })();
                match result {
                    Ok(counted) => GridEntry {
                        non_target,
                        target,
                        seed,
                        attack_success: counted,
                        error: None,
                    },
                    Err(e) => GridEntry {
                        non_target,
                        target,
                        seed,
                        attack_success: Counted::undefined(),
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect())
    })??;

    // Pool counts across seeds per cell.
    let mut cell_counts: [[Counted; 10]; 10] = [[Counted::default(); 10]; 10];
    for entry in &entries {
        let cell = &mut cell_counts[usize::from(entry.non_target)][usize::from(entry.target)];
        cell.numerator += entry.attack_success.numerator;
        cell.denominator += entry.attack_success.denominator;
    }
    let mut matrix = [[None; 10]; 10];
    let mut values = Vec::new();
    for nt in 0..10 {
        for t in 0..10 {
            matrix[nt][t] = cell_counts[nt][t].value();
            if let Some(v) = matrix[nt][t] {
                values.push(v);
            }
        }
    }
    let mut histogram: Vec<(f64, f64, usize)> = (0..GRID_HISTOGRAM_BINS)
        .map(|b| {
            let width = 1.0 / GRID_HISTOGRAM_BINS as f64;
            (b as f64 * width, (b + 1) as f64 * width, 0)
        })
        .collect();
    for &v in &values {
        let bin = ((v * GRID_HISTOGRAM_BINS as f64) as usize).min(GRID_HISTOGRAM_BINS - 1);
        histogram[bin].2 += 1;
    }
    let (min, max, mean) = if values.is_empty() {
        (None, None, None)
    } else {
        (
            values.iter().cloned().reduce(f64::min),
            values.iter().cloned().reduce(f64::max),
            Some(values.iter().sum::<f64>() / values.len() as f64),
        )
    };
    Ok(LabelGridResult {
        entries,
        matrix,
        histogram,
        min,
        max,
        mean,
    })
}

/// Output paths produced by a sweep or grid run.
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub out_dir: PathBuf,
}
